#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn attnas(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attnas")).args(args).current_dir(cwd).env("RUST_LOG", "warn").output().expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

/// A small, learnable bytecls setup: a 2-symbol motif at position 0.
pub const TINY: &str = r#"
seed = 1

[task]
name = "bytecls"
max_seq_len = 16
train_size = 200
val_size = 60
test_size = 60

[task.bytecls]
motif_len = 2
alphabet = 6
fixed_position = 0

[model]
embed_dim = 8
head_dim = 4
ffn_hidden = 16
dropout = 0.0

[search]
heads = 2
candidates = ["dense", "local", "performer"]
pretrain_steps = 60
finetune_steps = 5
warmup = 10
base_lr = 0.1
batch_size = 16
num_layers = 2
sample_size = 2

[train]
steps = 60
warmup = 10
base_lr = 0.1
batch_size = 16
eval_every = 20
"#;

pub fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}
