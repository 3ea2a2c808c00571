//! Output directories: audit files up front, refusal to clobber earlier runs.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use crate::config::RunConfig;

pub const CONFIG_FILE: &str = "config.toml";
pub const SEED_FILE: &str = "seed";
pub const VERSION_FILE: &str = "version";
pub const SPEC_FILE: &str = "spec.json";
pub const SCORES_FILE: &str = "scores.csv";
pub const LOG_FILE: &str = "log.jsonl";
pub const RESULTS_FILE: &str = "results.csv";
pub const CURVE_FILE: &str = "curve.csv";
pub const CHECKPOINT_FILE: &str = "best.ckpt";

/// `git describe`-style version of this build.
pub fn version() -> &'static str {
    env!("ATTNAS_VERSION")
}

/// A directory counts as a run once its seed file exists.
pub fn is_run_dir(dir: &Path) -> bool {
    dir.join(SEED_FILE).is_file() && dir.join(CONFIG_FILE).is_file()
}

pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates `root` and writes the audit files. An existing non-empty
    /// directory is refused unless `force` is set, and even then only when it
    /// holds an earlier run.
    pub fn create(root: &Path, cfg: &RunConfig, force: bool) -> anyhow::Result<Self> {
        if root.exists() {
            let empty = fs::read_dir(root).with_context(|| format!("reading {}", root.display()))?.next().is_none();
            if !empty {
                if !force {
                    bail!("{} already exists; pass --force to replace it", root.display());
                }
                if !is_run_dir(root) {
                    bail!("{} is not a run directory; refusing to replace it", root.display());
                }
                fs::remove_dir_all(root).with_context(|| format!("removing {}", root.display()))?;
            }
        }
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        let dir = Self { root: root.to_path_buf() };
        dir.write(CONFIG_FILE, cfg.to_toml())?;
        dir.write(SEED_FILE, format!("{}\n", cfg.seed))?;
        dir.write(VERSION_FILE, format!("{}\n", version()))?;
        Ok(dir)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
        let path = self.path(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }

    pub fn log(&self) -> anyhow::Result<Log> {
        let path = self.path(LOG_FILE);
        let file = fs::OpenOptions::new().create(true).append(true).open(&path).with_context(|| format!("opening {}", path.display()))?;
        Ok(Log { file })
    }
}

/// Line-delimited JSON records.
pub struct Log {
    file: fs::File,
}

impl Log {
    pub fn record(&mut self, value: &serde_json::Value) -> anyhow::Result<()> {
        writeln!(self.file, "{value}")?;
        Ok(())
    }
}
