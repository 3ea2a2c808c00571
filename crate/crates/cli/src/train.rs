use std::path::PathBuf;

use anyhow::Context;
use attnas_core::model::save_checkpoint;
use attnas_core::train::{accuracy, train_model, TrainConfig};
use attnas_core::{ArchitectureSpec, Transformer};
use log::info;
use serde::Serialize;
use serde_json::json;

use crate::run_dir;
use crate::Failure;

pub struct Args {
    pub spec: PathBuf,
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub force: bool,
}

#[derive(Serialize)]
struct ResultRow {
    run: usize,
    seed: u64,
    val_acc: f64,
    test_acc: f64,
}

#[derive(Serialize)]
struct CurveRow {
    run: usize,
    step: u64,
    loss: f64,
    val_acc: f64,
}

fn csv_text<T: Serialize>(rows: &[T]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn run(args: &Args) -> Result<(), Failure> {
    let spec = ArchitectureSpec::load(&args.spec).with_context(|| format!("reading {}", args.spec.display())).map_err(Failure::usage)?;
    let (cfg, dir) = crate::prepare(&args.config, args.out.as_deref(), args.seed, args.force)?;
    let mc = cfg.model_config();
    // Check the spec against the model before generating data.
    Transformer::from_spec(&spec, &mc, cfg.seed).map_err(Failure::usage)?;
    dir.write(run_dir::SPEC_FILE, spec.to_json()).map_err(Failure::runtime)?;
    let mut log = dir.log().map_err(Failure::runtime)?;
    log.record(&json!({ "event": "start", "command": "train", "spec": spec.to_string(), "seed": cfg.seed, "version": run_dir::version() }))
        .map_err(Failure::runtime)?;
    let task = cfg.generate().map_err(Failure::runtime)?;

    let mut results = Vec::new();
    let mut curve = Vec::new();
    let mut best_val = f64::NEG_INFINITY;
    for run in 0..cfg.runs {
        let seed = cfg.seed + run as u64;
        let mut model = Transformer::from_spec(&spec, &mc, seed).map_err(Failure::runtime)?;
        let tc = TrainConfig { seed, ..cfg.train.clone() };
        let report = train_model(&mut model, &task, &tc).map_err(Failure::runtime)?;
        let test_acc = accuracy(&model, &task.test).map_err(Failure::runtime)?;
        info!("run {run} (seed {seed}): best validation {:.4} at step {}, test {test_acc:.4}", report.best_val, report.best_step);
        log.record(&json!({
            "event": "train", "run": run, "seed": seed, "best_step": report.best_step, "val_acc": report.best_val, "test_acc": test_acc,
        }))
        .map_err(Failure::runtime)?;
        curve.extend(report.curve.iter().map(|p| CurveRow { run, step: p.step, loss: p.loss, val_acc: p.val_acc }));
        if report.best_val > best_val {
            best_val = report.best_val;
            let meta = json!({ "run": run, "seed": seed, "val_acc": report.best_val, "test_acc": test_acc, "spec": spec.to_string() });
            save_checkpoint(&model, meta, &dir.path(run_dir::CHECKPOINT_FILE)).map_err(Failure::runtime)?;
        }
        results.push(ResultRow { run, seed, val_acc: report.best_val, test_acc });
    }
    dir.write(run_dir::RESULTS_FILE, csv_text(&results).map_err(Failure::runtime)?).map_err(Failure::runtime)?;
    dir.write(run_dir::CURVE_FILE, csv_text(&curve).map_err(Failure::runtime)?).map_err(Failure::runtime)?;
    let mean = results.iter().map(|r| r.test_acc).sum::<f64>() / results.len() as f64;
    log.record(&json!({ "event": "done", "runs": results.len(), "mean_test_acc": mean })).map_err(Failure::runtime)?;
    println!("mean test accuracy over {} run(s): {mean:.4}", results.len());
    Ok(())
}
