use std::path::PathBuf;

use anyhow::Context;
use attnas_core::search::{self, PruneOutcome, ScoreTable};
use attnas_core::ArchitectureSpec;
use log::{info, warn};
use serde_json::json;

use crate::run_dir::{self, RunDir};
use crate::{Failure, Mode};

pub struct Args {
    pub mode: Mode,
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub seed: Option<u64>,
    pub force: bool,
}

pub fn run(args: &Args) -> Result<(), Failure> {
    if args.scores.is_some() && args.mode != Mode::Oneshot {
        return Err(Failure::usage(anyhow::anyhow!("--scores only applies to --mode oneshot")));
    }
    // Read supplied scores before touching the output directory.
    let supplied = match &args.scores {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(Failure::usage)?;
            Some(ScoreTable::from_csv(&text).with_context(|| format!("in {}", path.display())).map_err(Failure::usage)?)
        }
        None => None,
    };
    let (cfg, dir) = crate::prepare(&args.config, args.out.as_deref(), args.seed, args.force)?;
    let mut log = dir.log().map_err(Failure::runtime)?;
    log.record(&json!({ "event": "start", "command": "search", "mode": args.mode.name(), "seed": cfg.seed, "version": run_dir::version() }))
        .map_err(Failure::runtime)?;

    let mc = cfg.model_config();
    let sc = &cfg.search;
    let spec = match (args.mode, supplied) {
        (Mode::Oneshot, Some(table)) => {
            write_scores(&dir, &table)?;
            oneshot(&table, sc.heads, sc.oneshot_k)?
        }
        (Mode::Homo | Mode::Oneshot, _) => {
            let task = cfg.generate().map_err(Failure::runtime)?;
            info!("training a {}-kind supernet for {} steps", sc.kinds().len(), sc.pretrain_steps);
            let outcome = search::select_homogeneous(&task, &mc, sc).map_err(Failure::runtime)?;
            let Some(table) = outcome.table else {
                return Err(Failure::usage(anyhow::anyhow!("need at least two candidate kinds to score")));
            };
            write_scores(&dir, &table)?;
            log.record(&json!({ "event": "scores", "table": table })).map_err(Failure::runtime)?;
            if args.mode == Mode::Homo {
                let best = table.max_score().unwrap_or(0.0);
                if outcome.low_confidence {
                    warn!("low confidence: best score {best:.4} is below {}", sc.low_confidence_threshold);
                }
                log.record(&json!({ "event": "select", "kind": outcome.kind, "score": best, "low_confidence": outcome.low_confidence }))
                    .map_err(Failure::runtime)?;
                ArchitectureSpec::homogeneous(outcome.kind, sc.heads, mc.num_layers).map_err(Failure::usage)?
            } else {
                oneshot(&table, sc.heads, sc.oneshot_k)?
            }
        }
        (Mode::Prune | Mode::Layerwise, _) => {
            let task = cfg.generate().map_err(Failure::runtime)?;
            info!("{} search over {} kinds, {} pretraining steps", args.mode.name(), sc.kinds().len(), sc.pretrain_steps);
            let outcome = if args.mode == Mode::Prune {
                search::prune_search(&task, &mc, sc)
            } else {
                search::layerwise_prune_search(&task, &mc, sc)
            }
            .map_err(Failure::runtime)?;
            record_prune(&dir, &mut log, &outcome)?;
            outcome.spec
        }
    };
    info!("selected {spec}");
    dir.write(run_dir::SPEC_FILE, spec.to_json()).map_err(Failure::runtime)?;
    log.record(&json!({ "event": "done", "spec": spec.to_string() })).map_err(Failure::runtime)?;
    Ok(())
}

fn oneshot(table: &ScoreTable, heads: usize, k: usize) -> Result<ArchitectureSpec, Failure> {
    search::oneshot_top_k(table, heads, k).map_err(Failure::runtime)
}

fn write_scores(dir: &RunDir, table: &ScoreTable) -> Result<(), Failure> {
    dir.write(run_dir::SCORES_FILE, table.to_csv()).map_err(Failure::runtime)
}

/// The first scoring pass goes to the scores file; every removal is logged.
fn record_prune(dir: &RunDir, log: &mut run_dir::Log, outcome: &PruneOutcome) -> Result<(), Failure> {
    if let Some(first) = outcome.steps.first() {
        write_scores(dir, &first.scores)?;
    }
    for step in &outcome.steps {
        info!("step {}: removed {} block {} from layer {} (score {:.4})", step.step, step.removed_kind, step.removed_block, step.layer, step.removed_score);
        let mut record = serde_json::to_value(step).map_err(Failure::runtime)?;
        record["event"] = json!("prune");
        log.record(&record).map_err(Failure::runtime)?;
    }
    Ok(())
}
