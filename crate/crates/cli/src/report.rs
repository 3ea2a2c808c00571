//! Summaries of finished runs, rebuilt from their logs and CSV files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::run_dir::{self, is_run_dir};
use crate::{plot, Failure};

const REPORT_DIR: &str = "report";

#[derive(Debug, Serialize)]
pub struct Removal {
    pub step: u64,
    pub layer: u64,
    pub block: u64,
    pub kind: String,
    pub score: f64,
}

#[derive(Debug, Deserialize)]
pub struct ResultRow {
    pub run: usize,
    pub seed: u64,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Deserialize)]
pub struct CurveRow {
    pub run: usize,
    pub step: u64,
    pub val_acc: f64,
}

#[derive(Debug, Deserialize)]
pub struct ScoreRow {
    pub block: usize,
    pub kind: String,
    pub score: f64,
}

fn runs_in(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if is_run_dir(dir) {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut runs = Vec::new();
    if dir.is_dir() {
        for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
            let path = entry?.path();
            if is_run_dir(&path) {
                runs.push(path);
            }
        }
    }
    runs.sort();
    Ok(runs)
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    r.deserialize().collect::<Result<_, _>>().with_context(|| format!("parsing {}", path.display()))
}

fn read_log(path: &Path) -> anyhow::Result<Vec<Value>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

fn removal(record: &Value) -> Option<Removal> {
    Some(Removal {
        step: record["step"].as_u64()?,
        layer: record["layer"].as_u64()?,
        block: record["removed_block"].as_u64()?,
        kind: record["removed_kind"].as_str()?.to_string(),
        score: record["removed_score"].as_f64()?,
    })
}

pub fn run(dir: &Path, plots: bool) -> Result<(), Failure> {
    let runs = runs_in(dir).map_err(Failure::usage)?;
    if runs.is_empty() {
        return Err(Failure::usage(anyhow!("no runs found in {}", dir.display())));
    }
    for run in &runs {
        report_one(run, plots).with_context(|| format!("reporting on {}", run.display())).map_err(Failure::runtime)?;
    }
    Ok(())
}

fn report_one(run: &Path, plots: bool) -> anyhow::Result<()> {
    let log = read_log(&run.join(run_dir::LOG_FILE))?;
    let mut events: BTreeMap<String, usize> = BTreeMap::new();
    for r in &log {
        *events.entry(r["event"].as_str().unwrap_or("unknown").to_string()).or_default() += 1;
    }
    let removals: Vec<Removal> = log.iter().filter(|r| r["event"] == "prune").filter_map(removal).collect();
    let mut removed_by_kind: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &removals {
        *removed_by_kind.entry(&r.kind).or_default() += 1;
    }
    let scores: Vec<ScoreRow> = read_csv(&run.join(run_dir::SCORES_FILE))?;
    let results: Vec<ResultRow> = read_csv(&run.join(run_dir::RESULTS_FILE))?;
    let curve: Vec<CurveRow> = read_csv(&run.join(run_dir::CURVE_FILE))?;

    let out = run.join(REPORT_DIR);
    fs::create_dir_all(&out)?;
    let mut w = csv::Writer::from_path(out.join("removals.csv"))?;
    for r in &removals {
        w.serialize(r)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out.join("totals.csv"))?;
    w.write_record(["item", "count"])?;
    for (event, n) in &events {
        w.write_record([format!("event:{event}"), n.to_string()])?;
    }
    for (kind, n) in &removed_by_kind {
        w.write_record([format!("removed:{kind}"), n.to_string()])?;
    }
    w.flush()?;

    println!("run {}", run.display());
    if let Some(start) = log.iter().find(|r| r["event"] == "start") {
        let what = start["mode"].as_str().or(start["command"].as_str()).unwrap_or("?");
        println!("  {what} (seed {}, {})", start["seed"], start["version"].as_str().unwrap_or("unknown version"));
    }
    println!("  log records: {}", log.len());
    if !scores.is_empty() {
        println!("  scores:");
        let mut ranked: Vec<&ScoreRow> = scores.iter().collect();
        ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.kind.cmp(&b.kind)));
        for s in ranked {
            println!("    {:<16} {:+.4}", format!("{}#{}", s.kind, s.block), s.score);
        }
    }
    println!("  removals: {}", removals.len());
    for r in &removals {
        println!("    {:>3}. layer {} block {} {} ({:+.4})", r.step, r.layer, r.block, r.kind, r.score);
    }
    for (kind, n) in &removed_by_kind {
        println!("    removed {kind}: {n}");
    }
    if let Some(done) = log.iter().rev().find(|r| r["event"] == "done") {
        if let Some(spec) = done["spec"].as_str() {
            println!("  spec: {spec}");
        }
    }
    if !results.is_empty() {
        let mean = |f: fn(&ResultRow) -> f64| results.iter().map(f).sum::<f64>() / results.len() as f64;
        println!("  runs: {}, mean validation {:.4}, mean test {:.4}", results.len(), mean(|r| r.val_acc), mean(|r| r.test_acc));
        for r in &results {
            println!("    run {} (seed {}): validation {:.4}, test {:.4}", r.run, r.seed, r.val_acc, r.test_acc);
        }
    }

    if plots {
        if !scores.is_empty() {
            let bars: Vec<(String, f64)> = scores.iter().map(|s| (format!("{}#{}", s.kind, s.block), s.score)).collect();
            plot::bars(&out.join("scores.svg"), "Masked accuracy drop", &bars)?;
        }
        if !curve.is_empty() {
            let mut series: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
            for p in &curve {
                series.entry(p.run).or_default().push((p.step as f64, p.val_acc));
            }
            let named: Vec<(String, Vec<(f64, f64)>)> = series.into_iter().map(|(r, pts)| (format!("run {r}"), pts)).collect();
            plot::lines(&out.join("curve.svg"), "Validation accuracy", &named)?;
        }
        if !removals.is_empty() {
            let bars: Vec<(String, f64)> = removals.iter().map(|r| (format!("{}. {}", r.step, r.kind), r.score)).collect();
            plot::bars(&out.join("removals.svg"), "Score of each removed block", &bars)?;
        }
    }
    Ok(())
}
