//! Monte-Carlo experiment driver and report writers.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::align::AlignmentCurve;
use crate::chain::{chain_notation, evaluate_chain, mean_std, ChainResult, ChainSpec, Method, SearchRow};
use crate::dataset::{class_name, write_atomic, Label};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, stream};
use crate::structfam::ChainTemplate;

pub const SEM_BATCH: usize = 25;

/// Header placed on every chain-search report.
pub const SEARCH_CAVEAT: &str = "Chains below were ranked with the final target's true labels. \
The ranking shows what a well-chosen chain can reach; it cannot be reproduced on a target whose labels are unknown.";

fn default_batch() -> usize {
    SEM_BATCH
}

fn default_min() -> usize {
    SEM_BATCH
}

/// How many realisations to run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Stopping {
    Fixed { n_realisations: usize },
    /// Run batches until std/√n drops below `sem_target`, checking only after
    /// whole batches and only once at least `min` realisations are done.
    Sem {
        sem_target: f64,
        #[serde(default = "default_min")]
        min: usize,
        max: usize,
        #[serde(default = "default_batch")]
        batch: usize,
    },
}

impl Stopping {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Stopping::Fixed { n_realisations } if n_realisations == 0 => {
                Err(Error::Config("n_realisations must be at least 1".into()))
            }
            Stopping::Sem { sem_target, min, max, batch } => {
                if !(sem_target > 0.0) || min < 2 || max < min || batch == 0 {
                    Err(Error::Config(format!(
                        "SEM stopping needs sem_target > 0, max ≥ min ≥ 2 and batch ≥ 1 \
                         (got {sem_target}, min {min}, max {max}, batch {batch})"
                    )))
                } else {
                    Ok(())
                }
            }
            Stopping::Fixed { .. } => Ok(()),
        }
    }
}

pub fn sem(values: &[f64]) -> f64 {
    let (_, std) = mean_std(values);
    std / (values.len() as f64).sqrt()
}

/// Pulls items from `next(first, count)` until the stopping rule is met.
/// Returns the items and whether the rule converged (always true for a fixed
/// count).
pub fn run_until<T>(
    stop: &Stopping,
    mut next: impl FnMut(u64, u64) -> Result<Vec<T>>,
    accuracy: impl Fn(&T) -> f64,
) -> Result<(Vec<T>, bool)> {
    stop.validate()?;
    match *stop {
        Stopping::Fixed { n_realisations } => Ok((next(0, n_realisations as u64)?, true)),
        Stopping::Sem { sem_target, min, max, batch } => {
            let mut items: Vec<T> = Vec::new();
            let mut accs = Vec::new();
            loop {
                let count = batch.min(max - items.len());
                let fresh = next(items.len() as u64, count as u64)?;
                accs.extend(fresh.iter().map(&accuracy));
                items.extend(fresh);
                if items.len() >= min && sem(&accs) < sem_target {
                    return Ok((items, true));
                }
                if items.len() >= max {
                    return Ok((items, false));
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub chains: Vec<ChainSpec>,
    pub stopping: Stopping,
    pub master_seed: u64,
    /// Feature channels to run; each is transferred independently.
    pub channels: Vec<usize>,
}

/// All realisations of one chain on one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub spec: ChainSpec,
    pub channel: usize,
    pub results: Vec<ChainResult>,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub converged: bool,
}

impl ExperimentRow {
    /// Cosine curves of the first realisation.
    pub fn curve(&self) -> AlignmentCurve {
        let hops = &self.results[0].hops;
        AlignmentCurve {
            to_target: hops.iter().map(|h| h.cosine_to_target).collect(),
            to_origin: hops.iter().map(|h| h.cosine_to_origin).collect(),
        }
    }
}

/// Runs every configured chain on every channel. Noise and masks come from a
/// seed derived from the master seed, so they differ from those used by a
/// chain search on the same master seed.
pub fn run_experiment(template: &ChainTemplate, cfg: &ExperimentConfig) -> Result<Vec<ExperimentRow>> {
    cfg.stopping.validate()?;
    let seed = derive_seed(cfg.master_seed, &[stream::EVALUATION]);
    let mut rows = Vec::new();
    for &channel in &cfg.channels {
        for spec in &cfg.chains {
            let (results, converged) = run_until(
                &cfg.stopping,
                |first, count| evaluate_chain(template, spec, channel, seed, first, count),
                |r| r.final_accuracy,
            )?;
            let accs: Vec<f64> = results.iter().map(|r| r.final_accuracy).collect();
            let (accuracy_mean, accuracy_std) = mean_std(&accs);
            rows.push(ExperimentRow {
                spec: spec.clone(),
                channel,
                results,
                accuracy_mean,
                accuracy_std,
                converged,
            });
        }
    }
    Ok(rows)
}

/// Element-wise mean confusion matrix with row totals and recall.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfusionReport {
    pub classes: Vec<Label>,
    pub mean: Vec<Vec<f64>>,
    pub row_totals: Vec<f64>,
    pub recall: Vec<f64>,
}

pub fn confusion_report(results: &[ChainResult]) -> Result<ConfusionReport> {
    let first = results
        .first()
        .ok_or_else(|| Error::Input("no results to aggregate".into()))?;
    if results.iter().any(|r| r.classes != first.classes) {
        return Err(Error::ClassSet("results disagree on the class set".into()));
    }
    let k = first.classes.len();
    let n = results.len() as f64;
    let mut mean = vec![vec![0.0; k]; k];
    for r in results {
        for i in 0..k {
            for j in 0..k {
                mean[i][j] += r.confusion[i][j] as f64;
            }
        }
    }
    mean.iter_mut().flatten().for_each(|v| *v /= n);
    let row_totals: Vec<f64> = mean.iter().map(|row| row.iter().sum()).collect();
    let recall = (0..k)
        .map(|i| if row_totals[i] > 0.0 { mean[i][i] / row_totals[i] } else { 0.0 })
        .collect();
    Ok(ConfusionReport {
        classes: first.classes.clone(),
        mean,
        row_totals,
        recall,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub k: usize,
    pub method: Method,
    pub acc_mean_pct: f64,
    pub acc_std_pct: f64,
    pub chain: Vec<usize>,
    pub n_real: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn from_experiment(rows: &[ExperimentRow]) -> Self {
        Self {
            rows: rows
                .iter()
                .map(|r| SummaryRow {
                    k: r.spec.n_intermediates(),
                    method: r.spec.method,
                    acc_mean_pct: 100.0 * r.accuracy_mean,
                    acc_std_pct: 100.0 * r.accuracy_std,
                    chain: r.spec.structure_indices.clone(),
                    n_real: r.results.len(),
                })
                .collect(),
        }
    }

    pub fn from_search(rows: &[SearchRow]) -> Self {
        Self {
            rows: rows
                .iter()
                .map(|r| SummaryRow {
                    k: r.k,
                    method: r.method,
                    acc_mean_pct: 100.0 * r.accuracy_mean,
                    acc_std_pct: 100.0 * r.accuracy_std,
                    chain: r.chain.clone(),
                    n_real: r.n_realisations,
                })
                .collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,method,acc_mean_pct,acc_std_pct,chain,n_real\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:.2},{:.2},{},{}",
                r.k,
                r.method.name(),
                r.acc_mean_pct,
                r.acc_std_pct,
                chain_notation(&r.chain),
                r.n_real
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let header = ["K", "method", "accuracy (%)", "chain", "runs"];
        let cells: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.k.to_string(),
                    r.method.name().to_string(),
                    format!("{:.2} ± {:.2}", r.acc_mean_pct, r.acc_std_pct),
                    chain_notation(&r.chain),
                    r.n_real.to_string(),
                ]
            })
            .collect();
        let mut widths = header.map(|h| h.chars().count());
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cols: Vec<&str>| {
            let padded: Vec<String> = cols
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            padded.join("  ").trim_end().to_string() + "\n"
        };
        let mut out = line(header.to_vec());
        out += &line(widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().iter().map(String::as_str).collect());
        for row in &cells {
            out += &line(row.iter().map(String::as_str).collect());
        }
        out
    }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

pub fn curve_csv(curve: &AlignmentCurve) -> String {
    let mut out = String::from("hop,cos_src_tgt,cos_src_origin\n");
    for (h, (a, b)) in curve.to_target.iter().zip(&curve.to_origin).enumerate() {
        let _ = writeln!(out, "{},{:.6},{:.6}", h + 1, a, b);
    }
    out
}

/// JSON report for one chain: spec, hop records of the first realisation,
/// accuracy statistics and the mean confusion matrix.
pub fn chain_report(row: &ExperimentRow) -> Result<serde_json::Value> {
    let conf = confusion_report(&row.results)?;
    Ok(json!({
        "spec": row.spec,
        "channel": row.channel,
        "per_hop": row.results[0].hops,
        "accuracy_mean": round6(row.accuracy_mean),
        "accuracy_std": round6(row.accuracy_std),
        "n_realisations": row.results.len(),
        "converged": row.converged,
        "classes": conf.classes.iter().map(|&c| class_name(c)).collect::<Vec<_>>(),
        "confusion_mean": conf.mean.iter().map(|r| r.iter().map(|&v| round6(v)).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "recall": conf.recall.iter().map(|&v| round6(v)).collect::<Vec<_>>(),
    }))
}

fn file_tag(row: &ExperimentRow) -> String {
    let idx: Vec<String> = row.spec.structure_indices.iter().map(|i| i.to_string()).collect();
    format!("{}_{}", row.spec.method.name(), idx.join("-"))
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Data(format!("cannot write {}: {e}", path.display()))
}

pub fn write_file(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes()).map_err(|e| io_err(path, e))
}

pub fn to_json(value: &impl Serialize) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Error::Data(e.to_string()))
}

/// Writes the summary table, one JSON report per chain and one curve CSV per
/// chain into `dir`. Returns the written paths relative to `dir`.
pub fn write_experiment(dir: &Path, rows: &[ExperimentRow]) -> Result<Vec<String>> {
    let mut written = Vec::new();
    let table = SummaryTable::from_experiment(rows);
    for (name, text) in [("summary.csv", table.to_csv()), ("summary.txt", table.to_text())] {
        write_file(&dir.join(name), &text)?;
        written.push(name.to_string());
    }
    for row in rows {
        let tag = file_tag(row);
        let report = format!("report_{tag}.json");
        write_file(&dir.join(&report), &to_json(&chain_report(row)?)?)?;
        let curve = format!("curve_{tag}.csv");
        write_file(&dir.join(&curve), &curve_csv(&row.curve()))?;
        written.push(report);
        written.push(curve);
    }
    Ok(written)
}
