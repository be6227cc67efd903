use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::eval::evaluate;
use super::metrics::Metrics;
use super::train::train;
use crate::data::Example;
use crate::error::Result;
use crate::model::Variant;

#[derive(Clone, Debug, PartialEq)]
pub struct AblationSpec {
    pub name: String,
    pub config: RunConfig,
}

/// One relation-module row per head count, then the three baselines at the
/// base config's head count.
pub fn ablation_specs(base: &RunConfig, head_counts: &[usize]) -> Vec<AblationSpec> {
    let mut specs: Vec<AblationSpec> = head_counts
        .iter()
        .map(|&n| {
            let mut config = base.clone();
            config.model.variant = Variant::RelationModule;
            config.model.context_heads = n;
            AblationSpec {
                name: format!("heads_{n}"),
                config,
            }
        })
        .collect();
    for variant in [Variant::BaselineFcNa, Variant::PlausibleOnly, Variant::NoAugmentation] {
        let mut config = base.clone();
        config.model.variant = variant;
        specs.push(AblationSpec {
            name: variant.name().to_string(),
            config,
        });
    }
    specs
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub seed: u64,
    pub best_epoch: usize,
    pub metrics: Metrics,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub variant: Variant,
    pub context_heads: usize,
    pub parameters: usize,
    pub runs: Vec<AblationRun>,
    pub mean: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    #[serde(with = "super::float")]
    pub tau: f64,
    pub rows: Vec<AblationRow>,
}

/// Field-wise mean; counts are taken from the first entry.
pub fn mean_metrics(all: &[Metrics]) -> Metrics {
    let n = all.len() as f64;
    let avg = |f: fn(&Metrics) -> f64| all.iter().map(f).sum::<f64>() / n;
    let first = all.first().copied();
    Metrics {
        em: avg(|m| m.em),
        f1: avg(|m| m.f1),
        na_accuracy: avg(|m| m.na_accuracy),
        answerable_accuracy: avg(|m| m.answerable_accuracy),
        count: first.map_or(0, |m| m.count),
        answerable: first.map_or(0, |m| m.answerable),
        unanswerable: first.map_or(0, |m| m.unanswerable),
    }
}

/// Trains every spec under every seed, scores the best-dev checkpoint on
/// `dev`, and saves checkpoints under `out_dir` when given.
pub fn run_specs(
    specs: &[AblationSpec],
    seeds: &[u64],
    train_set: &[Example],
    dev_set: &[Example],
    out_dir: Option<&Path>,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut runs = Vec::with_capacity(seeds.len());
        let mut parameters = 0;
        for &seed in seeds {
            let mut config = spec.config.clone();
            config.seed = seed;
            log::info!("ablation {} seed {seed}", spec.name);
            let ck = train(&config, train_set, dev_set, |_| {})?;
            parameters = ck.params.iter().map(|p| p.tensor.len()).sum();
            let metrics = evaluate(&ck, dev_set, config.tau)?;
            let checkpoint = match out_dir {
                Some(dir) => {
                    let path = dir.join(format!("{}-seed{seed}.ckpt", spec.name));
                    ck.save(&path)?;
                    Some(path)
                }
                None => None,
            };
            runs.push(AblationRun {
                seed,
                best_epoch: ck.epoch,
                metrics,
                checkpoint,
            });
        }
        let all: Vec<Metrics> = runs.iter().map(|r| r.metrics).collect();
        rows.push(AblationRow {
            name: spec.name.clone(),
            variant: spec.config.model.variant,
            context_heads: spec.config.model.context_heads,
            parameters,
            runs,
            mean: mean_metrics(&all),
        });
    }
    Ok(rows)
}

pub fn ablate(
    base: &RunConfig,
    head_counts: &[usize],
    seeds: &[u64],
    train_set: &[Example],
    dev_set: &[Example],
    out_dir: Option<&Path>,
) -> Result<AblationReport> {
    let specs = ablation_specs(base, head_counts);
    Ok(AblationReport {
        tau: base.tau,
        rows: run_specs(&specs, seeds, train_set, dev_set, out_dir)?,
    })
}

/// Fixed-width text table of the mean metrics.
pub fn render_table(report: &AblationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<18} {:>5} {:>8} {:>7} {:>7} {:>7} {:>7}",
        "variant", "heads", "params", "EM", "F1", "NA", "HasAns"
    );
    for row in &report.rows {
        let heads = if row.variant.uses_relnet() {
            row.context_heads.to_string()
        } else {
            "-".into()
        };
        let m = row.mean;
        let _ = writeln!(
            out,
            "{:<18} {:>5} {:>8} {:>7.2} {:>7.2} {:>7.2} {:>7.2}",
            row.name, heads, row.parameters, m.em, m.f1, m.na_accuracy, m.answerable_accuracy
        );
    }
    out
}

/// Re-evaluates a saved run; used to confirm a row is reproducible.
pub fn reevaluate(run: &AblationRun, dev_set: &[Example], tau: f64) -> Result<Option<Metrics>> {
    match &run.checkpoint {
        Some(path) => Ok(Some(evaluate(&Checkpoint::load(path)?, dev_set, tau)?)),
        None => Ok(None),
    }
}
