//! Multi-trial experiment runner.
//!
//! Each trial starts from the configured initial distribution, then
//! repeatedly samples a batch, rolls every sample out on the surrogate
//! (in parallel) and applies one LRPG or REPS update. Seeds are derived
//! from the base seed and trial/update indices only, so a configuration
//! reproduces every output byte.
//!
//! Files written to the output directory:
//!
//! | file | content |
//! |------|---------|
//! | `manifest.json` | full config, per-trial seeds, failures |
//! | `trial_<k>.csv` | `update,mean_reward,std_reward,eta,kl,grad_norm,structure_score` |
//! | `aggregate.csv` | `update,mean_reward,std_reward,n_trials` across trials |
//! | `cov_trial<k>_update<u>.csv` | covariance after `u` updates |
//! | `theta_star_trial<k>.csv` | final mean, one line |
//! | `trace_trial<k>.csv` | rollout of the final mean (optional) |

mod config;
mod io;
mod stats;

pub use config::{Algorithm, ExperimentConfig, GaitChoice, GaitName};
pub use io::{export_heatmap_csv, read_heatmap_csv};
pub use stats::{aggregate_curves, structure_score, CurvePoint};

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::algos::{lrpg_step, reps_step, Batch, UpdateDiagnostics};
use crate::error::{invalid, Result};
use crate::search::{sample, SearchDistribution};
use crate::sim::{rollout, rollout_traced, write_trace_csv};

/// Batch statistics and diagnostics for one update. `update` counts the
/// updates already applied to the distribution that produced the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRecord {
    pub update: usize,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub structure_score: f64,
    pub diagnostics: UpdateDiagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub updates: Vec<UpdateRecord>,
    pub theta_star: DVector<f64>,
    /// `(updates applied, covariance)` pairs.
    pub cov_snapshots: Vec<(usize, DMatrix<f64>)>,
}

impl TrialRecord {
    pub fn mean_reward_curve(&self) -> Vec<f64> {
        self.updates.iter().map(|u| u.mean_reward).collect()
    }
}

/// Across-trial mean and population std of the batch-mean reward.
pub fn aggregate_trials(records: &[TrialRecord]) -> Result<Vec<CurvePoint>> {
    if records.is_empty() {
        return Err(invalid("no trial records to aggregate"));
    }
    let curves: Vec<Vec<f64>> = records.iter().map(TrialRecord::mean_reward_curve).collect();
    aggregate_curves(&curves)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn trial_seed(base: u64, trial: usize) -> u64 {
    base.wrapping_add(trial as u64)
}

pub fn batch_seed(trial_seed: u64, update: usize) -> u64 {
    splitmix64(trial_seed ^ splitmix64(update as u64))
}

fn population_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn keep_snapshot(cfg: &ExperimentConfig, applied: usize) -> bool {
    cfg.full_cov_history || applied <= cfg.cov_snapshot_updates
}

/// Roll out every row of `thetas` and collect the episode rewards.
pub fn evaluate_batch(cfg: &ExperimentConfig, thetas: &DMatrix<f64>) -> Result<DVector<f64>> {
    let sim = cfg.sim_config();
    let rewards = (0..thetas.nrows())
        .into_par_iter()
        .map(|i| {
            let row: Vec<f64> = thetas.row(i).iter().copied().collect();
            let params = cfg.decode(&row)?;
            Ok(rollout(&params, &cfg.basis, &cfg.gains, &sim)?.reward)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(DVector::from_vec(rewards))
}

pub fn run_trial(cfg: &ExperimentConfig, trial: usize) -> Result<TrialRecord> {
    cfg.validate()?;
    let seed = trial_seed(cfg.seed, trial);
    let template = cfg.template()?;
    let mut dist = cfg.initial_distribution()?;
    let mut snapshots = Vec::new();
    if keep_snapshot(cfg, 0) {
        snapshots.push((0, dist.cov.clone()));
    }
    let mut updates = Vec::with_capacity(cfg.updates);
    for u in 0..cfg.updates {
        let thetas = sample(&dist, cfg.batch_size, batch_seed(seed, u))?;
        let rewards = evaluate_batch(cfg, &thetas)?;
        let score = structure_score(&dist.cov, &template)?;
        let std_reward = population_std(rewards.as_slice());
        let batch = Batch::new(thetas, rewards)?;
        let (next, diagnostics) = step(cfg, &batch, &dist)?;
        updates.push(UpdateRecord {
            update: u,
            mean_reward: diagnostics.mean_reward,
            std_reward,
            structure_score: score,
            diagnostics,
        });
        dist = next;
        if keep_snapshot(cfg, u + 1) {
            snapshots.push((u + 1, dist.cov.clone()));
        }
    }
    Ok(TrialRecord {
        trial,
        seed,
        updates,
        theta_star: dist.mean,
        cov_snapshots: snapshots,
    })
}

fn step(
    cfg: &ExperimentConfig,
    batch: &Batch,
    dist: &SearchDistribution,
) -> Result<(SearchDistribution, UpdateDiagnostics)> {
    match cfg.algorithm {
        Algorithm::Lrpg => lrpg_step(batch, dist, &cfg.lrpg),
        Algorithm::Reps => reps_step(batch, dist, &cfg.reps),
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    version: &'static str,
    config: &'a ExperimentConfig,
    trial_seeds: Vec<u64>,
    batch_seed_rule: &'static str,
    completed_trials: Vec<usize>,
    failed_trials: Vec<FailedTrial>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FailedTrial {
    pub trial: usize,
    pub error: String,
}

#[derive(Debug)]
pub struct ExperimentOutputs {
    pub records: Vec<TrialRecord>,
    pub failures: Vec<FailedTrial>,
    pub aggregate: Vec<CurvePoint>,
    pub files: Vec<PathBuf>,
}

fn write_trial_csv(record: &TrialRecord, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "update",
        "mean_reward",
        "std_reward",
        "eta",
        "kl",
        "grad_norm",
        "structure_score",
    ])?;
    for u in &record.updates {
        w.write_record([
            u.update.to_string(),
            format!("{:?}", u.mean_reward),
            format!("{:?}", u.std_reward),
            io::fmt_opt(u.diagnostics.eta),
            io::fmt_opt(u.diagnostics.empirical_kl),
            io::fmt_opt(u.diagnostics.gradient_norm),
            format!("{:?}", u.structure_score),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_aggregate_csv(points: &[CurvePoint], n_trials: usize, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["update", "mean_reward", "std_reward", "n_trials"])?;
    for (u, p) in points.iter().enumerate() {
        w.write_record([
            u.to_string(),
            format!("{:?}", p.mean),
            format!("{:?}", p.std),
            n_trials.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_vector_line(v: &DVector<f64>, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let line: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
    writeln!(out, "{}", line.join(","))?;
    out.flush()?;
    Ok(())
}

/// Run all trials and write every output file. Trials that fail are
/// logged, listed in the manifest and left out of the aggregate; the run
/// errors only if no trial completes.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutputs> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut records = Vec::new();
    let mut failures = Vec::new();

    for trial in 0..cfg.trials {
        let record = match run_trial(cfg, trial) {
            Ok(r) => r,
            Err(e) => {
                warn!("trial {trial} failed: {e}");
                failures.push(FailedTrial {
                    trial,
                    error: e.to_string(),
                });
                continue;
            }
        };
        let p = dir.join(format!("trial_{trial}.csv"));
        write_trial_csv(&record, &p)?;
        files.push(p);
        for (applied, cov) in &record.cov_snapshots {
            let p = dir.join(format!("cov_trial{trial}_update{applied}.csv"));
            export_heatmap_csv(cov, &p)?;
            files.push(p);
        }
        let p = dir.join(format!("theta_star_trial{trial}.csv"));
        write_vector_line(&record.theta_star, &p)?;
        files.push(p);
        if cfg.export_final_trace {
            let params = cfg.decode(record.theta_star.as_slice())?;
            let result = rollout_traced(&params, &cfg.basis, &cfg.gains, &cfg.sim_config())?;
            let p = dir.join(format!("trace_trial{trial}.csv"));
            write_trace_csv(result.trace.as_deref().unwrap_or(&[]), File::create(&p)?)?;
            files.push(p);
        }
        records.push(record);
    }

    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        trial_seeds: (0..cfg.trials).map(|t| trial_seed(cfg.seed, t)).collect(),
        batch_seed_rule: "splitmix64(trial_seed ^ splitmix64(update))",
        completed_trials: records.iter().map(|r| r.trial).collect(),
        failed_trials: failures.clone(),
    };
    let p = dir.join("manifest.json");
    let mut out = BufWriter::new(File::create(&p)?);
    serde_json::to_writer_pretty(&mut out, &manifest)?;
    writeln!(out)?;
    out.flush()?;
    files.push(p);

    if records.is_empty() {
        return Err(invalid(format!(
            "all {} trials failed; first error: {}",
            failures.len(),
            failures.first().map(|f| f.error.as_str()).unwrap_or("none")
        )));
    }
    let aggregate = aggregate_trials(&records)?;
    let p = dir.join("aggregate.csv");
    write_aggregate_csv(&aggregate, records.len(), &p)?;
    files.push(p);

    Ok(ExperimentOutputs {
        records,
        failures,
        aggregate,
        files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_distinct_per_update() {
        let s = trial_seed(7, 3);
        assert_eq!(s, 10);
        assert_ne!(batch_seed(s, 0), batch_seed(s, 1));
        assert_ne!(batch_seed(10, 0), batch_seed(11, 0));
    }

    #[test]
    fn aggregate_requires_records() {
        assert!(aggregate_trials(&[]).is_err());
    }

    #[test]
    fn population_std_of_constant_is_zero() {
        assert_eq!(population_std(&[2.0, 2.0, 2.0]), 0.0);
        assert_eq!(population_std(&[0.0, 2.0]), 1.0);
    }
}
