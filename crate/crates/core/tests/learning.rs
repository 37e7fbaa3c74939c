use std::fs;
use std::path::Path;

use gaitsearch::algos::{lrpg_step, reps_step, Batch, LrpgConfig, RepsConfig};
use gaitsearch::harness::{
    read_heatmap_csv, run_experiment, run_trial, Algorithm, ExperimentConfig, GaitChoice, GaitName,
};
use gaitsearch::search::{sample, SearchDistribution, PARAM_DIM};
use nalgebra::{DMatrix, DVector};

fn quadratic_batch(dist: &SearchDistribution, target: &DVector<f64>, seed: u64) -> Batch {
    let thetas = sample(dist, 50, seed).unwrap();
    let rewards = DVector::from_fn(50, |i, _| {
        -(thetas.row(i).transpose() - target).norm_squared()
    });
    Batch::new(thetas, rewards).unwrap()
}

fn target(seed: u64) -> DVector<f64> {
    DVector::from_fn(PARAM_DIM, |i, _| {
        ((i as f64 + 1.0) * 0.37 + seed as f64).sin()
    })
}

#[test]
fn reps_batch_mean_is_non_decreasing_on_a_quadratic() {
    let mut monotone = 0;
    for seed in 0..10u64 {
        let t = target(seed);
        let mut dist = SearchDistribution::new(
            DVector::zeros(PARAM_DIM),
            DMatrix::identity(PARAM_DIM, PARAM_DIM),
        )
        .unwrap();
        let mut curve = Vec::new();
        for u in 0..60 {
            let batch = quadratic_batch(&dist, &t, seed * 1000 + u);
            curve.push(batch.mean_reward());
            dist = reps_step(&batch, &dist, &RepsConfig::default()).unwrap().0;
        }
        if curve.windows(2).all(|w| w[1] >= w[0]) {
            monotone += 1;
        }
    }
    assert!(monotone >= 9, "{monotone}/10 seeds monotone");
}

#[test]
fn lrpg_climbs_a_quadratic_and_keeps_its_covariance() {
    let t = target(3);
    let start = SearchDistribution::new(
        DVector::zeros(PARAM_DIM),
        DMatrix::identity(PARAM_DIM, PARAM_DIM) * 0.1,
    )
    .unwrap();
    let cfg = LrpgConfig { alpha: 0.01 };
    let mut dist = start.clone();
    for u in 0..200 {
        let batch = quadratic_batch(&dist, &t, u);
        dist = lrpg_step(&batch, &dist, &cfg).unwrap().0;
        assert_eq!(dist.cov, start.cov);
    }
    assert!((&dist.mean - &t).norm() < 0.5 * t.norm());
}

fn small_config(dir: &Path, algorithm: Algorithm, gait: GaitName) -> ExperimentConfig {
    ExperimentConfig {
        algorithm,
        gait: GaitChoice::Named(gait),
        trials: 2,
        updates: 3,
        batch_size: 10,
        episode_frames: 100,
        output_dir: dir.to_path_buf(),
        ..Default::default()
    }
}

#[test]
fn zero_updates_write_only_the_initial_covariance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        updates: 0,
        ..small_config(dir.path(), Algorithm::Reps, GaitName::Walk)
    };
    let out = run_experiment(&cfg).unwrap();
    let init = cfg.initial_distribution().unwrap();
    for trial in 0..2 {
        let m =
            read_heatmap_csv(&dir.path().join(format!("cov_trial{trial}_update0.csv"))).unwrap();
        assert_eq!(m, init.cov);
        assert!(!dir
            .path()
            .join(format!("cov_trial{trial}_update1.csv"))
            .exists());
    }
    assert!(out.aggregate.is_empty());
    let agg = fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 1);
}

#[test]
fn lrpg_snapshots_are_identical_across_updates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), Algorithm::Lrpg, GaitName::Trot);
    run_experiment(&cfg).unwrap();
    let first = fs::read(dir.path().join("cov_trial0_update0.csv")).unwrap();
    for u in 1..=3 {
        assert_eq!(
            fs::read(dir.path().join(format!("cov_trial0_update{u}.csv"))).unwrap(),
            first
        );
    }
}

#[test]
fn aggregate_has_one_row_per_update() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), Algorithm::Reps, GaitName::Pace);
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.aggregate.len(), 3);
    assert!(out.aggregate.iter().all(|p| p.std >= 0.0));
    let text = fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
    assert_eq!(text.lines().count(), 4);
    let trial = fs::read_to_string(dir.path().join("trial_0.csv")).unwrap();
    let mut lines = trial.lines();
    assert_eq!(
        lines.next().unwrap(),
        "update,mean_reward,std_reward,eta,kl,grad_norm,structure_score"
    );
    // REPS rows leave grad_norm empty
    assert!(lines.all(|l| l.split(',').nth(5) == Some("")));
}

#[test]
fn failed_trials_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), Algorithm::Lrpg, GaitName::Trot);
    // gamma = 1 makes the covariance singular, which LRPG cannot invert
    cfg.gamma = 1.0;
    let err = run_experiment(&cfg).unwrap_err();
    assert!(err.to_string().contains("all 2 trials failed"));
    let manifest = fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    assert!(manifest.contains("failed_trials"));
}

#[test]
fn walk_structure_score_drops_from_update_three_to_four() {
    let cfg = ExperimentConfig {
        gait: GaitChoice::Named(GaitName::Walk),
        updates: 5,
        ..Default::default()
    };
    let mut drops = 0;
    for trial in 0..10 {
        let rec = run_trial(&cfg, trial).unwrap();
        assert_eq!(rec.updates[0].structure_score, 1.0);
        if rec.updates[3].structure_score > rec.updates[4].structure_score {
            drops += 1;
        }
    }
    assert!(drops > 5, "score fell in only {drops}/10 trials");
}
