use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::algos::{LrpgConfig, RepsConfig};
use crate::control::GainConfig;
use crate::error::{invalid, Error, Result};
use crate::policy::{BasisConfig, PolicyParams};
use crate::search::{
    build_template, scale_template, CovarianceTemplate, GaitSpec, SearchDistribution, PARAM_DIM,
    QUARTERS, WEIGHT_DIM,
};
use crate::sim::SimConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Lrpg,
    Reps,
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lrpg" => Ok(Self::Lrpg),
            "reps" => Ok(Self::Reps),
            other => Err(Error::Config(format!("unknown algorithm '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GaitName {
    Diagonal,
    Walk,
    Trot,
    Pace,
    Bound,
}

/// A named gait preset or explicit per-leg quarter offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GaitChoice {
    Named(GaitName),
    Custom([u8; 4]),
}

impl GaitChoice {
    /// `None` for the diagonal (uncoupled) initialisation.
    pub fn spec(&self) -> Result<Option<GaitSpec>> {
        Ok(match self {
            Self::Named(GaitName::Diagonal) => None,
            Self::Named(GaitName::Walk) => Some(GaitSpec::walk()),
            Self::Named(GaitName::Trot) => Some(GaitSpec::trot()),
            Self::Named(GaitName::Pace) => Some(GaitSpec::pace()),
            Self::Named(GaitName::Bound) => Some(GaitSpec::bound()),
            Self::Custom(offsets) => Some(GaitSpec::new(*offsets)?),
        })
    }
}

impl FromStr for GaitChoice {
    type Err = Error;

    /// Accepts a preset name or four comma-separated offsets (`0,1,2,3`).
    fn from_str(s: &str) -> Result<Self> {
        let name = match s.to_ascii_lowercase().as_str() {
            "diagonal" => Some(GaitName::Diagonal),
            "walk" => Some(GaitName::Walk),
            "trot" => Some(GaitName::Trot),
            "pace" => Some(GaitName::Pace),
            "bound" => Some(GaitName::Bound),
            _ => None,
        };
        if let Some(name) = name {
            return Ok(Self::Named(name));
        }
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(Error::Config(format!("unknown gait '{s}'")));
        }
        let mut offsets = [0u8; 4];
        for (o, p) in offsets.iter_mut().zip(parts) {
            *o = p
                .parse()
                .map_err(|_| Error::Config(format!("bad quarter offset '{p}'")))?;
        }
        GaitSpec::new(offsets)?;
        Ok(Self::Custom(offsets))
    }
}

impl fmt::Display for GaitChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Named(n) => write!(f, "{}", format!("{n:?}").to_lowercase()),
            Self::Custom(o) => write!(f, "{},{},{},{}", o[0], o[1], o[2], o[3]),
        }
    }
}

/// Full description of an experiment. Every output byte is a function of
/// this value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub gait: GaitChoice,
    pub gamma: f64,
    pub sigma2: f64,
    pub batch_size: usize,
    pub updates: usize,
    pub trials: usize,
    pub episode_frames: usize,
    pub dt: f64,
    pub seed: u64,
    /// Variance of the temporal scale relative to `sigma2`.
    pub delta_z_var_scale: f64,
    pub initial_temporal_scale: f64,
    /// Sampled temporal scales are clamped up to this before rollout.
    pub min_temporal_scale: f64,
    /// Covariance snapshots are written for updates `0..=cov_snapshot_updates`.
    pub cov_snapshot_updates: usize,
    pub full_cov_history: bool,
    pub export_final_trace: bool,
    pub output_dir: PathBuf,
    pub lrpg: LrpgConfig,
    pub reps: RepsConfig,
    pub sim: SimConfig,
    pub gains: GainConfig,
    pub basis: BasisConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Reps,
            gait: GaitChoice::Named(GaitName::Trot),
            gamma: 0.9,
            sigma2: 1.0,
            batch_size: 50,
            updates: 60,
            trials: 10,
            episode_frames: 200,
            dt: 0.01,
            seed: 0,
            delta_z_var_scale: 0.01,
            initial_temporal_scale: 1.0,
            min_temporal_scale: 0.05,
            cov_snapshot_updates: 4,
            full_cov_history: false,
            export_final_trace: false,
            output_dir: PathBuf::from("out"),
            lrpg: LrpgConfig::default(),
            reps: RepsConfig::default(),
            sim: SimConfig::default(),
            gains: GainConfig::default(),
            basis: BasisConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(invalid("batch_size must be at least 2"));
        }
        if self.trials == 0 {
            return Err(invalid("trials must be positive"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(invalid(format!(
                "gamma must be in [0, 1], got {}",
                self.gamma
            )));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(invalid("sigma2 must be positive"));
        }
        if !(self.delta_z_var_scale > 0.0) {
            return Err(invalid("delta_z_var_scale must be positive"));
        }
        if !(self.initial_temporal_scale > 0.0 && self.min_temporal_scale > 0.0) {
            return Err(invalid("temporal scales must be positive"));
        }
        if self.basis.count != QUARTERS {
            return Err(invalid(format!(
                "covariance templates need {QUARTERS} bases per joint, got {}",
                self.basis.count
            )));
        }
        self.gait.spec()?;
        self.basis.validate()?;
        self.gains.validate()?;
        self.sim_config().validate()?;
        match self.algorithm {
            Algorithm::Lrpg => self.lrpg.validate(),
            Algorithm::Reps => self.reps.validate(),
        }
    }

    /// Simulator settings with the top-level `dt` and `episode_frames`.
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            dt: self.dt,
            episode_frames: self.episode_frames,
            ..self.sim.clone()
        }
    }

    pub fn template(&self) -> Result<CovarianceTemplate> {
        Ok(match self.gait.spec()? {
            Some(g) => build_template(&g),
            None => CovarianceTemplate::diagonal(),
        })
    }

    /// Coupling actually applied; the diagonal initialisation forces 0.
    pub fn effective_gamma(&self) -> f64 {
        match self.gait {
            GaitChoice::Named(GaitName::Diagonal) => 0.0,
            _ => self.gamma,
        }
    }

    /// Standing-posture mean (zero weights, initial temporal scale) and
    /// `sigma2 (I + gamma O)` with the temporal-scale variance rescaled.
    pub fn initial_distribution(&self) -> Result<SearchDistribution> {
        let mut cov = self.initial_covariance()?;
        cov[(WEIGHT_DIM, WEIGHT_DIM)] *= self.delta_z_var_scale;
        let mut mean = DVector::zeros(PARAM_DIM);
        mean[WEIGHT_DIM] = self.initial_temporal_scale;
        SearchDistribution::new(mean, cov)
    }

    fn initial_covariance(&self) -> Result<DMatrix<f64>> {
        scale_template(&self.template()?, self.sigma2, self.effective_gamma())
    }

    /// Map a sampled parameter vector to policy parameters, clamping the
    /// temporal scale from below.
    pub fn decode(&self, theta: &[f64]) -> Result<PolicyParams> {
        let mut v = theta.to_vec();
        if let Some(dz) = v.last_mut() {
            *dz = dz.max(self.min_temporal_scale);
        }
        PolicyParams::from_flat(&v, self.basis.count)
    }
}
