//! Experiment configuration.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::mechanism::MechanismKind;
use super::task::TaskConfig;
use crate::error::{Error, Result};
use crate::perturb::Modulation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Total local iterations `T`.
    pub iterations: u32,
    /// Local iterations between aggregations `E`.
    pub local_steps: u32,
    pub learning_rate: f64,
    /// Iterations of each pre-training phase; defaults to `iterations`.
    #[serde(default)]
    pub pretrain_iterations: Option<u32>,
}

impl ScheduleConfig {
    pub fn rounds(&self) -> u32 {
        self.iterations / self.local_steps
    }

    pub fn pretrain(&self) -> u32 {
        self.pretrain_iterations.unwrap_or(self.iterations)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyConfig {
    pub lambda: f64,
    /// Default budget for arms that do not set their own.
    pub epsilon: f64,
    /// Perturbation draws per checkpoint in the kappa estimate.
    #[serde(default = "default_kappa_samples")]
    pub kappa_samples: usize,
    /// Checkpoints per client fed to the kappa estimate.
    #[serde(default = "default_kappa_checkpoints")]
    pub kappa_checkpoints: usize,
}

fn default_kappa_samples() -> usize {
    10_000
}
fn default_kappa_checkpoints() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelModel {
    /// Channel BER uniform on `[0, p_c_max]` per round and client.
    FixedRange,
    /// Fixed average SNR, no fading.
    Awgn,
    /// Rayleigh block fading: instantaneous SNR exponential with mean `snr_db`.
    Rayleigh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub model: ChannelModel,
    #[serde(default = "default_p_c_max")]
    pub p_c_max: f64,
    #[serde(default = "default_snr_db")]
    pub snr_db: f64,
    #[serde(default = "default_modulation")]
    pub modulation: Modulation,
}

fn default_p_c_max() -> f64 {
    0.02
}
fn default_snr_db() -> f64 {
    10.0
}
fn default_modulation() -> Modulation {
    Modulation::Bpsk
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmConfig {
    pub name: String,
    pub mechanism: MechanismKind,
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Overrides the channel section's `p_c_max` for this arm.
    #[serde(default)]
    pub p_c_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskConfig,
    pub schedule: ScheduleConfig,
    pub privacy: PrivacyConfig,
    pub channel: ChannelSection,
    pub arms: Vec<ArmConfig>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output: Option<String>,
}

impl ArmConfig {
    pub fn epsilon(&self, cfg: &ExperimentConfig) -> f64 {
        self.epsilon.unwrap_or(cfg.privacy.epsilon)
    }

    pub fn p_c_max(&self, cfg: &ExperimentConfig) -> f64 {
        self.p_c_max.unwrap_or(cfg.channel.p_c_max)
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        let s = &self.schedule;
        if s.local_steps == 0 || s.iterations == 0 || !s.iterations.is_multiple_of(s.local_steps) {
            return Err(Error::Config(format!(
                "iterations ({}) must be a positive multiple of local_steps ({})",
                s.iterations, s.local_steps
            )));
        }
        if s.pretrain() < s.local_steps || !s.pretrain().is_multiple_of(s.local_steps) {
            return Err(Error::Config("pretrain_iterations must be a positive multiple of local_steps".into()));
        }
        if !(s.learning_rate > 0.0 && s.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(s.learning_rate * self.task.regularization < 1.0) {
            return Err(Error::Config("learning_rate * regularization must be < 1".into()));
        }
        let p = &self.privacy;
        if !(p.lambda > 1.0 && p.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda {} must be > 1", p.lambda)));
        }
        if p.kappa_samples == 0 || p.kappa_checkpoints == 0 {
            return Err(Error::Config("kappa_samples and kappa_checkpoints must be positive".into()));
        }
        if self.arms.is_empty() {
            return Err(Error::Config("at least one arm is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut names = HashSet::new();
        for arm in &self.arms {
            if arm.name.is_empty() || !arm.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(Error::Config(format!("arm name {:?} must be non-empty [A-Za-z0-9_-]", arm.name)));
            }
            if !names.insert(arm.name.as_str()) {
                return Err(Error::Config(format!("duplicate arm name {:?}", arm.name)));
            }
            let eps = arm.epsilon(self);
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::Config(format!("arm {}: epsilon must be positive", arm.name)));
            }
            let pc = arm.p_c_max(self);
            if !(0.0..=0.5).contains(&pc) {
                return Err(Error::Config(format!("arm {}: p_c_max {pc} outside [0, 0.5]", arm.name)));
            }
        }
        if !self.channel.snr_db.is_finite() {
            return Err(Error::Config("snr_db must be finite".into()));
        }
        if self.channel.model != ChannelModel::FixedRange && self.channel.modulation == Modulation::FixedBer {
            return Err(Error::Config("awgn and rayleigh channels need bpsk or qpsk".into()));
        }
        let mut seen = HashSet::new();
        if !self.seeds.iter().all(|s| seen.insert(*s)) {
            return Err(Error::Config("duplicate seeds".into()));
        }
        Ok(())
    }
}
