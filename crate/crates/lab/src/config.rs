//! Experiment configuration: a TOML file with `[experiment]`, `[algorithm]`
//! and optional `[sweep]` sections. Configs are canonicalized (sorted keys,
//! numbers re-rendered in shortest form) before fingerprinting so that
//! formatting differences do not change output file names.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tdlab::agents::{AlgorithmConfig, AlgorithmId, BallPair, BehaviorSpec, TargetSpec};
use tdlab::schedule::Schedule;

use crate::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    BairdEval,
    BairdControl,
    Kolter,
    Random,
}

impl EnvKind {
    pub fn name(&self) -> &'static str {
        match self {
            EnvKind::BairdEval => "baird-eval",
            EnvKind::BairdControl => "baird-control",
            EnvKind::Kolter => "kolter",
            EnvKind::Random => "random",
        }
    }
}

/// How the Baird driver draws states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BairdSampling {
    /// Classic synchronous-style protocol: `S_t` i.i.d. uniform over the
    /// seven states, actions from the behavior policy, successor states
    /// from the kernel. This is the regime in which the counterexample
    /// destabilizes semi-gradient methods quickly.
    #[default]
    Uniform,
    /// Follow the behavior chain; its stationary distribution concentrates
    /// on the hub state, which largely washes the counterexample out.
    Trajectory,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BairdSection {
    #[serde(default)]
    pub sampling: BairdSampling,
}

impl Default for BairdSection {
    fn default() -> Self {
        Self { sampling: BairdSampling::Uniform }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KolterSection {
    pub epsilon: f64,
    pub d1: f64,
    pub gamma: f64,
}

impl Default for KolterSection {
    fn default() -> Self {
        Self { epsilon: 0.01, d1: 0.5, gamma: 0.99 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSection {
    pub seed: u64,
    pub n_states: usize,
    pub n_actions: usize,
    pub feature_dim: usize,
    pub mixing: f64,
    pub gamma: f64,
    /// Rescale features to this spectral norm.
    #[serde(default)]
    pub scale_x: Option<f64>,
    /// Center features against the behavior stationary distribution.
    #[serde(default)]
    pub center_features: bool,
    /// Seed for the random soft target policy used by evaluation learners.
    #[serde(default = "default_target_seed")]
    pub target_policy_seed: u64,
}

fn default_target_seed() -> u64 {
    1
}

impl Default for RandomSection {
    fn default() -> Self {
        Self {
            seed: 42,
            n_states: 5,
            n_actions: 2,
            feature_dim: 3,
            mixing: 0.3,
            gamma: 0.9,
            scale_x: None,
            center_features: false,
            target_policy_seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ThetaInit {
    /// Mirror the initial main weights (zero rate component when stacked).
    #[default]
    W0,
    /// All zeros.
    Zero,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub env: EnvKind,
    pub horizon: u64,
    #[serde(default = "default_replications")]
    pub replications: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<String>,
    #[serde(default = "default_cap")]
    pub cap: f64,
    /// Metrics to include in the aggregated CSV; empty means all of
    /// `value_error, w_norm, theta_norm, rbar, drift`.
    #[serde(default)]
    pub metrics: Vec<String>,
    /// Value-error thresholds whose first crossing times are recorded.
    #[serde(default)]
    pub track_crossings: Vec<f64>,
    #[serde(default)]
    pub baird: BairdSection,
    #[serde(default)]
    pub kolter: KolterSection,
    #[serde(default)]
    pub random: RandomSection,
}

fn default_replications() -> u64 {
    1
}

fn default_cap() -> f64 {
    1e9
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSection {
    pub id: AlgorithmId,
    #[serde(default)]
    pub eta: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub theta0: ThetaInit,
    pub alpha: Schedule,
    pub beta: Schedule,
    #[serde(default)]
    pub projections: Option<BallPair>,
    #[serde(default = "default_behavior")]
    pub behavior: BehaviorSpec,
    #[serde(default = "default_target")]
    pub target: TargetSpec,
}

fn default_tau() -> f64 {
    1.0
}

fn default_behavior() -> BehaviorSpec {
    BehaviorSpec::Fixed
}

fn default_target() -> TargetSpec {
    TargetSpec::Fixed
}

/// Evenly spaced grid description for fixed-point sweeps.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if self.step <= 0.0 {
            return out;
        }
        let n = ((self.stop - self.start) / self.step).round() as i64;
        for i in 0..=n.max(0) {
            let v = self.start + self.step * i as f64;
            if v <= self.stop + 1e-12 {
                out.push(v);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Ridge weights; overrides `algorithm.eta` when nonempty.
    #[serde(default)]
    pub eta: Vec<f64>,
    /// Kolter sampling-weight grid for analytic fixed-point sweeps.
    #[serde(default)]
    pub d1_grid: Option<GridSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub algorithm: AlgorithmSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            HarnessError::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_str_validated(&text)
    }

    pub fn from_str_validated(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text)
            .map_err(|e| HarnessError::Config(format!("parse error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.horizon < 1 {
            return Err(HarnessError::Config("horizon must be >= 1".into()));
        }
        if e.replications < 1 {
            return Err(HarnessError::Config("replications must be >= 1".into()));
        }
        if e.cap <= 0.0 || !e.cap.is_finite() {
            return Err(HarnessError::Config("cap must be positive and finite".into()));
        }
        if !self.sweep.eta.is_empty() && self.sweep.eta.iter().any(|&x| x < 0.0) {
            return Err(HarnessError::Config("sweep.eta entries must be nonnegative".into()));
        }
        if let Some(grid) = &self.sweep.d1_grid {
            if grid.points().is_empty() {
                return Err(HarnessError::Config("sweep.d1_grid is empty".into()));
            }
        }
        for m in &e.metrics {
            if !crate::emit::METRICS.contains(&m.as_str()) {
                return Err(HarnessError::Config(format!(
                    "unknown metric {m:?}; known: {}",
                    crate::emit::METRICS.join(", ")
                )));
            }
        }
        let alg = self.algorithm_config();
        alg.validate()
            .map_err(|err| HarnessError::Config(err.to_string()))?;
        Ok(())
    }

    /// The learner configuration at the base ridge weight.
    pub fn algorithm_config(&self) -> AlgorithmConfig {
        AlgorithmConfig {
            algorithm: self.algorithm.id,
            eta: self.algorithm.eta,
            projections: self.algorithm.projections,
            alpha: self.algorithm.alpha,
            beta: self.algorithm.beta,
            behavior: self.algorithm.behavior,
            target: self.algorithm.target,
            tau: self.algorithm.tau,
        }
    }

    /// Ridge weights to sweep (the base eta when no sweep is given).
    pub fn eta_values(&self) -> Vec<f64> {
        if self.sweep.eta.is_empty() {
            vec![self.algorithm.eta]
        } else {
            self.sweep.eta.clone()
        }
    }

    /// Canonical text: stable key order, numbers in shortest round-trip
    /// form. The fingerprint is FNV-1a 64 over this text.
    pub fn canonical_text(&self) -> String {
        let value = toml::Value::try_from(self).expect("config serializes");
        let mut out = String::new();
        canonical_value(&value, &mut Vec::new(), &mut out);
        out
    }

    pub fn fingerprint(&self) -> String {
        format!("{:016x}", fnv1a64(self.canonical_text().as_bytes()))
    }
}

fn canonical_value(value: &toml::Value, path: &mut Vec<String>, out: &mut String) {
    match value {
        toml::Value::Table(table) => {
            let mut keys: Vec<&String> = table.keys().collect();
            keys.sort();
            for key in keys {
                path.push(key.clone());
                canonical_value(&table[key], path, out);
                path.pop();
            }
        }
        other => {
            let _ = write!(out, "{}=", path.join("."));
            canonical_scalar(other, out);
            out.push('\n');
        }
    }
}

fn canonical_scalar(value: &toml::Value, out: &mut String) {
    match value {
        toml::Value::String(s) => {
            let _ = write!(out, "{s:?}");
        }
        toml::Value::Integer(i) => {
            let _ = write!(out, "{i}");
        }
        toml::Value::Float(f) => {
            let _ = write!(out, "{f}");
        }
        toml::Value::Boolean(b) => {
            let _ = write!(out, "{b}");
        }
        toml::Value::Datetime(d) => {
            let _ = write!(out, "{d}");
        }
        toml::Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                canonical_scalar(item, out);
            }
            out.push(']');
        }
        toml::Value::Table(_) => unreachable!("tables are flattened by canonical_value"),
    }
}

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Default output root: `$LAB_OUT` or `./lab-out`.
pub fn default_out_root() -> String {
    std::env::var("LAB_OUT").unwrap_or_else(|_| "lab-out".into())
}
