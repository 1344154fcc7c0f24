//! Simulation configuration: straggler model, store latency, wait policy,
//! per-stage worker pools and the deterministic seed. Loadable from TOML.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ----------
// Straggler model
// ----------

/// Per-task latency model. Every task draws
/// `base_time * work * Uniform[1 - jitter, 1 + jitter]` seconds and, with
/// probability `p` independently of everything else, multiplies that by
/// `straggler_factor`. A straggler is slow, never failed: it always
/// completes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StragglerModel {
    pub p: f64,
    pub base_time: f64,
    pub jitter: f64,
    pub straggler_factor: f64,
}

impl Default for StragglerModel {
    fn default() -> Self {
        StragglerModel {
            p: 0.02,
            base_time: 135.0,
            jitter: 0.1,
            straggler_factor: 3.0,
        }
    }
}

impl StragglerModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Config(format!("model.p = {} outside [0, 1]", self.p)));
        }
        if !(self.base_time > 0.0) || !self.base_time.is_finite() {
            return Err(Error::Config("model.base_time must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(Error::Config(format!(
                "model.jitter = {} outside [0, 1)",
                self.jitter
            )));
        }
        if !(self.straggler_factor > 1.0) || !self.straggler_factor.is_finite() {
            return Err(Error::Config(
                "model.straggler_factor must exceed 1".into(),
            ));
        }
        Ok(())
    }
}

// ----------
// Store latency
// ----------

/// Object-store latency: every read or write costs `alpha + beta * bytes`
/// seconds. Both knobs are calibration parameters, not measurements.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreModel {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for StoreModel {
    fn default() -> Self {
        StoreModel {
            alpha: 0.05,
            beta: 1e-8,
        }
    }
}

impl StoreModel {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            return Err(Error::Config("store.alpha must be nonnegative".into()));
        }
        if self.beta < 0.0 || !self.beta.is_finite() {
            return Err(Error::Config("store.beta must be nonnegative".into()));
        }
        Ok(())
    }

    /// Seconds charged for moving `bytes` through the store once.
    pub fn latency(&self, bytes: usize) -> f64 {
        self.alpha + self.beta * bytes as f64
    }
}

// ----------
// Wait policy
// ----------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Coded,
    Speculative,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::Coded => write!(f, "coded"),
            Strategy::Speculative => write!(f, "speculative"),
        }
    }
}

/// How to wait: the speculative baseline relaunches stragglers once a
/// fraction `q` of tasks is done; the coded strategy decodes around them,
/// applying the same restart rule (with `stage_q`) only to the encode and
/// decode stages, and falls back to recomputation for undecodable subgrids.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Policy {
    pub strategy: Strategy,
    /// Completion fraction that triggers speculative relaunch.
    pub q: f64,
    /// Restart fraction for the encode/decode stages of the coded pipeline.
    pub stage_q: f64,
    /// Recompute deadline as a quantile of compute completions; defaults to
    /// the time when every non-straggler is done.
    pub deadline_quantile: Option<f64>,
    /// With recomputation off, an undecodable subgrid aborts the run
    /// (test mode).
    pub recompute: bool,
}

impl Default for Policy {
    fn default() -> Self {
        Policy {
            strategy: Strategy::Coded,
            q: 0.79,
            stage_q: 0.9,
            deadline_quantile: None,
            recompute: true,
        }
    }
}

impl Policy {
    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(Error::Config(format!("policy.q = {} outside (0, 1]", self.q)));
        }
        if !(self.stage_q > 0.0 && self.stage_q <= 1.0) {
            return Err(Error::Config(format!(
                "policy.stage_q = {} outside (0, 1]",
                self.stage_q
            )));
        }
        if let Some(dq) = self.deadline_quantile {
            if !(dq > 0.0 && dq <= 1.0) {
                return Err(Error::Config(format!(
                    "policy.deadline_quantile = {dq} outside (0, 1]"
                )));
            }
        }
        Ok(())
    }
}

// ----------
// Workers and test hooks
// ----------

/// Worker pool sizes per stage; 0 means unbounded (the serverless default).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Workers {
    pub encode: usize,
    pub compute: usize,
    pub decode: usize,
}

/// Test hook: stage-local task ids forced to straggle regardless of the
/// random draw. Ids outside a stage's task range are ignored.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForcedStragglers {
    pub encode: Vec<usize>,
    pub compute: Vec<usize>,
    pub decode: Vec<usize>,
}

// ----------
// Top-level config
// ----------

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub model: StragglerModel,
    pub store: StoreModel,
    pub policy: Policy,
    pub workers: Workers,
    pub forced: ForcedStragglers,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.store.validate()?;
        self.policy.validate()
    }

    /// Parses a TOML document; absent fields take defaults, unknown keys
    /// are rejected.
    pub fn from_toml_str(text: &str) -> Result<SimConfig> {
        let cfg: SimConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization")
    }
}
