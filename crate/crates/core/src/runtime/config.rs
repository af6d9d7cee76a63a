//! Runtime configuration, read from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::PowerConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Simulated host/accelerator data movement cost.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferModel {
    pub fixed_latency_ns: f64,
    pub bytes_per_ns: f64,
    pub overhead_ns: f64,
}

impl Default for TransferModel {
    fn default() -> Self {
        TransferModel { fixed_latency_ns: 100_000_000.0, bytes_per_ns: 1.0, overhead_ns: 20_000.0 }
    }
}

impl TransferModel {
    pub fn transfer_ns(&self, bytes_in: u64, bytes_out: u64) -> f64 {
        self.fixed_latency_ns + bytes_in as f64 / self.bytes_per_ns + bytes_out as f64 / self.bytes_per_ns + self.overhead_ns
    }

    fn validate(&self) -> Result<(), String> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.fixed_latency_ns) && ok(self.overhead_ns)) {
            return Err("transfer latency and overhead must be finite and >= 0".into());
        }
        if !(self.bytes_per_ns.is_finite() && self.bytes_per_ns > 0.0) {
            return Err("transfer bandwidth must be finite and > 0".into());
        }
        Ok(())
    }
}

/// Quantity the controller compares between backends.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    #[default]
    Speed,
    Energy,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Profile-driven offload and revert.
    #[default]
    Adaptive,
    CpuOnly,
    /// Every eligible invocation runs on the accelerator.
    AccelOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeConfig {
    pub mode: Mode,
    pub policy: Policy,
    /// Accelerator workers `W`.
    pub workers: usize,
    /// Cores the cpu backend is credited with when converting vcycles to
    /// deterministic time. The backend itself always runs sequentially.
    pub cpu_workers: usize,
    /// Iterations per accelerator task; `None` derives it from the extent.
    pub grain: Option<u64>,
    /// Probe invocations `K` per backend before a hold or revert.
    pub probes: usize,
    /// Revert when accelerator cost exceeds `beta` times cpu cost.
    pub beta: f64,
    /// Hotness threshold as a share of window vcycles.
    pub threshold: f64,
    pub window_ns: f64,
    pub window_vcycles: u64,
    pub max_reverts: u32,
    pub specialize: bool,
    /// Invocations with equal values before a parameter is specialized on.
    pub stability_window: u32,
    pub cache_capacity: usize,
    /// Report time as `vcycles * cycle_ns` instead of measuring it.
    pub deterministic: bool,
    pub cycle_ns: f64,
    pub transfer: TransferModel,
    pub power: PowerConfig,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            mode: Mode::Adaptive,
            policy: Policy::Speed,
            workers: 4,
            cpu_workers: 1,
            grain: None,
            probes: 5,
            beta: 1.0,
            threshold: 0.10,
            window_ns: 100_000_000.0,
            window_vcycles: 10_000_000,
            max_reverts: 3,
            specialize: true,
            stability_window: 3,
            cache_capacity: 32,
            deterministic: false,
            cycle_ns: 1.0,
            transfer: TransferModel::default(),
            power: PowerConfig::default(),
        }
    }
}

impl RuntimeConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RuntimeConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.workers == 0 || self.cpu_workers == 0 {
            return bad("workers and cpu_workers must be >= 1");
        }
        if self.grain == Some(0) {
            return bad("grain must be >= 1");
        }
        if self.probes == 0 {
            return bad("probes must be >= 1");
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return bad("beta must be finite and > 0");
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return bad("threshold must be in (0, 1]");
        }
        if !(self.window_ns.is_finite() && self.window_ns > 0.0) || self.window_vcycles == 0 {
            return bad("window bounds must be > 0");
        }
        if self.stability_window == 0 || self.cache_capacity == 0 {
            return bad("stability_window and cache_capacity must be >= 1");
        }
        if !(self.cycle_ns.is_finite() && self.cycle_ns > 0.0) {
            return bad("cycle_ns must be finite and > 0");
        }
        self.transfer.validate().map_err(ConfigError::Invalid)?;
        self.power.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}
