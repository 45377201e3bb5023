//! JSON experiment configuration. Times are in ms, rates in 1/ms.

use std::path::Path;

use csma_aoi::experiments::{DensityConfig, Spacing};
use csma_aoi::optimizer;
use csma_aoi::NetworkParams;
use serde::Deserialize;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    pub network: Network,
    #[serde(default = "default_w0")]
    pub w0: u32,
    #[serde(default = "default_t_slot")]
    pub t_slot: f64,
    /// Overrides the cap derived from `w0` and `t_slot`.
    #[serde(default)]
    pub r_ub: Option<f64>,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default)]
    pub simulation: Simulation,
    #[serde(default)]
    pub density: Density,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Network {
    pub arrival_rates: Vec<f64>,
    pub holding_rates: Vec<f64>,
    #[serde(default)]
    pub backoff_rates: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sweep {
    pub grid: usize,
    pub spacing: Spacing,
}

impl Default for Sweep {
    fn default() -> Self {
        Self {
            grid: 100,
            spacing: Spacing::Linear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MacKind {
    Idealized,
    Slotted,
    RoundRobin,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Simulation {
    pub mac: MacKind,
    pub horizon_ms: f64,
    pub warmup_ms: Option<f64>,
    pub seed: u64,
    /// Slotted mode only; derived from the back-off rates when absent.
    pub windows: Option<Vec<u32>>,
    /// Round Robin only; defaults to link order.
    pub order: Option<Vec<usize>>,
}

impl Default for Simulation {
    fn default() -> Self {
        Self {
            mac: MacKind::Idealized,
            horizon_ms: 1e5,
            warmup_ms: None,
            seed: 1,
            windows: None,
            order: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Density {
    pub nodes: Vec<usize>,
    pub w0_candidates: Vec<u32>,
    pub seeds: u64,
    pub horizon_ms: f64,
}

impl Default for Density {
    fn default() -> Self {
        let d = DensityConfig::default();
        Self {
            nodes: d.nodes,
            w0_candidates: d.w0_candidates,
            seeds: d.seeds,
            horizon_ms: d.horizon,
        }
    }
}

fn default_w0() -> u32 {
    16
}

fn default_t_slot() -> f64 {
    0.009
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub grid: Option<usize>,
    pub horizon_ms: Option<f64>,
}

impl Config {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Config = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("invalid config: {e}")))?;
        if let Some(seed) = overrides.seed {
            cfg.simulation.seed = seed;
        }
        if let Some(grid) = overrides.grid {
            cfg.sweep.grid = grid;
        }
        if let Some(h) = overrides.horizon_ms {
            cfg.simulation.horizon_ms = h;
            cfg.density.horizon_ms = h;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Validation(format!(
                "unsupported schema_version {}, expected {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        let n = self.network.holding_rates.len();
        if self.network.arrival_rates.len() != n {
            return Err(CliError::Validation(format!(
                "network has {} arrival rates but {n} holding rates",
                self.network.arrival_rates.len()
            )));
        }
        if let Some(r) = &self.network.backoff_rates {
            NetworkParams::from_rates(&self.network.arrival_rates, &self.network.holding_rates, r)?;
        } else {
            NetworkParams::from_rates(&self.network.arrival_rates, &self.network.holding_rates, &vec![0.0; n])?;
        }
        if self.w0 < 2 {
            return Err(CliError::Validation(format!("w0 must be at least 2, got {}", self.w0)));
        }
        if !(self.t_slot > 0.0 && self.t_slot.is_finite()) {
            return Err(CliError::Validation(format!("t_slot must be positive, got {}", self.t_slot)));
        }
        if let Some(r) = self.r_ub {
            if !(r > 0.0 && r.is_finite()) {
                return Err(CliError::Validation(format!("r_ub must be positive, got {r}")));
            }
        }
        if self.sweep.grid < 2 {
            return Err(CliError::Validation(format!(
                "sweep grid needs at least 2 points per axis, got {}",
                self.sweep.grid
            )));
        }
        for (name, h) in [
            ("simulation.horizon_ms", self.simulation.horizon_ms),
            ("density.horizon_ms", self.density.horizon_ms),
        ] {
            if !(h > 0.0 && h.is_finite()) {
                return Err(CliError::Validation(format!("{name} must be positive, got {h}")));
            }
        }
        Ok(())
    }

    pub fn r_ub(&self) -> Result<f64, CliError> {
        match self.r_ub {
            Some(r) => Ok(r),
            None => Ok(optimizer::r_upper_bound(self.w0, self.t_slot)?),
        }
    }

    /// Network with the configured back-off rates, required by `command`.
    pub fn params(&self, command: &str) -> Result<NetworkParams, CliError> {
        let r = self.network.backoff_rates.as_ref().ok_or_else(|| {
            CliError::Validation(format!("network.backoff_rates is required for {command}"))
        })?;
        Ok(NetworkParams::from_rates(&self.network.arrival_rates, &self.network.holding_rates, r)?)
    }

    /// Network with back-off rates set to zero, for schemes that ignore them.
    pub fn params_without_backoff(&self) -> Result<NetworkParams, CliError> {
        let n = self.network.holding_rates.len();
        Ok(NetworkParams::from_rates(&self.network.arrival_rates, &self.network.holding_rates, &vec![0.0; n])?)
    }

    pub fn density_config(&self) -> Result<DensityConfig, CliError> {
        let [arrival_rate, holding_rate] = [&self.network.arrival_rates, &self.network.holding_rates]
            .map(|v| v.first().copied().unwrap_or(1.0));
        Ok(DensityConfig {
            nodes: self.density.nodes.clone(),
            w0_candidates: self.density.w0_candidates.clone(),
            t_slot: self.t_slot,
            holding_rate,
            arrival_rate,
            horizon: self.density.horizon_ms,
            seeds: self.density.seeds,
            base_seed: self.simulation.seed,
        })
    }
}
