//! Reproducible experiment drivers: the two-link age surface, the density
//! study of slotted against idealized CSMA, and the CSMA / Round Robin
//! comparison.
//!
//! Independent cells and runs are evaluated on the rayon pool; results are
//! always collected in input order, so outputs do not depend on scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csma::{self, CsmaError, NetworkParams};
use crate::optimizer::{self, OptimizeError, OptimizerInputs};
use crate::round_robin;
use crate::sim::{self, Mac, SimError, SimScenario};

/// Back-off cap used as "unconstrained", relative to the fastest link.
const UNCONSTRAINED_RUB_FACTOR: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("sweep needs exactly two links, got {0}")]
    SweepLinks(usize),
    #[error("grid needs at least 2 points per axis, got {0}")]
    GridTooSmall(usize),
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error("simulation did not record a delivery for every link (seed {seed})")]
    Unconverged { seed: u64 },
    #[error(transparent)]
    Network(#[from] CsmaError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Linear,
    Log,
}

/// Grid points on `(0, r_ub]`.
pub fn axis(r_ub: f64, points: usize, spacing: Spacing) -> Vec<f64> {
    match spacing {
        Spacing::Linear => (1..=points).map(|i| r_ub * i as f64 / points as f64).collect(),
        Spacing::Log => {
            // three decades below the cap
            let lo = (r_ub * 1e-3).ln();
            let step = (r_ub.ln() - lo) / (points - 1) as f64;
            let mut v: Vec<f64> = (0..points).map(|i| (lo + step * i as f64).exp()).collect();
            v[points - 1] = r_ub;
            v
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub r1: f64,
    pub r2: f64,
    pub total_age: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    /// Index of the smallest total age (first one on ties).
    pub min_index: usize,
    pub axis: Vec<f64>,
}

impl Sweep {
    pub fn minimum(&self) -> SweepRow {
        self.rows[self.min_index]
    }
}

/// Closed-form total age over a two-link back-off grid. Rows are ordered
/// with `r1` outer and `r2` inner.
pub fn sweep(
    arrival: &[f64],
    holding: &[f64],
    r_ub: f64,
    points: usize,
    spacing: Spacing,
) -> Result<Sweep, ExperimentError> {
    if holding.len() != 2 || arrival.len() != 2 {
        return Err(ExperimentError::SweepLinks(holding.len()));
    }
    if points < 2 {
        return Err(ExperimentError::GridTooSmall(points));
    }
    OptimizerInputs::new(holding.to_vec(), r_ub)?;
    let grid = axis(r_ub, points, spacing);
    let rows: Vec<SweepRow> = grid
        .par_iter()
        .map(|&r1| {
            grid.iter()
                .map(|&r2| {
                    let p = NetworkParams::from_rates(arrival, holding, &[r1, r2])?;
                    Ok(SweepRow {
                        r1,
                        r2,
                        total_age: csma::total_age(&p)?.total,
                    })
                })
                .collect::<Result<Vec<_>, CsmaError>>()
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    let min_index = rows
        .iter()
        .enumerate()
        .fold(0, |best, (i, r)| if r.total_age < rows[best].total_age { i } else { best });
    Ok(Sweep {
        rows,
        min_index,
        axis: grid,
    })
}

/// Optimal total age of the idealized model with the back-off cap lifted.
pub fn unconstrained_optimum(arrival: &[f64], holding: &[f64]) -> Result<f64, ExperimentError> {
    let h_max = holding.iter().copied().fold(0.0, f64::max);
    let inputs = OptimizerInputs::new(holding.to_vec(), UNCONSTRAINED_RUB_FACTOR * h_max)?;
    Ok(optimizer::optimize_backoff(&inputs, 1.0, arrival)?.achieved_total_age)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityConfig {
    pub nodes: Vec<usize>,
    pub w0_candidates: Vec<u32>,
    pub t_slot: f64,
    pub holding_rate: f64,
    pub arrival_rate: f64,
    pub horizon: f64,
    pub seeds: u64,
    pub base_seed: u64,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            nodes: vec![2, 4, 6, 8],
            w0_candidates: vec![16, 32, 64, 128],
            t_slot: 0.009,
            holding_rate: 1.0,
            arrival_rate: 1.0,
            horizon: 1e5,
            seeds: 10,
            base_seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub nodes: usize,
    pub ideal_age: f64,
    pub slotted_age: f64,
    pub best_w0: u32,
    /// `100 * (slotted - ideal) / ideal`
    pub gap_percent: f64,
    /// Seed-averaged slotted age for every candidate, in candidate order.
    pub per_w0: Vec<(u32, f64)>,
}

/// Slotted CSMA with optimized windows against the unconstrained idealized
/// optimum, for each network size.
pub fn density(cfg: &DensityConfig) -> Result<Vec<DensityRow>, ExperimentError> {
    if cfg.nodes.is_empty() {
        return Err(ExperimentError::Empty("nodes"));
    }
    if cfg.w0_candidates.is_empty() {
        return Err(ExperimentError::Empty("w0_candidates"));
    }
    if cfg.seeds == 0 {
        return Err(ExperimentError::Empty("seeds"));
    }
    let mut rows = Vec::with_capacity(cfg.nodes.len());
    for &n in &cfg.nodes {
        let arrival = vec![cfg.arrival_rate; n];
        let holding = vec![cfg.holding_rate; n];
        let ideal_age = unconstrained_optimum(&arrival, &holding)?;

        let mut jobs = Vec::new();
        for &w0 in &cfg.w0_candidates {
            let r_ub = optimizer::r_upper_bound(w0, cfg.t_slot)?;
            let inputs = OptimizerInputs::new(holding.clone(), r_ub)?;
            let assignment = optimizer::optimize_backoff(&inputs, cfg.t_slot, &arrival)?;
            for s in 0..cfg.seeds {
                let params = NetworkParams::from_rates(&arrival, &holding, &assignment.backoff_rates)?;
                let mac = Mac::Slotted {
                    t_slot: cfg.t_slot,
                    windows: assignment.rounded_windows.clone(),
                };
                jobs.push(SimScenario::new(params, mac, cfg.horizon, cfg.base_seed + s));
            }
        }
        let ages = jobs
            .par_iter()
            .map(|s| {
                let r = sim::simulate(s)?;
                if !r.converged {
                    return Err(ExperimentError::Unconverged { seed: s.seed });
                }
                Ok(r.total_age)
            })
            .collect::<Result<Vec<_>, ExperimentError>>()?;
        let per_w0: Vec<(u32, f64)> = cfg
            .w0_candidates
            .iter()
            .zip(ages.chunks(cfg.seeds as usize))
            .map(|(&w0, chunk)| (w0, chunk.iter().sum::<f64>() / chunk.len() as f64))
            .collect();
        let (best_w0, slotted_age) = per_w0
            .iter()
            .copied()
            .fold((0, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc });
        rows.push(DensityRow {
            nodes: n,
            ideal_age,
            slotted_age,
            best_w0,
            gap_percent: 100.0 * (slotted_age - ideal_age) / ideal_age,
            per_w0,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub scheme: String,
    pub total_age: f64,
    pub note: String,
}

/// Optimized CSMA against Round Robin, both analytically and by simulation.
pub fn compare(
    arrival: &[f64],
    holding: &[f64],
    r_ub: f64,
    t_slot: f64,
    horizon: f64,
    seed: u64,
) -> Result<Vec<CompareRow>, ExperimentError> {
    let inputs = OptimizerInputs::new(holding.to_vec(), r_ub)?;
    let assignment = optimizer::optimize_backoff(&inputs, t_slot, arrival)?;
    let csma_params = NetworkParams::from_rates(arrival, holding, &assignment.backoff_rates)?;
    let n = holding.len();
    let rr_params = NetworkParams::from_rates(arrival, holding, &vec![0.0; n])?;
    let scenarios = [
        SimScenario::new(csma_params, Mac::Idealized, horizon, seed),
        SimScenario::new(
            rr_params.clone(),
            Mac::RoundRobin {
                order: (0..n).collect(),
            },
            horizon,
            seed,
        ),
    ];
    let sims = scenarios
        .par_iter()
        .map(sim::simulate)
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(s) = sims.iter().position(|r| !r.converged) {
        return Err(ExperimentError::Unconverged {
            seed: scenarios[s].seed,
        });
    }
    let rates = assignment
        .backoff_rates
        .iter()
        .map(|r| format!("{r:.4}"))
        .collect::<Vec<_>>()
        .join(";");
    Ok(vec![
        CompareRow {
            scheme: "csma_optimized_closed_form".into(),
            total_age: assignment.achieved_total_age,
            note: format!("R*={rates}"),
        },
        CompareRow {
            scheme: "csma_optimized_simulated".into(),
            total_age: sims[0].total_age,
            note: "idealized CSMA at R*".into(),
        },
        CompareRow {
            scheme: "round_robin_closed_form".into(),
            total_age: round_robin::total_age(&rr_params)?,
            note: "cyclic order, exponential turns, fake updates, no idle gaps".into(),
        },
        CompareRow {
            scheme: "round_robin_simulated".into(),
            total_age: sims[1].total_age,
            note: "same Round Robin model, simulated".into(),
        },
    ])
}
