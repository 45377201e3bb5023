//! Steady-state stochastic hybrid system (SHS) solver for age processes.
//!
//! A model is a finite continuous-time Markov chain whose transitions carry
//! binary reset maps acting on a vector of age-like continuous variables.
//! Between transitions every component grows at the rate given by the
//! current state's drift vector. In steady state the first moments of the
//! continuous variables are obtained from two dense linear systems: the
//! global balance equations for the stationary distribution, and the
//! correlation system `v_q * out_q = b_q * pi_q + sum_in rate * v_from * A`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Residual accepted for the solved linear systems.
pub const RESIDUAL_TOL: f64 = 1e-10;

/// Pivot ratio below which a factorized system is declared singular.
const SINGULAR_PIVOT_RATIO: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShsError {
    #[error("empty model: need at least one state and one age component")]
    Empty,
    #[error("transition {index}: state {state} out of range (num_states = {num_states})")]
    StateOutOfRange {
        index: usize,
        state: usize,
        num_states: usize,
    },
    #[error("transition {index}: nonpositive rate {rate}")]
    NonpositiveRate { index: usize, rate: f64 },
    #[error("transition {index}: reset map is {rows}x{cols}, expected {dim}x{dim}")]
    ResetShape {
        index: usize,
        rows: usize,
        cols: usize,
        dim: usize,
    },
    #[error("transition {index}: reset map entry ({row},{col}) = {value} is not 0 or 1")]
    ResetEntry {
        index: usize,
        row: usize,
        col: usize,
        value: u8,
    },
    #[error("model has {got} drift vectors, expected one per state ({expected})")]
    DriftCount { got: usize, expected: usize },
    #[error("state {state}: drift vector has length {len}, expected {dim}")]
    DriftShape { state: usize, len: usize, dim: usize },
    #[error("state {state}: drift entry {value} is not 0 or 1")]
    DriftEntry { state: usize, value: u8 },
    #[error("chain is not irreducible: state {state} is not mutually reachable with state 0")]
    NotIrreducible { state: usize },
    #[error("balance equations are singular")]
    SingularBalance,
    #[error("no finite age: correlation system is singular")]
    NoFiniteAge,
    #[error("solved system residual {residual:e} exceeds tolerance")]
    Residual { residual: f64 },
    #[error("stationary distribution has {got} entries, model has {expected} states")]
    DistributionShape { got: usize, expected: usize },
    #[error("age component {component} out of range (age_dim = {age_dim})")]
    ComponentOutOfRange { component: usize, age_dim: usize },
}

/// A square 0/1 matrix `A` applied as `x' = x A` (row vector convention).
///
/// Column `c` lists which pre-transition components sum into the
/// post-transition component `c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResetMap {
    rows: usize,
    cols: usize,
    entries: Vec<u8>,
}

impl ResetMap {
    pub fn identity(dim: usize) -> Self {
        let mut entries = vec![0; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = 1;
        }
        Self {
            rows: dim,
            cols: dim,
            entries,
        }
    }

    /// Builds a map from rows. Entry values are checked by
    /// [`ShsModel::validate`], so malformed maps can still be reported.
    ///
    /// Panics if the rows have different lengths.
    pub fn from_rows(rows: &[&[u8]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(
            rows.iter().all(|r| r.len() == cols),
            "reset map rows must have equal length"
        );
        Self {
            rows: rows.len(),
            cols,
            entries: rows.concat(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.entries[row * self.cols + col]
    }

    /// Applies the map to a row vector.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.cols)
            .map(|c| (0..self.rows).map(|r| x[r] * f64::from(self.get(r, c))).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub from: usize,
    pub to: usize,
    pub rate: f64,
    pub reset: ResetMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShsModel {
    pub num_states: usize,
    pub age_dim: usize,
    pub transitions: Vec<Transition>,
    pub drifts: Vec<Vec<u8>>,
}

/// Summary of a model that passed validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidationReport {
    pub num_states: usize,
    pub num_transitions: usize,
    pub self_transitions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDist {
    pub probs: Vec<f64>,
}

/// Limits `v_q` of `E[x(t) 1{q(t) = q}]`, one row per discrete state.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationVectors {
    num_states: usize,
    age_dim: usize,
    values: Vec<f64>,
}

impl CorrelationVectors {
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn age_dim(&self) -> usize {
        self.age_dim
    }

    pub fn get(&self, state: usize, component: usize) -> f64 {
        self.values[state * self.age_dim + component]
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.age_dim..(state + 1) * self.age_dim]
    }
}

impl ShsModel {
    pub fn new(num_states: usize, age_dim: usize) -> Self {
        Self {
            num_states,
            age_dim,
            transitions: Vec::new(),
            drifts: vec![vec![1; age_dim]; num_states],
        }
    }

    pub fn add_transition(&mut self, from: usize, to: usize, rate: f64, reset: ResetMap) {
        self.transitions.push(Transition {
            from,
            to,
            rate,
            reset,
        });
    }

    /// Checks every structural invariant and returns the first violation.
    pub fn validate(&self) -> Result<ValidationReport, ShsError> {
        if self.num_states == 0 || self.age_dim == 0 {
            return Err(ShsError::Empty);
        }
        let mut self_transitions = 0;
        for (index, t) in self.transitions.iter().enumerate() {
            for state in [t.from, t.to] {
                if state >= self.num_states {
                    return Err(ShsError::StateOutOfRange {
                        index,
                        state,
                        num_states: self.num_states,
                    });
                }
            }
            if !(t.rate > 0.0) || !t.rate.is_finite() {
                return Err(ShsError::NonpositiveRate {
                    index,
                    rate: t.rate,
                });
            }
            let (rows, cols) = t.reset.shape();
            if rows != self.age_dim || cols != self.age_dim {
                return Err(ShsError::ResetShape {
                    index,
                    rows,
                    cols,
                    dim: self.age_dim,
                });
            }
            for row in 0..self.age_dim {
                for col in 0..self.age_dim {
                    let value = t.reset.get(row, col);
                    if value > 1 {
                        return Err(ShsError::ResetEntry {
                            index,
                            row,
                            col,
                            value,
                        });
                    }
                }
            }
            if t.from == t.to {
                self_transitions += 1;
            }
        }
        if self.drifts.len() != self.num_states {
            return Err(ShsError::DriftCount {
                got: self.drifts.len(),
                expected: self.num_states,
            });
        }
        for (state, b) in self.drifts.iter().enumerate() {
            if b.len() != self.age_dim {
                return Err(ShsError::DriftShape {
                    state,
                    len: b.len(),
                    dim: self.age_dim,
                });
            }
            if let Some(&value) = b.iter().find(|&&v| v > 1) {
                return Err(ShsError::DriftEntry { state, value });
            }
        }
        self.check_irreducible()?;
        Ok(ValidationReport {
            num_states: self.num_states,
            num_transitions: self.transitions.len(),
            self_transitions,
        })
    }

    fn check_irreducible(&self) -> Result<(), ShsError> {
        let n = self.num_states;
        let mut forward = vec![Vec::new(); n];
        let mut backward = vec![Vec::new(); n];
        for t in self.transitions.iter().filter(|t| t.from != t.to) {
            forward[t.from].push(t.to);
            backward[t.to].push(t.from);
        }
        for adjacency in [&forward, &backward] {
            let seen = reachable_from_zero(adjacency);
            if let Some(state) = seen.iter().position(|&s| !s) {
                return Err(ShsError::NotIrreducible { state });
            }
        }
        Ok(())
    }

    /// Total outgoing rate of each state, self-transitions included.
    fn exit_rates(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.num_states];
        for t in &self.transitions {
            out[t.from] += t.rate;
        }
        out
    }

    /// Solves both linear systems and returns `(pi, v)`.
    pub fn solve(&self) -> Result<(StationaryDist, CorrelationVectors), ShsError> {
        let pi = stationary_distribution(self)?;
        let v = solve_correlations(self, &pi)?;
        Ok((pi, v))
    }
}

fn reachable_from_zero(adjacency: &[Vec<usize>]) -> Vec<bool> {
    let mut seen = vec![false; adjacency.len()];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(q) = queue.pop_front() {
        for &next in &adjacency[q] {
            if !seen[next] {
                seen[next] = true;
                queue.push_back(next);
            }
        }
    }
    seen
}

/// LU solve with partial pivoting; `None` when a pivot collapses relative
/// to the largest one.
fn solve_dense(a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let lu = a.lu();
    let u = lu.u();
    let diag = u.diagonal();
    let max = diag.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
    let min = diag.iter().fold(f64::INFINITY, |m, d| m.min(d.abs()));
    if !(max > 0.0) || min <= SINGULAR_PIVOT_RATIO * max {
        return None;
    }
    lu.solve(b)
}

fn relative_residual(a: &DMatrix<f64>, x: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let r = a * x - b;
    let scale = 1.0_f64.max(b.amax()).max(a.amax() * x.amax());
    r.amax() / scale
}

/// Stationary distribution of the discrete chain.
///
/// Self-transitions appear on both sides of the balance equations and are
/// left out of the assembly entirely.
pub fn stationary_distribution(model: &ShsModel) -> Result<StationaryDist, ShsError> {
    model.validate()?;
    let n = model.num_states;
    let mut a = DMatrix::<f64>::zeros(n, n);
    for t in model.transitions.iter().filter(|t| t.from != t.to) {
        a[(t.from, t.from)] += t.rate;
        a[(t.to, t.from)] -= t.rate;
    }
    // One balance equation is redundant; replace the last by normalization.
    for q in 0..n {
        a[(n - 1, q)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;

    let x = solve_dense(a.clone(), &b).ok_or(ShsError::SingularBalance)?;
    let residual = relative_residual(&a, &x, &b);
    if residual > RESIDUAL_TOL {
        return Err(ShsError::Residual { residual });
    }
    Ok(StationaryDist {
        probs: x.iter().copied().collect(),
    })
}

/// Solves the correlation system for every `(state, component)` unknown.
pub fn solve_correlations(
    model: &ShsModel,
    pi: &StationaryDist,
) -> Result<CorrelationVectors, ShsError> {
    model.validate()?;
    let n = model.num_states;
    let d = model.age_dim;
    if pi.probs.len() != n {
        return Err(ShsError::DistributionShape {
            got: pi.probs.len(),
            expected: n,
        });
    }
    let idx = |q: usize, c: usize| q * d + c;
    let out = model.exit_rates();
    let mut a = DMatrix::<f64>::zeros(n * d, n * d);
    let mut b = DVector::<f64>::zeros(n * d);
    for q in 0..n {
        for c in 0..d {
            a[(idx(q, c), idx(q, c))] += out[q];
            b[idx(q, c)] = f64::from(model.drifts[q][c]) * pi.probs[q];
        }
    }
    for t in &model.transitions {
        // (v_from A)_c = sum_r v_{from,r} A[r][c]
        for c in 0..d {
            for r in 0..d {
                if t.reset.get(r, c) == 1 {
                    a[(idx(t.to, c), idx(t.from, r))] -= t.rate;
                }
            }
        }
    }
    let x = solve_dense(a.clone(), &b).ok_or(ShsError::NoFiniteAge)?;
    let residual = relative_residual(&a, &x, &b);
    if residual > RESIDUAL_TOL || x.iter().any(|v| !v.is_finite()) {
        return Err(ShsError::NoFiniteAge);
    }
    Ok(CorrelationVectors {
        num_states: n,
        age_dim: d,
        values: x.iter().copied().collect(),
    })
}

/// Average of one continuous component: the sum of its correlations over
/// all discrete states.
pub fn average_age(v: &CorrelationVectors, component: usize) -> Result<f64, ShsError> {
    if component >= v.age_dim {
        return Err(ShsError::ComponentOutOfRange {
            component,
            age_dim: v.age_dim,
        });
    }
    Ok((0..v.num_states).map(|q| v.get(q, component)).sum())
}
