//! Age-optimal back-off rates.
//!
//! Minimizing the total age over `0 <= R_k <= R_UB` is a sum-of-ratios
//! problem in `R`, but the substitution `eps = 1/C(R)`, `f_k = eps * R_k`
//! turns it into a convex program:
//!
//! ```text
//! minimize    N * sum f_k / H_k^2 + sum 1 / f_k
//! subject to  0 <= f_k <= eps * R_UB
//!             1 / (1 + sum R_UB / H_k) <= eps <= 1
//!             sum f_k / H_k = 1 - eps
//! ```
//!
//! [`solve_kkt`] first tests whether the fully saturated point
//! (`R_k = R_UB` for all k) satisfies the KKT conditions, and otherwise runs
//! a nested one-dimensional search: for fixed `eps` the optimal `f` is a
//! water-filling profile `f_k = min(eps R_UB, sqrt(H_k / (N/H_k + rho)))`
//! with `rho` fixed by the equality constraint, and the outer search drives
//! the derivative of the profile value with respect to `eps` to zero.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csma::{self, CsmaError, NetworkParams};

/// Iteration cap shared by both bisection loops.
pub const MAX_ITERATIONS: usize = 10_000;

/// Accepted residual of the water-filling equality constraint.
const CONSTRAINT_TOL: f64 = 1e-10;

/// Lowest back-off rate the brute-force search considers, as a fraction of
/// `R_UB`.
const BRUTE_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizeError {
    #[error("holding rates must be nonempty, positive and finite")]
    InvalidHoldingRates,
    #[error("back-off rate upper bound must be positive and finite, got {0}")]
    InvalidUpperBound(f64),
    #[error("minimal contention window must be at least 2, got {0}")]
    InvalidWindow(u32),
    #[error("slot time must be positive and finite, got {0}")]
    InvalidSlotTime(f64),
    #[error("rate must be positive and finite, got {0}")]
    InvalidRate(f64),
    #[error("expected {expected} reference arrival rates, got {got}")]
    LambdaCount { expected: usize, got: usize },
    #[error("solver did not converge after {iterations} iterations (eps residual {eps_residual:e}, constraint residual {constraint_residual:e})")]
    NonConvergence {
        iterations: usize,
        eps_residual: f64,
        constraint_residual: f64,
    },
    #[error(transparent)]
    Network(#[from] CsmaError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerInputs {
    /// Channel holding rates `H_k`. Arrival rates do not enter the problem.
    pub holding_rates: Vec<f64>,
    /// Upper bound on every back-off rate.
    pub r_ub: f64,
}

impl OptimizerInputs {
    pub fn new(holding_rates: Vec<f64>, r_ub: f64) -> Result<Self, OptimizeError> {
        let inputs = Self { holding_rates, r_ub };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn validate(&self) -> Result<(), OptimizeError> {
        if self.holding_rates.is_empty()
            || self.holding_rates.iter().any(|&h| !(h > 0.0 && h.is_finite()))
        {
            return Err(OptimizeError::InvalidHoldingRates);
        }
        if !(self.r_ub > 0.0 && self.r_ub.is_finite()) {
            return Err(OptimizeError::InvalidUpperBound(self.r_ub));
        }
        Ok(())
    }

    pub fn num_links(&self) -> usize {
        self.holding_rates.len()
    }

    /// `x = sum 1/H_k`
    pub fn x_sum(&self) -> f64 {
        self.holding_rates.iter().map(|h| 1.0 / h).sum()
    }

    /// `y = sum 1/H_k^2`
    pub fn y_sum(&self) -> f64 {
        self.holding_rates.iter().map(|h| 1.0 / (h * h)).sum()
    }

    /// Smallest feasible `eps`, reached when every link backs off at `R_UB`.
    pub fn eps_min(&self) -> f64 {
        1.0 / (1.0 + self.r_ub * self.x_sum())
    }
}

/// Upper bound on the back-off rate implied by a minimal contention window:
/// `2 / ((W_0 - 1) T_slot)`.
pub fn r_upper_bound(w0: u32, t_slot: f64) -> Result<f64, OptimizeError> {
    if w0 < 2 {
        return Err(OptimizeError::InvalidWindow(w0));
    }
    if !(t_slot > 0.0 && t_slot.is_finite()) {
        return Err(OptimizeError::InvalidSlotTime(t_slot));
    }
    Ok(2.0 / (f64::from(w0 - 1) * t_slot))
}

/// Real-valued contention window whose mean uniform back-off equals `1/r`.
pub fn contention_window(r: f64, t_slot: f64) -> Result<f64, OptimizeError> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(OptimizeError::InvalidRate(r));
    }
    if !(t_slot > 0.0 && t_slot.is_finite()) {
        return Err(OptimizeError::InvalidSlotTime(t_slot));
    }
    Ok(2.0 / (t_slot * r) + 1.0)
}

/// Nearest integer (ties up), never below `w0`.
pub fn round_window(w: f64, w0: u32) -> u32 {
    let rounded = (w + 0.5).floor();
    if rounded >= f64::from(u32::MAX) {
        u32::MAX
    } else {
        (rounded as u32).max(w0)
    }
}

/// The back-off dependent part of the total age:
/// `N * (sum R_k/H_k^2) / C(R) + C(R) * sum 1/R_k`.
pub fn backoff_objective(holding_rates: &[f64], rates: &[f64]) -> f64 {
    if rates.iter().any(|&r| !(r > 0.0)) {
        return f64::INFINITY;
    }
    let n = holding_rates.len() as f64;
    let c = 1.0
        + rates
            .iter()
            .zip(holding_rates)
            .map(|(r, h)| r / h)
            .sum::<f64>();
    let weighted: f64 = rates
        .iter()
        .zip(holding_rates)
        .map(|(r, h)| r / (h * h))
        .sum();
    let inverse: f64 = rates.iter().map(|r| 1.0 / r).sum();
    n * weighted / c + c * inverse
}

/// Positivity certificate polynomial for the symmetric case:
/// `(H + N R)^3 - N R (H + N R)^2 - N H R^2`.
pub fn saturation_polynomial(n: u32, h: f64, r: f64) -> f64 {
    let n = f64::from(n);
    let s = h + n * r;
    s * s * s - n * r * s * s - n * h * r * r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationCheck {
    pub saturated: bool,
    /// Exclusive lower end of the admissible `rho` interval.
    pub rho_lower: f64,
    /// Inclusive upper end of the admissible `rho` interval.
    pub rho_upper: f64,
}

/// Tests whether `R_k = R_UB` for every link is optimal, i.e. whether some
/// `rho` makes every bound multiplier nonnegative while keeping the
/// multiplier of the `eps` lower bound strictly positive.
pub fn check_saturated(inputs: &OptimizerInputs) -> SaturationCheck {
    let n = inputs.num_links() as f64;
    let r = inputs.r_ub;
    let x = inputs.x_sum();
    let y = inputs.y_sum();
    let c = 1.0 + x * r;
    let rho_lower = n * c / r - n * y * r / c;
    let rho_upper = inputs
        .holding_rates
        .iter()
        .map(|h| h * c * c / (r * r) - n / h)
        .fold(f64::INFINITY, f64::min);
    SaturationCheck {
        saturated: rho_lower < rho_upper,
        rho_lower,
        rho_upper,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktSolution {
    pub f: Vec<f64>,
    pub eps: f64,
    pub rho: f64,
    pub mu: Vec<f64>,
    pub gamma: f64,
    pub nu: f64,
    pub eta: Vec<f64>,
    pub x_sum: f64,
    pub y_sum: f64,
    pub saturated: bool,
    /// Links whose `f_k` sits on the `eps * R_UB` bound.
    pub capped: Vec<bool>,
    pub r_ub: f64,
}

/// Largest violation of each group of KKT conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    /// Stationarity in each `f_k`.
    pub stationarity_f: f64,
    /// Stationarity in `eps`.
    pub stationarity_eps: f64,
    pub complementary: f64,
    /// Equality constraint `sum f/H = 1 - eps`.
    pub equality: f64,
    /// Bound and box violations (zero when feasible).
    pub primal: f64,
    /// Most negative multiplier, as a positive number (zero when dual feasible).
    pub dual: f64,
}

impl KktSolution {
    /// `R_k = f_k / eps`; capped links report `R_UB` exactly.
    pub fn backoff_rates(&self) -> Vec<f64> {
        self.f
            .iter()
            .zip(&self.capped)
            .map(|(&f, &capped)| {
                if capped {
                    self.r_ub
                } else {
                    (f / self.eps).min(self.r_ub)
                }
            })
            .collect()
    }

    /// Value of the convex objective, equal to [`backoff_objective`] at the
    /// corresponding rates.
    pub fn objective(&self, holding_rates: &[f64]) -> f64 {
        let n = holding_rates.len() as f64;
        self.f
            .iter()
            .zip(holding_rates)
            .map(|(f, h)| n * f / (h * h) + 1.0 / f)
            .sum()
    }

    pub fn residuals(&self, inputs: &OptimizerInputs) -> KktResiduals {
        let h = &inputs.holding_rates;
        let n = h.len() as f64;
        let r = inputs.r_ub;
        let eps_min = inputs.eps_min();
        let mut stationarity_f: f64 = 0.0;
        let mut complementary: f64 = 0.0;
        let mut primal: f64 = 0.0;
        let mut dual: f64 = 0.0;
        for (((&f, &hk), &mu), &eta) in self.f.iter().zip(h).zip(&self.mu).zip(&self.eta) {
            let s = n / (hk * hk) - 1.0 / (f * f) + mu - eta + self.rho / hk;
            stationarity_f = stationarity_f.max(s.abs());
            complementary = complementary
                .max((mu * (f - self.eps * r)).abs())
                .max((eta * f).abs());
            primal = primal.max(-f).max(f - self.eps * r);
            dual = dual.max(-mu).max(-eta);
        }
        let mu_sum: f64 = self.mu.iter().sum();
        let stationarity_eps = (self.rho + self.nu - self.gamma - r * mu_sum).abs();
        complementary = complementary
            .max((self.gamma * (eps_min - self.eps)).abs())
            .max((self.nu * (self.eps - 1.0)).abs());
        primal = primal.max(eps_min - self.eps).max(self.eps - 1.0);
        dual = dual.max(-self.gamma).max(-self.nu);
        let equality = (self
            .f
            .iter()
            .zip(h)
            .map(|(f, h)| f / h)
            .sum::<f64>()
            - (1.0 - self.eps))
            .abs();
        KktResiduals {
            stationarity_f,
            stationarity_eps,
            complementary,
            equality,
            primal,
            dual,
        }
    }
}

/// Optimal `f` for a fixed `eps`.
struct Profile {
    rho: f64,
    f: Vec<f64>,
    mu: Vec<f64>,
    capped: Vec<bool>,
    constraint_residual: f64,
}

impl Profile {
    /// Derivative of the profile value with respect to `eps`.
    fn slope(&self, r_ub: f64) -> f64 {
        self.rho - r_ub * self.mu.iter().sum::<f64>()
    }
}

fn water_level(h: f64, n: f64, rho: f64, cap: f64) -> (f64, bool) {
    let denom = n / h + rho;
    if denom <= 0.0 {
        return (cap, true);
    }
    let free = (h / denom).sqrt();
    if free >= cap {
        (cap, true)
    } else {
        (free, false)
    }
}

fn profile_sum(h: &[f64], n: f64, rho: f64, cap: f64) -> f64 {
    h.iter().map(|&hk| water_level(hk, n, rho, cap).0 / hk).sum()
}

/// Water-filling for fixed `eps`: bisection on `rho` so that
/// `sum min(eps R_UB, sqrt(H_k / (N/H_k + rho))) / H_k = 1 - eps`.
fn profile_at(inputs: &OptimizerInputs, eps: f64) -> Result<Profile, OptimizeError> {
    let h = &inputs.holding_rates;
    let n = h.len() as f64;
    let cap = eps * inputs.r_ub;
    let target = 1.0 - eps;

    // Every link is capped once N/H_k + rho <= 0 for all k.
    let h_min = h.iter().copied().fold(f64::INFINITY, f64::min);
    let mut lo = -n / h_min;
    let mut hi = lo.abs().max(1.0);
    let mut iterations = 0;
    while profile_sum(h, n, hi, cap) >= target {
        hi *= 2.0;
        iterations += 1;
        if iterations > MAX_ITERATIONS || !hi.is_finite() {
            return Err(OptimizeError::NonConvergence {
                iterations,
                eps_residual: f64::NAN,
                constraint_residual: f64::INFINITY,
            });
        }
    }
    // The sum is nonincreasing in rho: above target at lo, below at hi.
    for _ in 0..MAX_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if profile_sum(h, n, mid, cap) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let residual_at = |rho: f64| (profile_sum(h, n, rho, cap) - target).abs();
    let rho = if residual_at(lo) <= residual_at(hi) { lo } else { hi };
    let constraint_residual = residual_at(rho);
    if constraint_residual > CONSTRAINT_TOL * target.max(1.0) {
        return Err(OptimizeError::NonConvergence {
            iterations: MAX_ITERATIONS,
            eps_residual: f64::NAN,
            constraint_residual,
        });
    }

    let mut f = Vec::with_capacity(h.len());
    let mut mu = Vec::with_capacity(h.len());
    let mut capped = Vec::with_capacity(h.len());
    for &hk in h {
        let (fk, is_capped) = water_level(hk, n, rho, cap);
        let mk = if is_capped {
            (1.0 / (fk * fk) - n / (hk * hk) - rho / hk).max(0.0)
        } else {
            0.0
        };
        f.push(fk);
        mu.push(mk);
        capped.push(is_capped);
    }
    Ok(Profile {
        rho,
        f,
        mu,
        capped,
        constraint_residual,
    })
}

fn saturated_solution(inputs: &OptimizerInputs, check: &SaturationCheck) -> KktSolution {
    let h = &inputs.holding_rates;
    let n = h.len() as f64;
    let r = inputs.r_ub;
    let eps = inputs.eps_min();
    let c = 1.0 + inputs.x_sum() * r;
    let fk = eps * r;
    let rho = check.rho_upper;
    let mu: Vec<f64> = h
        .iter()
        .map(|hk| (-rho / hk + c * c / (r * r) - n / (hk * hk)).max(0.0))
        .collect();
    let gamma = rho - r * mu.iter().sum::<f64>();
    KktSolution {
        f: vec![fk; h.len()],
        eps,
        rho,
        mu,
        gamma,
        nu: 0.0,
        eta: vec![0.0; h.len()],
        x_sum: inputs.x_sum(),
        y_sum: inputs.y_sum(),
        saturated: true,
        capped: vec![true; h.len()],
        r_ub: r,
    }
}

/// Solves the KKT system of the convex reformulation.
pub fn solve_kkt(inputs: &OptimizerInputs) -> Result<KktSolution, OptimizeError> {
    inputs.validate()?;
    let check = check_saturated(inputs);
    if check.saturated {
        return Ok(saturated_solution(inputs, &check));
    }

    // The profile value is convex in eps, so its slope is nondecreasing:
    // negative just above eps_min (not saturated) and unbounded near 1.
    let r = inputs.r_ub;
    let mut lo = inputs.eps_min();
    let mut hi = 1.0;
    let mut converged = false;
    for _ in 0..MAX_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            converged = true;
            break;
        }
        if profile_at(inputs, mid)?.slope(r) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lo_profile = profile_at(inputs, lo);
    let hi_profile = profile_at(inputs, hi);
    let (eps, profile) = match (lo_profile, hi_profile) {
        (Ok(a), Ok(b)) => {
            if a.slope(r).abs() <= b.slope(r).abs() {
                (lo, a)
            } else {
                (hi, b)
            }
        }
        (Ok(a), Err(_)) => (lo, a),
        (Err(_), Ok(b)) => (hi, b),
        (Err(e), Err(_)) => return Err(e),
    };
    if !converged {
        return Err(OptimizeError::NonConvergence {
            iterations: MAX_ITERATIONS,
            eps_residual: profile.slope(r),
            constraint_residual: profile.constraint_residual,
        });
    }
    let n = inputs.num_links();
    Ok(KktSolution {
        f: profile.f,
        eps,
        rho: profile.rho,
        mu: profile.mu,
        gamma: 0.0,
        nu: 0.0,
        eta: vec![0.0; n],
        x_sum: inputs.x_sum(),
        y_sum: inputs.y_sum(),
        saturated: false,
        capped: profile.capped,
        r_ub: r,
    })
}

/// Grid-search minimizer of [`backoff_objective`] over `(0, R_UB]^N`.
///
/// For up to three links a logarithmic grid is refined around the best
/// cell until the cell width is at most `resolution * R_UB`. Larger
/// networks use cyclic coordinate descent with golden-section line search
/// in `log R_k`.
pub fn solve_brute(inputs: &OptimizerInputs, resolution: f64) -> Result<Vec<f64>, OptimizeError> {
    inputs.validate()?;
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(OptimizeError::InvalidRate(resolution));
    }
    let n = inputs.num_links();
    if n <= 3 {
        Ok(refined_grid(inputs, resolution))
    } else {
        Ok(coordinate_descent(inputs, resolution))
    }
}

fn geomspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    let step = (b - a) / (points - 1) as f64;
    let mut g: Vec<f64> = (0..points).map(|i| (a + step * i as f64).exp()).collect();
    g[0] = lo;
    g[points - 1] = hi;
    g
}

fn refined_grid(inputs: &OptimizerInputs, resolution: f64) -> Vec<f64> {
    let h = &inputs.holding_rates;
    let n = h.len();
    let points = match n {
        1 => 2001,
        2 => 201,
        _ => 41,
    };
    let target = resolution * inputs.r_ub;
    let mut lo = vec![BRUTE_FLOOR * inputs.r_ub; n];
    let mut hi = vec![inputs.r_ub; n];
    let mut rates = vec![0.0; n];
    loop {
        let axes: Vec<Vec<f64>> = (0..n).map(|k| geomspace(lo[k], hi[k], points)).collect();
        let mut best = f64::INFINITY;
        let mut best_idx = vec![0usize; n];
        let mut idx = vec![0usize; n];
        'cells: loop {
            for k in 0..n {
                rates[k] = axes[k][idx[k]];
            }
            let value = backoff_objective(h, &rates);
            // strict comparison keeps the lowest-index cell on ties
            if value < best {
                best = value;
                best_idx.clone_from(&idx);
            }
            for k in (0..n).rev() {
                idx[k] += 1;
                if idx[k] < points {
                    continue 'cells;
                }
                idx[k] = 0;
            }
            break;
        }
        let mut done = true;
        for k in 0..n {
            let i = best_idx[k];
            let below = axes[k][i.saturating_sub(1)];
            let above = axes[k][(i + 1).min(points - 1)];
            if above - below > 2.0 * target {
                done = false;
            }
            lo[k] = below;
            hi[k] = above;
            rates[k] = axes[k][i];
        }
        if done {
            return rates;
        }
    }
}

fn coordinate_descent(inputs: &OptimizerInputs, resolution: f64) -> Vec<f64> {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let h = &inputs.holding_rates;
    let n = h.len();
    let (log_lo, log_hi) = ((BRUTE_FLOOR * inputs.r_ub).ln(), inputs.r_ub.ln());
    let mut rates = vec![inputs.r_ub; n];
    let mut value = backoff_objective(h, &rates);
    for _ in 0..500 {
        let before = value;
        for k in 0..n {
            let eval = |t: f64| {
                let mut trial = rates.clone();
                trial[k] = t.exp();
                backoff_objective(h, &trial)
            };
            let (mut a, mut b) = (log_lo, log_hi);
            let mut c = b - INV_PHI * (b - a);
            let mut d = a + INV_PHI * (b - a);
            let (mut fc, mut fd) = (eval(c), eval(d));
            while (b.exp() - a.exp()) > resolution * inputs.r_ub * 1e-3 && b - a > 1e-15 {
                if fc < fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - INV_PHI * (b - a);
                    fc = eval(c);
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + INV_PHI * (b - a);
                    fd = eval(d);
                }
            }
            // endpoints are admissible too
            let candidates = [(log_hi, eval(log_hi)), (c, fc), (d, fd)];
            let (t, v) = candidates
                .into_iter()
                .fold((0.0, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc });
            if v < value {
                rates[k] = t.exp();
                value = v;
            }
        }
        if before - value <= 1e-13 * value.abs() {
            break;
        }
    }
    rates
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackoffAssignment {
    pub backoff_rates: Vec<f64>,
    /// Real-valued contention windows in mini-slots.
    pub contention_windows: Vec<f64>,
    /// Windows rounded to the nearest integer (ties up), at least `W_0`.
    pub rounded_windows: Vec<u32>,
    /// Total age at the optimum for the supplied reference arrival rates.
    pub achieved_total_age: f64,
    pub kkt: KktSolution,
}

/// Solves for the optimal rates and derives the 802.11-style windows and
/// the resulting total age for `reference_lambdas`.
pub fn optimize_backoff(
    inputs: &OptimizerInputs,
    t_slot: f64,
    reference_lambdas: &[f64],
) -> Result<BackoffAssignment, OptimizeError> {
    inputs.validate()?;
    if reference_lambdas.len() != inputs.num_links() {
        return Err(OptimizeError::LambdaCount {
            expected: inputs.num_links(),
            got: reference_lambdas.len(),
        });
    }
    let kkt = solve_kkt(inputs)?;
    let backoff_rates = kkt.backoff_rates();
    let w0 = round_window(contention_window(inputs.r_ub, t_slot)?, 2);
    let contention_windows = backoff_rates
        .iter()
        .map(|&r| contention_window(r, t_slot))
        .collect::<Result<Vec<_>, _>>()?;
    let rounded_windows = contention_windows
        .iter()
        .map(|&w| round_window(w, w0))
        .collect();
    let params =
        NetworkParams::from_rates(reference_lambdas, &inputs.holding_rates, &backoff_rates)?;
    let achieved_total_age = csma::total_age(&params)?.total;
    Ok(BackoffAssignment {
        backoff_rates,
        contention_windows,
        rounded_windows,
        achieved_total_age,
        kkt,
    })
}
