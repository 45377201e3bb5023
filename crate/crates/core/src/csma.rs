//! Idealized CSMA network: link-of-interest hybrid model and closed-form ages.
//!
//! Times are in milliseconds and rates in 1/ms throughout.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::shs::{ResetMap, ShsModel, StationaryDist};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CsmaError {
    #[error("network must contain at least one link")]
    NoLinks,
    #[error("link {link}: {field} must be positive and finite, got {value}")]
    NonpositiveRate {
        link: usize,
        field: &'static str,
        value: f64,
    },
    #[error("link {link}: backoff_rate must be nonnegative and finite, got {value}")]
    InvalidBackoff { link: usize, value: f64 },
    #[error("starved link {link}: zero back-off rate gives infinite age")]
    StarvedLink { link: usize },
    #[error("link index {link} out of range for {num_links} links")]
    LinkOutOfRange { link: usize, num_links: usize },
    #[error("mismatched parameter vectors: {lambda} arrival, {holding} holding, {backoff} back-off rates")]
    LengthMismatch {
        lambda: usize,
        holding: usize,
        backoff: usize,
    },
}

/// Per-link rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    /// Poisson arrival rate of fresh updates, lambda_k.
    pub arrival_rate: f64,
    /// Reciprocal of the mean channel holding (transmission) time, H_k.
    pub holding_rate: f64,
    /// Reciprocal of the mean back-off time, R_k.
    pub backoff_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub links: Vec<Link>,
}

/// Per-link and total average age, with the normalization constant
/// `C(R) = 1 + sum R_k / H_k` (reciprocal of the idle probability).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeBreakdown {
    pub per_link: Vec<f64>,
    pub total: f64,
    pub normalization: f64,
}

impl NetworkParams {
    pub fn new(links: Vec<Link>) -> Result<Self, CsmaError> {
        let params = Self { links };
        params.validate()?;
        Ok(params)
    }

    pub fn from_rates(
        arrival: &[f64],
        holding: &[f64],
        backoff: &[f64],
    ) -> Result<Self, CsmaError> {
        if arrival.len() != holding.len() || arrival.len() != backoff.len() {
            return Err(CsmaError::LengthMismatch {
                lambda: arrival.len(),
                holding: holding.len(),
                backoff: backoff.len(),
            });
        }
        let links = arrival
            .iter()
            .zip(holding)
            .zip(backoff)
            .map(|((&arrival_rate, &holding_rate), &backoff_rate)| Link {
                arrival_rate,
                holding_rate,
                backoff_rate,
            })
            .collect();
        Self::new(links)
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn validate(&self) -> Result<(), CsmaError> {
        if self.links.is_empty() {
            return Err(CsmaError::NoLinks);
        }
        for (link, l) in self.links.iter().enumerate() {
            for (field, value) in [
                ("arrival_rate", l.arrival_rate),
                ("holding_rate", l.holding_rate),
            ] {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(CsmaError::NonpositiveRate { link, field, value });
                }
            }
            if !(l.backoff_rate >= 0.0 && l.backoff_rate.is_finite()) {
                return Err(CsmaError::InvalidBackoff {
                    link,
                    value: l.backoff_rate,
                });
            }
        }
        Ok(())
    }

    /// Errors on the first link with a zero back-off rate.
    pub fn require_active(&self) -> Result<(), CsmaError> {
        self.validate()?;
        match self.links.iter().position(|l| l.backoff_rate == 0.0) {
            Some(link) => Err(CsmaError::StarvedLink { link }),
            None => Ok(()),
        }
    }

    pub fn normalization(&self) -> f64 {
        1.0 + self
            .links
            .iter()
            .map(|l| l.backoff_rate / l.holding_rate)
            .sum::<f64>()
    }

    /// Copy with back-off rates replaced.
    pub fn with_backoff(&self, rates: &[f64]) -> Result<Self, CsmaError> {
        if rates.len() != self.links.len() {
            return Err(CsmaError::LengthMismatch {
                lambda: self.links.len(),
                holding: self.links.len(),
                backoff: rates.len(),
            });
        }
        let links = self
            .links
            .iter()
            .zip(rates)
            .map(|(l, &backoff_rate)| Link { backoff_rate, ..*l })
            .collect();
        Self::new(links)
    }

    fn check_link(&self, link: usize) -> Result<(), CsmaError> {
        if link >= self.links.len() {
            return Err(CsmaError::LinkOutOfRange {
                link,
                num_links: self.links.len(),
            });
        }
        Ok(())
    }
}

/// Hybrid model seen from link `link` (0-based).
///
/// State 0 is the idle channel and state `k + 1` means link `k` holds the
/// channel. The continuous vector is `[monitor age, packet age]` of the
/// link of interest. Transitions are emitted in the order: channel captures
/// for every link, channel releases for every link, then one arrival
/// self-loop per state.
pub fn build_shs_for_link(params: &NetworkParams, link: usize) -> Result<ShsModel, CsmaError> {
    params.require_active()?;
    params.check_link(link)?;
    let n = params.num_links();
    let mut model = ShsModel::new(n + 1, 2);
    for (k, l) in params.links.iter().enumerate() {
        model.add_transition(0, k + 1, l.backoff_rate, ResetMap::identity(2));
    }
    for (k, l) in params.links.iter().enumerate() {
        let reset = if k == link {
            // delivery: monitor age drops to the delivered packet's age
            ResetMap::from_rows(&[&[0, 0], &[1, 1]])
        } else {
            ResetMap::identity(2)
        };
        model.add_transition(k + 1, 0, l.holding_rate, reset);
    }
    let lambda = params.links[link].arrival_rate;
    for q in 0..=n {
        model.add_transition(q, q, lambda, ResetMap::from_rows(&[&[1, 0], &[0, 0]]));
    }
    Ok(model)
}

/// Product-form stationary distribution of the channel state.
pub fn stationary_closed_form(params: &NetworkParams) -> Result<StationaryDist, CsmaError> {
    params.validate()?;
    let c = params.normalization();
    let probs = std::iter::once(1.0 / c)
        .chain(
            params
                .links
                .iter()
                .map(|l| l.backoff_rate / l.holding_rate / c),
        )
        .collect();
    Ok(StationaryDist { probs })
}

/// Closed-form average age at the monitor of link `link` (0-based):
/// `C/R_i + 1/lambda_i - 1/H_i + (sum_k R_k/H_k^2) / C`.
pub fn per_link_age(params: &NetworkParams, link: usize) -> Result<f64, CsmaError> {
    params.require_active()?;
    params.check_link(link)?;
    let c = params.normalization();
    let weighted: f64 = params
        .links
        .iter()
        .map(|l| l.backoff_rate / (l.holding_rate * l.holding_rate))
        .sum();
    let l = &params.links[link];
    Ok(c / l.backoff_rate + 1.0 / l.arrival_rate - 1.0 / l.holding_rate + weighted / c)
}

/// Total network age as the sum of the per-link closed forms.
pub fn total_age(params: &NetworkParams) -> Result<AgeBreakdown, CsmaError> {
    params.require_active()?;
    let per_link = (0..params.num_links())
        .map(|k| per_link_age(params, k))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AgeBreakdown {
        total: per_link.iter().sum(),
        per_link,
        normalization: params.normalization(),
    })
}
