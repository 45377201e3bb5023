//! Round Robin baseline: links take turns in fixed cyclic order with no
//! idle gaps, each turn delivering the current packet (or a fake update).
//!
//! Back-off rates in [`NetworkParams`] are ignored here.

use crate::csma::{CsmaError, NetworkParams};
use crate::shs::{ResetMap, ShsModel};

/// Renewal closed form for each link:
/// `1/lambda_k + E[Y^2] / (2 E[Y])` where `Y` is one full cycle, a sum of
/// independent exponential holding times. The delivered packet's age is the
/// backward recurrence time of the Poisson arrivals, independent of `Y`.
pub fn per_link_ages(params: &NetworkParams) -> Result<Vec<f64>, CsmaError> {
    params.validate()?;
    let mean: f64 = params.links.iter().map(|l| 1.0 / l.holding_rate).sum();
    let var: f64 = params
        .links
        .iter()
        .map(|l| 1.0 / (l.holding_rate * l.holding_rate))
        .sum();
    let residual = (var + mean * mean) / (2.0 * mean);
    Ok(params
        .links
        .iter()
        .map(|l| 1.0 / l.arrival_rate + residual)
        .collect())
}

pub fn total_age(params: &NetworkParams) -> Result<f64, CsmaError> {
    Ok(per_link_ages(params)?.iter().sum())
}

/// Hybrid model of the cycle seen from `link`: state `k` means link `k` is
/// transmitting and moves to `k + 1 mod N` at rate `H_k`.
pub fn build_shs_for_link(params: &NetworkParams, link: usize) -> Result<ShsModel, CsmaError> {
    params.validate()?;
    let n = params.num_links();
    if link >= n {
        return Err(CsmaError::LinkOutOfRange { link, num_links: n });
    }
    let mut model = ShsModel::new(n, 2);
    for (k, l) in params.links.iter().enumerate() {
        let reset = if k == link {
            ResetMap::from_rows(&[&[0, 0], &[1, 1]])
        } else {
            ResetMap::identity(2)
        };
        model.add_transition(k, (k + 1) % n, l.holding_rate, reset);
    }
    let lambda = params.links[link].arrival_rate;
    for q in 0..n {
        model.add_transition(q, q, lambda, ResetMap::from_rows(&[&[1, 0], &[0, 0]]));
    }
    Ok(model)
}
