//! Asset risks, the temperature-softmax attack distribution and top-K
//! summaries.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{Attack, Network};
use crate::scalar::Scalar;
use crate::F;

#[derive(Debug, Error)]
pub enum VulnError {
    #[error("temperature must be positive, got {0}")]
    NonPositiveTau(F),
    #[error("k = {k} outside 1..={n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("asset endpoint bus {0} is not scored")]
    UnknownBus(usize),
}

/// Asset risk from endpoint scores: the mean of the two incident bus scores.
/// `assets` carries endpoint positions into `rho`.
pub fn asset_risk<T: Scalar>(rho: &[T], assets: &[(usize, usize)]) -> Vec<T> {
    assets.iter().map(|&(u, v)| T::of(0.5) * (rho[u] + rho[v])).collect()
}

/// Risk vector for a network's attackable assets given per-bus scores.
pub fn asset_risk_for(net: &Network, rho: &[F], assets: &[Attack]) -> Result<Vec<F>, VulnError> {
    let index = net.bus_index();
    let positions = assets
        .iter()
        .map(|a| {
            let u = *index.get(&a.end_buses.0).ok_or(VulnError::UnknownBus(a.end_buses.0))?;
            let v = *index.get(&a.end_buses.1).ok_or(VulnError::UnknownBus(a.end_buses.1))?;
            Ok((u, v))
        })
        .collect::<Result<Vec<_>, VulnError>>()?;
    Ok(asset_risk(rho, &positions))
}

/// Numerically stable softmax: the max risk is subtracted before
/// exponentiation, which leaves the ratios unchanged.
pub fn softmax_stable<T: Scalar>(risk: &[T], tau: T) -> Vec<T> {
    let r_max = risk.iter().copied().fold(T::neg_infinity(), T::max);
    let weights: Vec<T> = risk.iter().map(|&r| ((r - r_max) / tau).exp()).collect();
    let sum = weights.iter().fold(T::zero(), |a, &b| a + b);
    weights.into_iter().map(|w| w / sum).collect()
}

/// Indices of the `k` largest probabilities; ties broken by the lower asset
/// id for determinism.
pub fn top_k_indices<T: Scalar>(prob: &[T], asset_ids: &[usize], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..prob.len()).collect();
    order.sort_by(|&a, &b| {
        prob[b].partial_cmp(&prob[a]).unwrap().then(asset_ids[a].cmp(&asset_ids[b]))
    });
    order.truncate(k);
    order
}

/// The attacker's mixed strategy over single-line outages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackDistribution {
    pub assets: Vec<Attack>,
    pub risk: Vec<F>,
    pub prob: Vec<F>,
    pub tau: F,
    /// Indices into `assets` of the K most probable attacks.
    pub top_k: Vec<usize>,
    pub mass_k: F,
}

/// Build the distribution from risks at temperature `tau`, retaining the
/// `k` most probable assets.
pub fn attack_distribution(
    assets: Vec<Attack>,
    risk: Vec<F>,
    tau: F,
    k: usize,
) -> Result<AttackDistribution, VulnError> {
    if !(tau > 0.0) {
        return Err(VulnError::NonPositiveTau(tau));
    }
    if k == 0 || k > assets.len() {
        return Err(VulnError::KOutOfRange { k, n: assets.len() });
    }
    assert_eq!(assets.len(), risk.len(), "one risk per asset");
    let prob = softmax_stable(&risk, tau);
    let ids: Vec<usize> = assets.iter().map(|a| a.branch_id).collect();
    let top_k = top_k_indices(&prob, &ids, k);
    let mass_k = top_k.iter().map(|&i| prob[i]).sum();
    Ok(AttackDistribution { assets, risk, prob, tau, top_k, mass_k })
}

impl AttackDistribution {
    /// Recompute the top set and cumulative mass for another `k`.
    pub fn top_k_mass(&self, k: usize) -> Result<(Vec<usize>, F), VulnError> {
        if k == 0 || k > self.assets.len() {
            return Err(VulnError::KOutOfRange { k, n: self.assets.len() });
        }
        let ids: Vec<usize> = self.assets.iter().map(|a| a.branch_id).collect();
        let top = top_k_indices(&self.prob, &ids, k);
        let mass = top.iter().map(|&i| self.prob[i]).sum();
        Ok((top, mass))
    }

    /// Draw an asset index by inverse CDF in asset order.
    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let u: F = rng.gen();
        let mut acc = 0.0;
        for (i, &p) in self.prob.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.prob.len() - 1
    }
}
