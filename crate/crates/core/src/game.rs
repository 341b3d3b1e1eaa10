//! Stackelberg layer: the defender (leader) scores Pareto candidates with a
//! scalar payoff and commits; the attacker (follower) best-responds by
//! enumeration over its support.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vuln::AttackDistribution;
use crate::F;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("leader selection over an empty front")]
    EmptyFront,
    #[error("invalid leader config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeaderMode {
    /// Weighted expectation of the objectives under the attack distribution.
    Expected,
    /// Worst case of `f1 + eta f3 + zeta f2` over the top-K attacks.
    Security,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderConfig {
    pub mode: LeaderMode,
    pub w: [F; 3],
    pub eta: F,
    pub zeta: F,
}

impl Default for LeaderConfig {
    fn default() -> Self {
        Self { mode: LeaderMode::Security, w: [0.6, 0.1, 0.3], eta: 10.0, zeta: 0.01 }
    }
}

impl LeaderConfig {
    pub fn validate(&self) -> Result<(), GameError> {
        if self.w.iter().any(|&w| w < 0.0) {
            return Err(GameError::Config("weights must be non-negative".into()));
        }
        let sum: F = self.w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(GameError::Config(format!("weights must sum to 1, got {sum}")));
        }
        if self.eta < 0.0 || self.zeta < 0.0 {
            return Err(GameError::Config("eta and zeta must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-attack objective vectors of one defense, aligned with the
/// distribution's asset order. The game layer works on this precomputed
/// cache; it never re-runs power flows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefensePayoffs {
    /// `per_attack[i]` is `F(d; a_i) = [f1, f2, f3]`.
    pub per_attack: Vec<[F; 3]>,
}

fn security_cost(f: &[F; 3], cfg: &LeaderConfig) -> F {
    f[0] + cfg.eta * f[2] + cfg.zeta * f[1]
}

/// Leader payoff of one defense.
///
/// Expected mode: the exact probability-weighted aggregate of each objective
/// (the enumerated value of the Monte Carlo mean), combined with the weights.
/// Security mode: the worst `f1 + eta f3 + zeta f2` over the top-K attacks.
pub fn leader_payoff(d: &DefensePayoffs, dist: &AttackDistribution, cfg: &LeaderConfig) -> F {
    match cfg.mode {
        LeaderMode::Expected => {
            let mut phi = 0.0;
            for (f, &p) in d.per_attack.iter().zip(&dist.prob) {
                phi += p * (cfg.w[0] * f[0] + cfg.w[1] * f[1] + cfg.w[2] * f[2]);
            }
            phi
        }
        LeaderMode::Security => dist
            .top_k
            .iter()
            .map(|&i| security_cost(&d.per_attack[i], cfg))
            .fold(F::NEG_INFINITY, F::max),
    }
}

/// Follower payoff for a fixed defense and attack index: the damage the
/// attack inflicts under the leader's own metric (weighted cost in expected
/// mode, the security cost otherwise). The best response maximizes it, so
/// the follower targets the defender's worst case.
pub fn follower_payoff(d: &DefensePayoffs, attack_idx: usize, cfg: &LeaderConfig) -> F {
    let f = &d.per_attack[attack_idx];
    match cfg.mode {
        LeaderMode::Expected => cfg.w[0] * f[0] + cfg.w[1] * f[1] + cfg.w[2] * f[2],
        LeaderMode::Security => security_cost(f, cfg),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Selection {
    /// Index of the chosen defense within the front.
    pub defense_idx: usize,
    /// Index of the follower's best response within the distribution assets.
    pub attack_idx: usize,
    pub phi: F,
    pub follower_value: F,
}

/// Leader selection and follower best response.
///
/// The leader takes the payoff-minimizing front member (ties by lowest
/// index); the follower maximizes its payoff by enumeration over the full
/// asset set in expected mode, or the top-K set in security mode.
pub fn select_strategy(
    front: &[DefensePayoffs],
    dist: &AttackDistribution,
    cfg: &LeaderConfig,
) -> Result<Selection, GameError> {
    cfg.validate()?;
    if front.is_empty() {
        return Err(GameError::EmptyFront);
    }
    let mut defense_idx = 0;
    let mut best_phi = F::INFINITY;
    for (i, d) in front.iter().enumerate() {
        let phi = leader_payoff(d, dist, cfg);
        if phi < best_phi {
            best_phi = phi;
            defense_idx = i;
        }
    }
    let support: Vec<usize> = match cfg.mode {
        LeaderMode::Expected => (0..dist.assets.len()).collect(),
        LeaderMode::Security => dist.top_k.clone(),
    };
    let chosen = &front[defense_idx];
    let mut attack_idx = support[0];
    let mut best_u = F::NEG_INFINITY;
    for &a in &support {
        let u = follower_payoff(chosen, a, cfg);
        if u > best_u {
            best_u = u;
            attack_idx = a;
        }
    }
    Ok(Selection { defense_idx, attack_idx, phi: best_phi, follower_value: best_u })
}
