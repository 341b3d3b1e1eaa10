//! Monte Carlo evaluation of defenses, robust ranking and feeder-aware rule
//! extraction.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::defender::DefenseCandidate;
use crate::netmodel::Network;
use crate::powerflow::{evaluate_objectives, Dispatch, PfError};
use crate::vuln::AttackDistribution;
use crate::F;

#[derive(Debug, Error)]
pub enum McError {
    #[error("need at least 2 trials, got {0}")]
    TooFewTrials(usize),
    #[error(transparent)]
    Pf(#[from] PfError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: F,
    /// Sample standard deviation (n-1 denominator).
    pub std_dev: F,
    /// 1.96 * std_dev / sqrt(n).
    pub ci95_half: F,
    /// Mean of the worst ceil(alpha * n) samples.
    pub cvar: F,
}

/// Statistics of one metric's samples.
pub fn metric_stats(samples: &[F], cvar_alpha: F) -> MetricStats {
    let n = samples.len();
    assert!(n >= 2, "metric_stats needs n >= 2");
    let lo = samples.iter().copied().fold(F::INFINITY, F::min);
    let hi = samples.iter().copied().fold(F::NEG_INFINITY, F::max);
    if lo == hi {
        // Constant samples: zero spread exactly, no cancellation residue.
        return MetricStats { mean: lo, std_dev: 0.0, ci95_half: 0.0, cvar: lo };
    }
    let mean = samples.iter().sum::<F>() / n as F;
    let var = samples.iter().map(|&x| (x - mean) * (x - mean)).sum::<F>() / (n - 1) as F;
    let std_dev = var.sqrt();
    let ci95_half = 1.96 * std_dev / (n as F).sqrt();
    let worst = (cvar_alpha * n as F).ceil().max(1.0) as usize;
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let cvar = sorted[..worst.min(n)].iter().sum::<F>() / worst.min(n) as F;
    MetricStats { mean, std_dev, ci95_half, cvar }
}

/// Per-defense trial record: objective samples, the attack drawn in each
/// trial and summary statistics per metric.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialLedger {
    pub samples: Vec<[F; 3]>,
    /// Asset index drawn in each trial.
    pub attack_draws: Vec<usize>,
    pub stats: [MetricStats; 3],
}

/// Draw `n` attacks i.i.d. from the distribution (counter-based per-trial
/// streams of one seeded generator) and record the defense's objectives under
/// each. Distinct attacks are evaluated once, in index order.
pub fn evaluate_monte_carlo(
    net: &Network,
    u: &[F],
    sigma: &[bool],
    dist: &AttackDistribution,
    n: usize,
    seed: u64,
    cvar_alpha: F,
) -> Result<TrialLedger, McError> {
    if n < 2 {
        return Err(McError::TooFewTrials(n));
    }
    let mut attack_draws = Vec::with_capacity(n);
    for trial in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial as u64);
        attack_draws.push(dist.sample(&mut rng));
    }

    let dispatch = Dispatch { u: u.to_vec() };
    let mut cache: BTreeMap<usize, [F; 3]> = BTreeMap::new();
    let mut distinct: Vec<usize> = attack_draws.clone();
    distinct.sort_unstable();
    distinct.dedup();
    for idx in distinct {
        let eval = evaluate_objectives(net, &dispatch, sigma, Some(&dist.assets[idx]))?;
        cache.insert(idx, eval.objectives.as_array());
    }
    let samples: Vec<[F; 3]> = attack_draws.iter().map(|idx| cache[idx]).collect();
    let stats = std::array::from_fn(|k| {
        let series: Vec<F> = samples.iter().map(|s| s[k]).collect();
        metric_stats(&series, cvar_alpha)
    });
    Ok(TrialLedger { samples, attack_draws, stats })
}

/// Mean-variance composite score; lower is better.
pub fn robust_score(stats: &[MetricStats; 3], w: &[F; 3], gamma: F) -> F {
    let mean: F = (0..3).map(|k| w[k] * stats[k].mean).sum();
    let spread: F = (0..3).map(|k| w[k] * stats[k].std_dev).sum();
    mean + gamma * spread
}

/// Rank defenses by the robust score ascending (ties by index) and keep the
/// first `m`. Returns `(index, score)` pairs.
pub fn robust_rank(
    ledgers: &[TrialLedger],
    w: &[F; 3],
    gamma: F,
    m: usize,
) -> Vec<(usize, F)> {
    let mut scored: Vec<(usize, F)> =
        ledgers.iter().enumerate().map(|(i, l)| (i, robust_score(&l.stats, w, gamma))).collect();
    scored.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(m);
    scored
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TieUsage {
    pub tie_id: usize,
    pub from_bus: usize,
    pub to_bus: usize,
    pub c_s: F,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeederStress {
    pub feeder: usize,
    pub attack_count: usize,
    pub frequency: F,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Recommendation {
    /// Indices of the ranked top defenses (into the evaluated front).
    pub top_defenses: Vec<usize>,
    /// Ties ordered by usage, highest first; empty when no top defense closes
    /// any tie.
    pub rule: Vec<TieUsage>,
    pub no_reconfiguration: bool,
    /// Feeders by attack frequency over the top defenses' trials.
    pub stressed_feeders: Vec<FeederStress>,
}

/// Tie-usage frequencies and the feeder-aware operating rule over the top
/// defenses: order ties by `c_s`, break ties by the attack frequency of the
/// feeders they bridge, then by tie id.
pub fn extract_feeder_rule(
    top: &[(usize, F)],
    candidates: &[DefenseCandidate],
    ledgers: &[TrialLedger],
    dist: &AttackDistribution,
    net: &Network,
) -> Recommendation {
    assert!(!top.is_empty(), "rule extraction needs a non-empty top list");
    let index = net.bus_index();
    let n_trials: usize = top.iter().map(|&(d, _)| ledgers[d].attack_draws.len()).sum();

    // Attack draws mapped to feeders through the severed branch's to-bus
    // (the downstream side of the radial orientation).
    let feeder_of_asset: Vec<usize> = dist
        .assets
        .iter()
        .map(|a| net.buses[index[&a.end_buses.1]].feeder)
        .collect();
    let mut feeder_counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &(d, _) in top {
        for &asset_idx in &ledgers[d].attack_draws {
            *feeder_counts.entry(feeder_of_asset[asset_idx]).or_insert(0) += 1;
        }
    }

    // The literal counting formula: over top defenses and their trials, how
    // often each tie is closed. A candidate's switch vector is constant
    // across its trials, so this reduces to weighting by trial counts.
    let mut usage = Vec::new();
    for (s, tie) in net.tie_switches.iter().enumerate() {
        let closed_trials: usize = top
            .iter()
            .map(|&(d, _)| if candidates[d].sigma[s] { ledgers[d].attack_draws.len() } else { 0 })
            .sum();
        let c_s = closed_trials as F / n_trials as F;
        usage.push(TieUsage { tie_id: tie.id, from_bus: tie.from_bus, to_bus: tie.to_bus, c_s });
    }

    let bridged_stress = |t: &TieUsage| -> usize {
        let mut feeders =
            vec![net.buses[index[&t.from_bus]].feeder, net.buses[index[&t.to_bus]].feeder];
        feeders.dedup();
        feeders.iter().map(|f| feeder_counts.get(f).copied().unwrap_or(0)).sum()
    };
    let mut rule: Vec<TieUsage> = usage.into_iter().filter(|t| t.c_s > 0.0).collect();
    rule.sort_by(|a, b| {
        b.c_s
            .partial_cmp(&a.c_s)
            .unwrap()
            .then(bridged_stress(b).cmp(&bridged_stress(a)))
            .then(a.tie_id.cmp(&b.tie_id))
    });

    let mut stressed_feeders: Vec<FeederStress> = feeder_counts
        .iter()
        .map(|(&feeder, &attack_count)| FeederStress {
            feeder,
            attack_count,
            frequency: attack_count as F / n_trials as F,
        })
        .collect();
    stressed_feeders
        .sort_by(|a, b| b.attack_count.cmp(&a.attack_count).then(a.feeder.cmp(&b.feeder)));

    Recommendation {
        top_defenses: top.iter().map(|&(d, _)| d).collect(),
        no_reconfiguration: rule.is_empty(),
        rule,
        stressed_feeders,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::load_case_str;
    use crate::vuln::attack_distribution;

    fn mc_net() -> Network {
        let case = serde_json::json!({
            "base_kv": 12.66, "base_mva": 10.0, "slack": 1,
            "buses": [
                {"id": 1, "p_load": 0.0, "q_load": 0.0, "feeder": 1},
                {"id": 2, "p_load": 300.0, "q_load": 100.0, "feeder": 1},
                {"id": 3, "p_load": 500.0, "q_load": 180.0, "feeder": 2},
                {"id": 4, "p_load": 200.0, "q_load": 70.0, "feeder": 2}
            ],
            "branches": [
                {"id": 1, "from_bus": 1, "to_bus": 2, "r": 0.004, "x": 0.008,
                 "status": "closed", "attackable": false},
                {"id": 2, "from_bus": 2, "to_bus": 3, "r": 0.01, "x": 0.02,
                 "status": "closed", "attackable": true},
                {"id": 3, "from_bus": 3, "to_bus": 4, "r": 0.015, "x": 0.03,
                 "status": "closed", "attackable": true}
            ],
            "ties": [
                {"id": 101, "from_bus": 2, "to_bus": 4, "r": 0.005, "x": 0.005, "normally_open": true}
            ],
            "ders": [
                {"id": 1, "bus": 4, "p_min": 0.0, "p_max": 200.0,
                 "cost_c2": 1e-5, "cost_c1": 0.05, "cost_c0": 1.0}
            ],
            "critical": [3]
        });
        load_case_str(&case.to_string()).unwrap()
    }

    fn candidate(u: Vec<F>, sigma: Vec<bool>) -> DefenseCandidate {
        DefenseCandidate { u, sigma, feasible: true, objectives: None, rank: 0, crowding: 0.0 }
    }

    #[test]
    fn hand_stats_example() {
        // Samples (0,0,1,1): mean 0.5, std sqrt(1/3), CI half 1.96*std/2.
        let stats = metric_stats(&[0.0, 0.0, 1.0, 1.0], 0.25);
        assert!((stats.mean - 0.5).abs() < 1e-12);
        assert!((stats.std_dev - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((stats.std_dev - 0.5774).abs() < 1e-4);
        assert!((stats.ci95_half - 1.96 * (1.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-12);
        assert!((stats.ci95_half - 0.5659).abs() < 1e-4);
        // Worst ceil(0.25 * 4) = 1 sample.
        assert_eq!(stats.cvar, 1.0);
    }

    #[test]
    fn one_hot_distribution_collapses_the_spread() {
        let net = mc_net();
        let assets = net.attackable_assets();
        let dist = attack_distribution(assets, vec![50.0, 0.0], 1e-9, 1).unwrap();
        let ledger =
            evaluate_monte_carlo(&net, &[100.0], &[false], &dist, 32, 9, 0.1).unwrap();
        for k in 0..3 {
            assert_eq!(ledger.stats[k].std_dev, 0.0);
            assert_eq!(ledger.stats[k].ci95_half, 0.0);
        }
        assert!(ledger.attack_draws.iter().all(|&a| a == 0));
    }

    #[test]
    fn ledgers_are_bit_identical_per_seed() {
        let net = mc_net();
        let dist =
            attack_distribution(net.attackable_assets(), vec![0.6, 0.4], 0.5, 2).unwrap();
        let a = evaluate_monte_carlo(&net, &[150.0], &[true], &dist, 64, 42, 0.1).unwrap();
        let b = evaluate_monte_carlo(&net, &[150.0], &[true], &dist, 64, 42, 0.1).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.attack_draws, b.attack_draws);
        let c = evaluate_monte_carlo(&net, &[150.0], &[true], &dist, 64, 43, 0.1).unwrap();
        assert_ne!(a.attack_draws, c.attack_draws);
    }

    #[test]
    fn too_few_trials_is_an_error() {
        let net = mc_net();
        let dist =
            attack_distribution(net.attackable_assets(), vec![0.6, 0.4], 0.5, 1).unwrap();
        assert!(matches!(
            evaluate_monte_carlo(&net, &[0.0], &[false], &dist, 1, 1, 0.1),
            Err(McError::TooFewTrials(1))
        ));
    }

    fn ledger_with(stats: [MetricStats; 3]) -> TrialLedger {
        TrialLedger { samples: vec![], attack_draws: vec![], stats }
    }

    fn flat(mean: F, std_dev: F) -> MetricStats {
        MetricStats { mean, std_dev, ci95_half: 0.0, cvar: mean }
    }

    #[test]
    fn gamma_zero_ranks_by_weighted_mean() {
        let ledgers = vec![
            ledger_with([flat(10.0, 5.0), flat(0.0, 0.0), flat(0.0, 0.0)]),
            ledger_with([flat(9.0, 50.0), flat(0.0, 0.0), flat(0.0, 0.0)]),
        ];
        let ranked = robust_rank(&ledgers, &[1.0, 0.0, 0.0], 0.0, 2);
        assert_eq!(ranked[0].0, 1);
    }

    #[test]
    fn risk_aversion_prefers_lower_spread() {
        let ledgers = vec![
            ledger_with([flat(5.0, 2.0), flat(5.0, 2.0), flat(5.0, 2.0)]),
            ledger_with([flat(5.0, 1.0), flat(5.0, 1.0), flat(5.0, 1.0)]),
        ];
        let ranked = robust_rank(&ledgers, &[0.4, 0.3, 0.3], 1.0, 2);
        assert_eq!(ranked[0].0, 1);
    }

    #[test]
    fn robust_score_hand_example() {
        // w = (1,0,0), gamma = 0.5, means (10, 9), stds (0, 4): scores (10, 11).
        let ledgers = vec![
            ledger_with([flat(10.0, 0.0), flat(0.0, 0.0), flat(0.0, 0.0)]),
            ledger_with([flat(9.0, 4.0), flat(0.0, 0.0), flat(0.0, 0.0)]),
        ];
        let ranked = robust_rank(&ledgers, &[1.0, 0.0, 0.0], 0.5, 2);
        assert_eq!(ranked[0], (0, 10.0));
        assert_eq!(ranked[1], (1, 11.0));
    }

    #[test]
    fn unanimous_tie_usage_heads_the_rule() {
        let net = mc_net();
        let dist =
            attack_distribution(net.attackable_assets(), vec![0.6, 0.4], 0.5, 2).unwrap();
        let candidates = vec![candidate(vec![100.0], vec![true]), candidate(vec![50.0], vec![true])];
        let ledgers: Vec<TrialLedger> = candidates
            .iter()
            .map(|c| evaluate_monte_carlo(&net, &c.u, &c.sigma, &dist, 16, 7, 0.1).unwrap())
            .collect();
        let top = vec![(0, 1.0), (1, 2.0)];
        let rec = extract_feeder_rule(&top, &candidates, &ledgers, &dist, &net);
        assert!(!rec.no_reconfiguration);
        assert_eq!(rec.rule[0].tie_id, 101);
        assert_eq!(rec.rule[0].c_s, 1.0);
        // Every trial lands in some feeder.
        let total: usize = rec.stressed_feeders.iter().map(|f| f.attack_count).sum();
        assert_eq!(total, 32);
    }

    #[test]
    fn no_closures_yield_the_explicit_marker() {
        let net = mc_net();
        let dist =
            attack_distribution(net.attackable_assets(), vec![0.6, 0.4], 0.5, 2).unwrap();
        let candidates = vec![candidate(vec![100.0], vec![false])];
        let ledgers =
            vec![evaluate_monte_carlo(&net, &[100.0], &[false], &dist, 16, 7, 0.1).unwrap()];
        let rec = extract_feeder_rule(&[(0, 1.0)], &candidates, &ledgers, &dist, &net);
        assert!(rec.no_reconfiguration);
        assert!(rec.rule.is_empty());
    }

    #[test]
    fn empirical_frequencies_approach_the_distribution() {
        let net = mc_net();
        let dist =
            attack_distribution(net.attackable_assets(), vec![0.9, 0.2], 0.7, 2).unwrap();
        let ledger =
            evaluate_monte_carlo(&net, &[100.0], &[false], &dist, 4000, 11, 0.1).unwrap();
        let mut counts = vec![0usize; dist.assets.len()];
        for &a in &ledger.attack_draws {
            counts[a] += 1;
        }
        let tv: F = counts
            .iter()
            .zip(&dist.prob)
            .map(|(&c, &p)| (c as F / 4000.0 - p).abs())
            .sum::<F>()
            / 2.0;
        assert!(tv < 0.05, "total variation {tv}");
    }

    #[test]
    fn attack_cut_shows_up_in_f1_samples() {
        let net = mc_net();
        let dist =
            attack_distribution(net.attackable_assets(), vec![0.6, 0.4], 0.5, 2).unwrap();
        // No defense: attack on branch 2 severs buses 3 and 4 (700 kW).
        let ledger =
            evaluate_monte_carlo(&net, &[0.0], &[false], &dist, 64, 3, 0.1).unwrap();
        for (draw, sample) in ledger.attack_draws.iter().zip(&ledger.samples) {
            let expected = if *draw == 0 { 700.0 } else { 200.0 };
            assert!((sample[0] - expected).abs() < 1e-9);
        }
        // Closing the tie restores everything.
        let healed =
            evaluate_monte_carlo(&net, &[0.0], &[true], &dist, 64, 3, 0.1).unwrap();
        assert!(healed.samples.iter().all(|s| s[0] == 0.0));
    }
}
