//! Defender search: NSGA-II over DER dispatch and tie-switch vectors, with
//! risk-aggregated objectives and ADMM feasibility screening.

pub mod nsga2;
pub mod variation;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::admm::{make_partition, project_feasibility, AdmmConfig, AdmmError, Partition};
use crate::netmodel::Network;
use crate::powerflow::{evaluate_objectives, Dispatch, PfError};
use crate::vuln::AttackDistribution;
use crate::F;
pub use nsga2::{
    crowding_distance, dominates, first_front, non_dominated_sort, EvolveConfig, Nsga2Error,
};

#[derive(Debug, Error)]
pub enum DefenderError {
    #[error(transparent)]
    Nsga2(#[from] Nsga2Error),
    #[error(transparent)]
    Admm(#[from] AdmmError),
    #[error(transparent)]
    Pf(#[from] PfError),
}

/// A defense: DER setpoints plus tie-switch closures, with search metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefenseCandidate {
    pub u: Vec<F>,
    pub sigma: Vec<bool>,
    pub feasible: bool,
    /// Aggregated objective vector; present only for feasible candidates.
    pub objectives: Option<[F; 3]>,
    pub rank: usize,
    pub crowding: F,
}

/// Mutually non-dominated feasible defenses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParetoFront {
    pub members: Vec<DefenseCandidate>,
}

/// How attack uncertainty enters the objectives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationMode {
    /// Monte Carlo mean over attacks drawn from the full distribution.
    RiskNeutral { samples: usize },
    /// Componentwise worst case over the focus attack set, by enumeration.
    RiskAverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenderConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_prob: f64,
    pub sbx_eta: F,
    pub pm_eta: F,
    pub mode: AggregationMode,
    pub seed: u64,
    pub admm: AdmmConfig,
    /// Attack indices (into the distribution's assets) the risk-averse
    /// aggregate enumerates; `None` uses the distribution's top-K set.
    pub focus: Option<Vec<usize>>,
}

impl Default for DefenderConfig {
    fn default() -> Self {
        Self {
            population: 50,
            generations: 50,
            crossover_prob: 0.9,
            sbx_eta: 15.0,
            pm_eta: 20.0,
            mode: AggregationMode::RiskAverse,
            seed: 42,
            admm: AdmmConfig::default(),
            focus: None,
        }
    }
}

/// Risk-aggregated objectives of one defense.
///
/// Risk-neutral: mean over `samples` attacks drawn i.i.d. from the
/// distribution with a fixed seed (distinct attacks evaluated once).
/// Risk-averse: componentwise max over the focus attacks, exactly.
pub fn aggregate_objectives(
    net: &Network,
    u: &[F],
    sigma: &[bool],
    dist: &AttackDistribution,
    mode: &AggregationMode,
    focus: &[usize],
    seed: u64,
) -> Result<[F; 3], PfError> {
    let dispatch = Dispatch { u: u.to_vec() };
    let eval = |attack_idx: usize| -> Result<[F; 3], PfError> {
        let attack = &dist.assets[attack_idx];
        Ok(evaluate_objectives(net, &dispatch, sigma, Some(attack))?.objectives.as_array())
    };
    match mode {
        AggregationMode::RiskAverse => {
            let mut agg = [F::NEG_INFINITY; 3];
            assert!(!focus.is_empty(), "risk-averse aggregation needs a focus set");
            for &idx in focus {
                let f = eval(idx)?;
                for k in 0..3 {
                    agg[k] = agg[k].max(f[k]);
                }
            }
            Ok(agg)
        }
        AggregationMode::RiskNeutral { samples } => {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = (*samples).max(1);
            let mut counts: std::collections::BTreeMap<usize, usize> = Default::default();
            for _ in 0..n {
                *counts.entry(dist.sample(&mut rng)).or_insert(0) += 1;
            }
            // Multiplicity-weighted mean over distinct attacks, evaluated
            // once each in index order; exact for degenerate distributions.
            let mut agg = [0.0; 3];
            for (&idx, &count) in &counts {
                let f = eval(idx)?;
                let w = count as F / n as F;
                for k in 0..3 {
                    agg[k] += w * f[k];
                }
            }
            Ok(agg)
        }
    }
}

struct GridProblem<'a> {
    net: &'a Network,
    dist: &'a AttackDistribution,
    cfg: &'a DefenderConfig,
    partition: Partition,
    focus: Vec<usize>,
    /// Attack the feasibility projection runs under: the first focus attack
    /// (per-attack runs) or the most probable attack overall.
    projection_attack: usize,
}

impl nsga2::Problem for GridProblem<'_> {
    fn n_real(&self) -> usize {
        self.net.ders.len()
    }
    fn n_bits(&self) -> usize {
        self.net.tie_switches.len()
    }
    fn n_objectives(&self) -> usize {
        3
    }
    fn bounds(&self, gene: usize) -> (F, F) {
        let der = &self.net.ders[gene];
        (der.p_min, der.p_max)
    }
    fn project(&self, u: &mut Vec<F>, bits: &[bool]) -> bool {
        let attack = &self.dist.assets[self.projection_attack];
        match project_feasibility(self.net, Some(attack), u, bits, &self.partition, &self.cfg.admm)
        {
            Ok(projection) => {
                *u = projection.u;
                projection.feasible
            }
            Err(_) => false,
        }
    }
    fn evaluate(&self, u: &[F], bits: &[bool], eval_seed: u64) -> Vec<F> {
        match aggregate_objectives(self.net, u, bits, self.dist, &self.cfg.mode, &self.focus, eval_seed)
        {
            Ok(objs) => objs.to_vec(),
            Err(_) => vec![F::INFINITY; 3],
        }
    }
    fn seeded(&self) -> Vec<(Vec<F>, Vec<bool>)> {
        let base = Dispatch::base_case(self.net);
        let n_ties = self.net.tie_switches.len();
        let max_u: Vec<F> = self.net.ders.iter().map(|d| d.p_max).collect();
        vec![
            // Status quo: nominal dispatch, every tie open.
            (base.u, vec![false; n_ties]),
            // Maximum restoration posture: full dispatch, every tie closed.
            (max_u, vec![true; n_ties]),
        ]
    }
}

/// NSGA-II with ADMM projection (discard-or-dominate handling of infeasible
/// candidates, binary tournament on rank and crowding, elitist merge).
/// Returns the final first front; every member is feasible.
pub fn run_nsga2(
    net: &Network,
    dist: &AttackDistribution,
    cfg: &DefenderConfig,
) -> Result<ParetoFront, DefenderError> {
    let focus = cfg.focus.clone().unwrap_or_else(|| dist.top_k.clone());
    let projection_attack = match &cfg.mode {
        AggregationMode::RiskAverse => *focus.first().expect("non-empty focus"),
        AggregationMode::RiskNeutral { .. } => {
            // Most probable attack; ties resolved by the distribution's order.
            dist.top_k.first().copied().unwrap_or(0)
        }
    };
    let problem = GridProblem {
        net,
        dist,
        cfg,
        partition: make_partition(net)?,
        focus,
        projection_attack,
    };
    let evolve_cfg = EvolveConfig {
        population: cfg.population,
        generations: cfg.generations,
        crossover_prob: cfg.crossover_prob,
        sbx_eta: cfg.sbx_eta,
        pm_eta: cfg.pm_eta,
        seed: cfg.seed,
    };
    let pop = nsga2::evolve(&problem, &evolve_cfg)?;
    let members = first_front(&pop)
        .into_iter()
        .map(|ind| DefenseCandidate {
            u: ind.u,
            sigma: ind.bits,
            feasible: ind.feasible,
            objectives: Some([ind.objectives[0], ind.objectives[1], ind.objectives[2]]),
            rank: ind.rank,
            crowding: ind.crowding,
        })
        .collect();
    Ok(ParetoFront { members })
}
