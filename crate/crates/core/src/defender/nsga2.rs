//! NSGA-II primitives (dominance sorting, crowding, tournament) and the
//! elitist evolution loop over an abstract mixed-encoding problem.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::variation::{mutate_vector, sbx_vectors, vary_bits};
use crate::scalar::Scalar;
use crate::F;

#[derive(Debug, Error)]
pub enum Nsga2Error {
    #[error("objective vector contains NaN")]
    NonFinite,
    #[error("empty feasible set after generation 0: the scenario admits no feasible defense")]
    EmptyFeasibleSet,
}

/// Component-wise minimization dominance: no worse everywhere and strictly
/// better somewhere.
pub fn dominates<T: Scalar>(a: &[T], b: &[T]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strict = true;
        }
    }
    strict
}

/// Partition objective vectors into fronts: F1 is non-dominated, F2 is
/// non-dominated once F1 is removed, and so on. Infinite objectives are
/// allowed (always-dominated placeholders); NaN is rejected.
pub fn non_dominated_sort<T: Scalar>(objs: &[Vec<T>]) -> Result<Vec<Vec<usize>>, Nsga2Error> {
    for v in objs {
        if v.iter().any(|x| x.is_nan()) {
            return Err(Nsga2Error::NonFinite);
        }
    }
    let n = objs.len();
    let mut dominated_by: Vec<usize> = vec![0; n];
    let mut dominating: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i != j && dominates(&objs[i], &objs[j]) {
                dominating[i].push(j);
                dominated_by[j] += 1;
            }
        }
    }
    let mut fronts: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominating[i] {
                dominated_by[j] -= 1;
                if dominated_by[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(std::mem::replace(&mut current, next));
    }
    Ok(fronts)
}

/// Crowding distance within one front: boundary members per objective get
/// infinity, interior members sum range-normalized neighbor gaps. Objectives
/// with a degenerate or non-finite range contribute nothing.
pub fn crowding_distance<T: Scalar>(front: &[Vec<T>]) -> Vec<T> {
    let n = front.len();
    if n == 0 {
        return Vec::new();
    }
    let m = front[0].len();
    if n <= 2 {
        return vec![T::infinity(); n];
    }
    let mut dist = vec![T::zero(); n];
    for k in 0..m {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| front[a][k].partial_cmp(&front[b][k]).unwrap());
        let lo = front[order[0]][k];
        let hi = front[order[n - 1]][k];
        let range = hi - lo;
        dist[order[0]] = T::infinity();
        dist[order[n - 1]] = T::infinity();
        if !(range.is_finite() && range > T::zero()) {
            continue;
        }
        for w in 1..n - 1 {
            let gap = (front[order[w + 1]][k] - front[order[w - 1]][k]) / range;
            if dist[order[w]].is_finite() {
                dist[order[w]] += gap;
            }
        }
    }
    dist
}

/// A mixed real/binary optimization problem with a feasibility projection.
pub trait Problem {
    fn n_real(&self) -> usize;
    fn n_bits(&self) -> usize;
    fn n_objectives(&self) -> usize;
    fn bounds(&self, gene: usize) -> (F, F);
    /// Project toward feasibility, possibly adjusting the real genes.
    fn project(&self, u: &mut Vec<F>, bits: &[bool]) -> bool;
    /// Objective vector of a feasible candidate. `eval_seed` is derived from
    /// (run seed, generation, slot) so evaluation noise is reproducible.
    fn evaluate(&self, u: &[F], bits: &[bool], eval_seed: u64) -> Vec<F>;
    /// Structured candidates placed into the initial population.
    fn seeded(&self) -> Vec<(Vec<F>, Vec<bool>)> {
        Vec::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_prob: f64,
    pub sbx_eta: F,
    pub pm_eta: F,
    pub seed: u64,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self {
            population: 50,
            generations: 50,
            crossover_prob: 0.9,
            sbx_eta: 15.0,
            pm_eta: 20.0,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Individual {
    pub u: Vec<F>,
    pub bits: Vec<bool>,
    pub feasible: bool,
    pub objectives: Vec<F>,
    pub rank: usize,
    pub crowding: F,
}

fn eval_seed(seed: u64, generation: usize, slot: usize) -> u64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for v in [generation as u64, slot as u64] {
        h ^= v.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    }
    h
}

fn make_individual<P: Problem>(
    problem: &P,
    mut u: Vec<F>,
    bits: Vec<bool>,
    generation: usize,
    slot: usize,
    seed: u64,
) -> Result<Individual, Nsga2Error> {
    let feasible = problem.project(&mut u, &bits);
    let objectives = if feasible {
        let objs = problem.evaluate(&u, &bits, eval_seed(seed, generation, slot));
        if objs.iter().any(|v| v.is_nan()) {
            return Err(Nsga2Error::NonFinite);
        }
        objs
    } else {
        // Always dominated; keeps the population size invariant.
        vec![F::INFINITY; problem.n_objectives()]
    };
    Ok(Individual { u, bits, feasible, objectives, rank: usize::MAX, crowding: 0.0 })
}

fn assign_ranks(pop: &mut [Individual]) -> Result<(), Nsga2Error> {
    let objs: Vec<Vec<F>> = pop.iter().map(|c| c.objectives.clone()).collect();
    let fronts = non_dominated_sort(&objs)?;
    for (rank, front) in fronts.iter().enumerate() {
        let front_objs: Vec<Vec<F>> = front.iter().map(|&i| objs[i].clone()).collect();
        let crowd = crowding_distance(&front_objs);
        for (slot, &i) in front.iter().enumerate() {
            pop[i].rank = rank;
            pop[i].crowding = crowd[slot];
        }
    }
    Ok(())
}

/// Crowded-comparison winner of a pair: lower rank, then larger crowding. A
/// dominating candidate always beats one it dominates because ranks separate
/// them.
pub fn preferred<'a>(a: &'a Individual, b: &'a Individual) -> &'a Individual {
    if a.rank < b.rank || (a.rank == b.rank && a.crowding > b.crowding) {
        a
    } else {
        b
    }
}

fn tournament<'a, R: Rng>(pop: &'a [Individual], rng: &mut R) -> &'a Individual {
    let a = &pop[rng.gen_range(0..pop.len())];
    let b = &pop[rng.gen_range(0..pop.len())];
    preferred(a, b)
}

/// Elitist NSGA-II loop. Returns the final population with ranks assigned;
/// the first front is the Pareto approximation.
pub fn evolve<P: Problem>(problem: &P, cfg: &EvolveConfig) -> Result<Vec<Individual>, Nsga2Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bounds: Vec<(F, F)> = (0..problem.n_real()).map(|g| problem.bounds(g)).collect();
    let random_candidate = |rng: &mut ChaCha8Rng| {
        let u: Vec<F> = bounds.iter().map(|&(lo, hi)| rng.gen_range(lo..=hi)).collect();
        let bits: Vec<bool> = (0..problem.n_bits()).map(|_| rng.gen_bool(0.5)).collect();
        (u, bits)
    };

    let mut pop: Vec<Individual> = Vec::with_capacity(cfg.population);
    for (u, bits) in problem.seeded().into_iter().take(cfg.population) {
        pop.push(make_individual(problem, u, bits, 0, pop.len(), cfg.seed)?);
    }
    while pop.len() < cfg.population {
        // Infeasible random draws are discarded and redrawn a bounded number
        // of times; a stubborn slot keeps its last draw as dominated filler.
        let slot = pop.len();
        let mut candidate = None;
        for _ in 0..50 {
            let (u, bits) = random_candidate(&mut rng);
            let ind = make_individual(problem, u, bits, 0, slot, cfg.seed)?;
            let feasible = ind.feasible;
            candidate = Some(ind);
            if feasible {
                break;
            }
        }
        pop.push(candidate.expect("at least one draw"));
    }
    if !pop.iter().any(|c| c.feasible) {
        return Err(Nsga2Error::EmptyFeasibleSet);
    }
    assign_ranks(&mut pop)?;

    for generation in 1..=cfg.generations {
        let mut children: Vec<Individual> = Vec::with_capacity(cfg.population);
        while children.len() < cfg.population {
            let p1 = tournament(&pop, &mut rng);
            let p2 = tournament(&pop, &mut rng);
            let (mut u1, mut u2) =
                sbx_vectors(&p1.u, &p2.u, cfg.sbx_eta, cfg.crossover_prob, &mut rng);
            mutate_vector(&mut u1, &bounds, cfg.pm_eta, &mut rng);
            mutate_vector(&mut u2, &bounds, cfg.pm_eta, &mut rng);
            for u in [&mut u1, &mut u2] {
                for (g, &(lo, hi)) in bounds.iter().enumerate() {
                    u[g] = u[g].clamp(lo, hi);
                }
            }
            let (b1, b2) = vary_bits(&p1.bits, &p2.bits, cfg.crossover_prob, &mut rng);
            for (u, b) in [(u1, b1), (u2, b2)] {
                if children.len() >= cfg.population {
                    break;
                }
                let slot = children.len();
                children.push(make_individual(problem, u, b, generation, slot, cfg.seed)?);
            }
        }

        // Elitist merge back to the configured size.
        let mut merged = pop;
        merged.extend(children);
        let objs: Vec<Vec<F>> = merged.iter().map(|c| c.objectives.clone()).collect();
        let fronts = non_dominated_sort(&objs)?;
        let mut next: Vec<Individual> = Vec::with_capacity(cfg.population);
        for front in fronts {
            if next.len() == cfg.population {
                break;
            }
            let remaining = cfg.population - next.len();
            if front.len() <= remaining {
                next.extend(front.iter().map(|&i| merged[i].clone()));
            } else {
                let front_objs: Vec<Vec<F>> = front.iter().map(|&i| objs[i].clone()).collect();
                let crowd = crowding_distance(&front_objs);
                let mut order: Vec<usize> = (0..front.len()).collect();
                order.sort_by(|&a, &b| {
                    crowd[b].partial_cmp(&crowd[a]).unwrap().then(front[a].cmp(&front[b]))
                });
                for &w in order.iter().take(remaining) {
                    next.push(merged[front[w]].clone());
                }
            }
        }
        pop = next;
        assign_ranks(&mut pop)?;
    }
    Ok(pop)
}

/// Feasible members of the first front.
pub fn first_front(pop: &[Individual]) -> Vec<Individual> {
    pop.iter().filter(|c| c.rank == 0 && c.feasible).cloned().collect()
}
