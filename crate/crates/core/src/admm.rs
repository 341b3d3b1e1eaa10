//! Feasibility projection of defense candidates via region-partitioned
//! consensus ADMM.
//!
//! The network is split into feeder regions that share copies of boundary-bus
//! voltage magnitudes. Each iterate solves per-region dispatch subproblems
//! against a linearized voltage response, averages the shared copies into the
//! consensus vector and updates the scaled duals. A projected candidate is
//! accepted only after a full-network verification power flow.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::norm2;
use crate::netmodel::{Attack, BranchStatus, NetError, Network};
use crate::powerflow::{
    solve_with_curtailment, voltage_sensitivities, Dispatch, PfError, ScenarioSolution,
};
use crate::F;

#[derive(Debug, Error)]
pub enum AdmmError {
    #[error("partition error: {0}")]
    Partition(String),
    #[error("local solve failed: {0}")]
    LocalSolve(String),
    #[error(transparent)]
    Pf(#[from] PfError),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmConfig {
    /// Consensus penalty; stable in the 0.1 - 1.0 range.
    pub rho_pen: F,
    pub max_iterations: usize,
    /// Residual tolerance for primal and dual convergence.
    pub tolerance: F,
    /// Weight pulling boundary voltages toward 1.0 p.u. in the local
    /// objective; sized to balance kW-scale costs against p.u. voltages.
    pub voltage_weight: F,
    /// Feasibility floor on the minimum energized voltage.
    pub voltage_floor: F,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho_pen: 0.5,
            max_iterations: 50,
            tolerance: 1e-4,
            voltage_weight: 1e5,
            voltage_floor: 0.92,
        }
    }
}

/// Feeder-zone partition with shared boundary buses.
#[derive(Debug, Clone)]
pub struct Partition {
    pub regions: Vec<Region>,
    /// Boundary bus positions, sorted; the consensus vector is indexed the
    /// same way.
    pub boundary: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Region {
    pub feeder: usize,
    /// Bus positions belonging to this feeder.
    pub buses: Vec<usize>,
    /// Indices into `Network::ders` of this feeder's DERs.
    pub ders: Vec<usize>,
    /// Indices into `Partition::boundary` this region holds copies of.
    pub coords: Vec<usize>,
}

/// One region per feeder id; boundary buses are the endpoints of closed
/// branches and ties that cross feeders.
pub fn make_partition(net: &Network) -> Result<Partition, AdmmError> {
    use std::collections::{BTreeMap, BTreeSet};
    let index = net.bus_index();
    let feeder_of: Vec<usize> = net.buses.iter().map(|b| b.feeder).collect();

    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (pos, bus) in net.buses.iter().enumerate() {
        members.entry(bus.feeder).or_default().push(pos);
    }

    let mut crossing: Vec<(usize, usize)> = Vec::new();
    for br in &net.branches {
        if br.status == BranchStatus::Closed {
            let (u, v) = (index[&br.from_bus], index[&br.to_bus]);
            if feeder_of[u] != feeder_of[v] {
                crossing.push((u, v));
            }
        }
    }
    for tie in &net.tie_switches {
        let (u, v) = (index[&tie.from_bus], index[&tie.to_bus]);
        if feeder_of[u] != feeder_of[v] {
            crossing.push((u, v));
        }
    }

    let boundary_set: BTreeSet<usize> = crossing.iter().flat_map(|&(u, v)| [u, v]).collect();
    let boundary: Vec<usize> = boundary_set.iter().copied().collect();
    let coord_of: BTreeMap<usize, usize> =
        boundary.iter().enumerate().map(|(c, &pos)| (pos, c)).collect();

    let mut regions = Vec::new();
    for (&feeder, buses) in &members {
        let mut coords: BTreeSet<usize> = buses
            .iter()
            .filter(|pos| boundary_set.contains(pos))
            .map(|pos| coord_of[pos])
            .collect();
        for &(u, v) in &crossing {
            if feeder_of[u] == feeder {
                coords.insert(coord_of[&v]);
            }
            if feeder_of[v] == feeder {
                coords.insert(coord_of[&u]);
            }
        }
        let ders = net
            .ders
            .iter()
            .enumerate()
            .filter(|(_, d)| feeder_of[index[&d.bus]] == feeder)
            .map(|(g, _)| g)
            .collect();
        regions.push(Region {
            feeder,
            buses: buses.clone(),
            ders,
            coords: coords.into_iter().collect(),
        });
    }

    if regions.len() > 1 {
        for region in &regions {
            if region.coords.is_empty() {
                return Err(AdmmError::Partition(format!(
                    "feeder {} has no path to any boundary bus",
                    region.feeder
                )));
            }
        }
    }
    Ok(Partition { regions, boundary })
}

/// Consensus state shared across regions.
#[derive(Debug, Clone)]
pub struct AdmmState {
    /// Per-region copies of its consensus coordinates.
    pub copies: Vec<Vec<F>>,
    pub z: Vec<F>,
    /// Scaled duals, aligned with each region's copies.
    pub duals: Vec<Vec<F>>,
    pub rho_pen: F,
    pub k: usize,
}

impl AdmmState {
    pub fn new(coord_counts: &[usize], dim: usize, rho_pen: F) -> Self {
        Self {
            copies: coord_counts.iter().map(|&n| vec![0.0; n]).collect(),
            z: vec![0.0; dim],
            duals: coord_counts.iter().map(|&n| vec![0.0; n]).collect(),
            rho_pen,
            k: 0,
        }
    }
}

/// A region's local update: given its slice of the consensus vector and its
/// duals, return new copies of its coordinates.
pub trait RegionSubproblem {
    fn coords(&self) -> &[usize];
    fn solve_local(&mut self, z_local: &[F], dual: &[F], rho: F) -> Result<Vec<F>, AdmmError>;
}

/// One ADMM iterate: local solves, per-coordinate consensus average, dual
/// update. Returns `(primal_residual, dual_residual)`.
pub fn admm_iterate<R: RegionSubproblem>(
    regions: &mut [R],
    state: &mut AdmmState,
) -> Result<(F, F), AdmmError> {
    let dim = state.z.len();
    for (p, region) in regions.iter_mut().enumerate() {
        let z_local: Vec<F> = region.coords().iter().map(|&c| state.z[c]).collect();
        let copies = region.solve_local(&z_local, &state.duals[p], state.rho_pen)?;
        debug_assert_eq!(copies.len(), region.coords().len());
        state.copies[p] = copies;
    }

    let mut sums = vec![0.0; dim];
    let mut counts = vec![0usize; dim];
    for (p, region) in regions.iter().enumerate() {
        for (l, &c) in region.coords().iter().enumerate() {
            sums[c] += state.copies[p][l];
            counts[c] += 1;
        }
    }
    let z_old = state.z.clone();
    for c in 0..dim {
        if counts[c] > 0 {
            state.z[c] = sums[c] / counts[c] as F;
        }
    }

    let mut primal_sq = 0.0;
    for (p, region) in regions.iter().enumerate() {
        for (l, &c) in region.coords().iter().enumerate() {
            let gap = state.copies[p][l] - state.z[c];
            state.duals[p][l] += gap;
            primal_sq += gap * gap;
        }
    }
    let dz: Vec<F> = state.z.iter().zip(&z_old).map(|(a, b)| a - b).collect();
    let dual = state.rho_pen * norm2(&dz);
    state.k += 1;
    Ok((primal_sq.sqrt(), dual))
}

#[derive(Debug, Clone, Copy)]
pub struct ConsensusRun {
    pub iterations: usize,
    pub primal_residual: F,
    pub dual_residual: F,
    pub converged: bool,
}

/// Iterate to consensus or the iteration cap.
pub fn consensus_admm<R: RegionSubproblem>(
    regions: &mut [R],
    state: &mut AdmmState,
    tolerance: F,
    max_iterations: usize,
) -> Result<ConsensusRun, AdmmError> {
    let mut run = ConsensusRun {
        iterations: 0,
        primal_residual: F::INFINITY,
        dual_residual: F::INFINITY,
        converged: false,
    };
    for _ in 0..max_iterations {
        let (primal, dual) = admm_iterate(regions, state)?;
        run.iterations += 1;
        run.primal_residual = primal;
        run.dual_residual = dual;
        if primal < tolerance && dual < tolerance {
            run.converged = true;
            break;
        }
    }
    Ok(run)
}

/// Result of projecting one `(u, sigma)` candidate.
#[derive(Debug, Clone)]
pub struct Projection {
    pub u: Vec<F>,
    pub feasible: bool,
    pub admm_iterations: usize,
    pub primal_residual: F,
    pub dual_residual: F,
}

fn verify(
    scenario: &Network,
    u: &[F],
    floor: F,
) -> Result<(bool, ScenarioSolution), PfError> {
    let scen = solve_with_curtailment(scenario, &Dispatch { u: u.to_vec() })?;
    let ok = scen.solution.converged
        && scen.solution.min_energized_voltage().map_or(true, |v| v > floor);
    Ok((ok, scen))
}

/// Project a candidate toward AC feasibility under `attack`.
///
/// The dispatch is clamped into its box and verified with a full power flow;
/// a candidate that already satisfies the voltage floor is returned unchanged
/// (a projection fixes feasible points). Otherwise, region subproblems pull
/// dispatch toward voltage-supporting setpoints under consensus on boundary
/// voltages, and the final state is verified again. Infeasibility is a
/// returned flag, never an error.
pub fn project_feasibility(
    net: &Network,
    attack: Option<&Attack>,
    u: &[F],
    sigma: &[bool],
    partition: &Partition,
    cfg: &AdmmConfig,
) -> Result<Projection, AdmmError> {
    let clamped = Dispatch { u: u.to_vec() }.clamped(net);
    let scenario = net.apply_scenario(attack, sigma)?;

    let (ok, _) = verify(&scenario, &clamped.u, cfg.voltage_floor)?;
    if ok || partition.regions.len() <= 1 {
        return Ok(Projection {
            u: clamped.u,
            feasible: ok,
            admm_iterations: 0,
            primal_residual: 0.0,
            dual_residual: 0.0,
        });
    }

    let coord_counts: Vec<usize> = partition.regions.iter().map(|r| r.coords.len()).collect();
    let mut state = AdmmState::new(&coord_counts, partition.boundary.len(), cfg.rho_pen);
    for c in 0..partition.boundary.len() {
        state.z[c] = 1.0;
    }

    let s_base_kw = 1000.0 * net.base_power_mva;
    let mut u_now = clamped.u.clone();
    let mut iterations = 0;
    let mut primal = F::INFINITY;
    let mut dual = F::INFINITY;

    for _ in 0..cfg.max_iterations {
        // One linearization per iterate, shared by every region.
        let scen = solve_with_curtailment(&scenario, &Dispatch { u: u_now.clone() })?;
        if !scen.solution.converged {
            break;
        }
        let Some(sens) = voltage_sensitivities(&scen.net, &Dispatch { u: u_now.clone() }, &scen.solution)
        else {
            break;
        };

        let mut subproblems: Vec<GridRegion> = partition
            .regions
            .iter()
            .map(|region| GridRegion {
                region,
                net,
                boundary: &partition.boundary,
                v0: &scen.solution.v_mag,
                sens: &sens,
                u0: &u_now,
                s_base_kw,
                voltage_weight: cfg.voltage_weight,
                u_out: Vec::new(),
            })
            .collect();
        let (p_res, d_res) = admm_iterate(&mut subproblems, &mut state)?;
        iterations = state.k;
        primal = p_res;
        dual = d_res;

        let mut u_next = u_now.clone();
        for sub in &subproblems {
            for (slot, &g) in sub.region.ders.iter().enumerate() {
                u_next[g] = sub.u_out[slot];
            }
        }
        let moved = u_next
            .iter()
            .zip(&u_now)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, F::max);
        u_now = u_next;
        if primal < cfg.tolerance && dual < cfg.tolerance && moved < 1e-9 {
            break;
        }
    }

    let (ok, _) = verify(&scenario, &u_now, cfg.voltage_floor)?;
    Ok(Projection {
        u: u_now,
        feasible: ok,
        admm_iterations: iterations,
        primal_residual: primal,
        dual_residual: dual,
    })
}

/// Region dispatch subproblem against the shared voltage linearization:
/// generation cost plus voltage regularization toward 1.0 p.u. plus the
/// consensus penalty, box-constrained, solved by projected gradient descent.
struct GridRegion<'a> {
    region: &'a Region,
    net: &'a Network,
    boundary: &'a [usize],
    v0: &'a [Option<F>],
    sens: &'a [Option<Vec<F>>],
    u0: &'a [F],
    s_base_kw: F,
    voltage_weight: F,
    u_out: Vec<F>,
}

impl GridRegion<'_> {
    /// Predicted boundary-copy voltages for region dispatch `u_p`. Coordinates
    /// whose bus is unenergized in the linearization track `z` exactly.
    fn predict(&self, u_p: &[F], z_local: &[F]) -> Vec<F> {
        self.region
            .coords
            .iter()
            .enumerate()
            .map(|(l, &c)| {
                let pos = self.boundary[c];
                match self.v0[pos] {
                    Some(v0) => {
                        let mut v = v0;
                        for (slot, &g) in self.region.ders.iter().enumerate() {
                            if let Some(dv) = &self.sens[g] {
                                v += dv[pos] * (u_p[slot] - self.u0[g]) / self.s_base_kw;
                            }
                        }
                        v
                    }
                    None => z_local[l],
                }
            })
            .collect()
    }
}

impl RegionSubproblem for GridRegion<'_> {
    fn coords(&self) -> &[usize] {
        &self.region.coords
    }

    fn solve_local(&mut self, z_local: &[F], dual: &[F], rho: F) -> Result<Vec<F>, AdmmError> {
        let ders = &self.region.ders;
        let mut u_p: Vec<F> = ders.iter().map(|&g| self.u0[g]).collect();
        if !ders.is_empty() {
            // Projected gradient on the smooth quadratic objective.
            let grad = |u_p: &[F]| -> Vec<F> {
                let v = self.predict(u_p, z_local);
                let mut g_vec = vec![0.0; u_p.len()];
                for (slot, &g) in ders.iter().enumerate() {
                    let der = &self.net.ders[g];
                    g_vec[slot] = 2.0 * der.cost_c2 * u_p[slot] + der.cost_c1;
                }
                for (l, &c) in self.region.coords.iter().enumerate() {
                    let pos = self.boundary[c];
                    if self.v0[pos].is_none() {
                        continue;
                    }
                    let force = 2.0 * self.voltage_weight * (v[l] - 1.0)
                        + rho * (v[l] - z_local[l] + dual[l]);
                    for (slot, &g) in ders.iter().enumerate() {
                        if let Some(dv) = &self.sens[g] {
                            g_vec[slot] += force * dv[pos] / self.s_base_kw;
                        }
                    }
                }
                g_vec
            };
            // Conservative Lipschitz bound over the quadratic terms.
            let mut lipschitz = 0.0;
            for (slot, &g) in ders.iter().enumerate() {
                let der = &self.net.ders[g];
                let mut row = 2.0 * der.cost_c2;
                if let Some(dv) = &self.sens[g] {
                    for &c in &self.region.coords {
                        let pos = self.boundary[c];
                        if self.v0[pos].is_some() {
                            let a = dv[pos] / self.s_base_kw;
                            row += (2.0 * self.voltage_weight + rho) * a.abs() * a.abs()
                                * ders.len() as F;
                        }
                    }
                }
                let _ = slot;
                lipschitz = F::max(lipschitz, row);
            }
            if lipschitz <= 0.0 || !lipschitz.is_finite() {
                return Err(AdmmError::LocalSolve("degenerate local curvature".into()));
            }
            let step = 1.0 / lipschitz;
            for _ in 0..200 {
                let g_vec = grad(&u_p);
                let mut moved = 0.0;
                for (slot, &g) in ders.iter().enumerate() {
                    let der = &self.net.ders[g];
                    let next = (u_p[slot] - step * g_vec[slot]).clamp(der.p_min, der.p_max);
                    moved += (next - u_p[slot]).abs();
                    u_p[slot] = next;
                }
                if moved < 1e-10 {
                    break;
                }
            }
        }
        let copies = self.predict(&u_p, z_local);
        self.u_out = u_p;
        Ok(copies)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::load_case_str;

    /// Quadratic probe region: argmin (x - target)^2 + (rho/2)(x - z + dual)^2
    /// over a single shared scalar coordinate.
    struct QuadRegion {
        target: F,
        coords: Vec<usize>,
    }

    impl RegionSubproblem for QuadRegion {
        fn coords(&self) -> &[usize] {
            &self.coords
        }
        fn solve_local(&mut self, z: &[F], dual: &[F], rho: F) -> Result<Vec<F>, AdmmError> {
            Ok(vec![(2.0 * self.target + rho * (z[0] - dual[0])) / (2.0 + rho)])
        }
    }

    #[test]
    fn two_region_quadratic_consensus_hits_the_average() {
        let (a, b) = (3.0, 7.0);
        let mut regions = vec![
            QuadRegion { target: a, coords: vec![0] },
            QuadRegion { target: b, coords: vec![0] },
        ];
        let mut state = AdmmState::new(&[1, 1], 1, 0.5);
        let run = consensus_admm(&mut regions, &mut state, 1e-4, 50).unwrap();
        assert!(run.converged, "residuals {} / {}", run.primal_residual, run.dual_residual);
        assert!(run.iterations <= 50);
        assert!(run.primal_residual < 1e-4 && run.dual_residual < 1e-4);
        assert!((state.z[0] - 0.5 * (a + b)).abs() < 1e-6, "z = {}", state.z[0]);
    }

    #[test]
    fn single_region_consensus_is_immediate() {
        let mut regions = vec![QuadRegion { target: 2.5, coords: vec![0] }];
        let mut state = AdmmState::new(&[1], 1, 0.5);
        let (primal, _) = admm_iterate(&mut regions, &mut state).unwrap();
        assert_eq!(primal, 0.0);
        assert_eq!(state.z[0], state.copies[0][0]);
    }

    #[test]
    fn dual_update_arithmetic() {
        // lambda = 0, copy = 1.0, z ends at 0.8 -> lambda' = 0.2.
        struct Fixed(Vec<usize>, F);
        impl RegionSubproblem for Fixed {
            fn coords(&self) -> &[usize] {
                &self.0
            }
            fn solve_local(&mut self, _: &[F], _: &[F], _: F) -> Result<Vec<F>, AdmmError> {
                Ok(vec![self.1])
            }
        }
        let mut regions = vec![Fixed(vec![0], 1.0), Fixed(vec![0], 0.6)];
        let mut state = AdmmState::new(&[1, 1], 1, 0.5);
        admm_iterate(&mut regions, &mut state).unwrap();
        // z = (1.0 + 0.6) / 2 = 0.8.
        assert!((state.z[0] - 0.8).abs() < 1e-15);
        assert!((state.duals[0][0] - 0.2).abs() < 1e-15);
        assert!((state.duals[1][0] + 0.2).abs() < 1e-15);
    }

    fn partition_case(feeders: &[usize]) -> Network {
        // Chain 1-2-3-4 with a tie (2,4); feeder labels provided per bus.
        let case = serde_json::json!({
            "base_kv": 12.66, "base_mva": 10.0, "slack": 1,
            "buses": feeders.iter().enumerate().map(|(i, f)| serde_json::json!({
                "id": i + 1, "p_load": 100.0 * i as f64, "q_load": 30.0 * i as f64, "feeder": f
            })).collect::<Vec<_>>(),
            "branches": (1..feeders.len()).map(|i| serde_json::json!({
                "id": i, "from_bus": i, "to_bus": i + 1, "r": 0.01, "x": 0.02,
                "status": "closed", "attackable": i > 1
            })).collect::<Vec<_>>(),
            "ties": [
                {"id": 101, "from_bus": 2, "to_bus": 4, "r": 0.01, "x": 0.01, "normally_open": true}
            ],
            "ders": [
                {"id": 1, "bus": 3, "p_min": 0.0, "p_max": 300.0,
                 "cost_c2": 1e-5, "cost_c1": 0.05, "cost_c0": 1.0},
                {"id": 2, "bus": 4, "p_min": 0.0, "p_max": 300.0,
                 "cost_c2": 1e-5, "cost_c1": 0.05, "cost_c0": 1.0}
            ],
            "critical": []
        });
        load_case_str(&case.to_string()).unwrap()
    }

    #[test]
    fn single_feeder_partition_has_empty_boundary() {
        let net = partition_case(&[1, 1, 1, 1]);
        let part = make_partition(&net).unwrap();
        assert_eq!(part.regions.len(), 1);
        assert!(part.boundary.is_empty());
    }

    #[test]
    fn two_feeders_share_the_interface_buses() {
        // Feeder split across branch (3,4) and tie (2,4).
        let net = partition_case(&[1, 1, 1, 2]);
        let part = make_partition(&net).unwrap();
        assert_eq!(part.regions.len(), 2);
        // Boundary: endpoints of crossing branch (3,4) and crossing tie (2,4).
        let boundary_ids: Vec<usize> = part.boundary.iter().map(|&p| net.buses[p].id).collect();
        assert_eq!(boundary_ids, vec![2, 3, 4]);
        for region in &part.regions {
            assert!(!region.coords.is_empty());
        }
        // Every boundary coordinate is shared by both regions here.
        for c in 0..part.boundary.len() {
            let owners =
                part.regions.iter().filter(|r| r.coords.contains(&c)).count();
            assert!(owners >= 2, "coordinate {c} owned by {owners}");
        }
    }

    #[test]
    fn projection_fixes_feasible_candidates() {
        let net = partition_case(&[1, 1, 2, 2]);
        let part = make_partition(&net).unwrap();
        let u = vec![120.0, 80.0];
        let proj = project_feasibility(&net, None, &u, &[false], &part, &AdmmConfig::default())
            .unwrap();
        assert!(proj.feasible);
        for (a, b) in proj.u.iter().zip(&u) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_clamps_out_of_box_dispatch() {
        let net = partition_case(&[1, 1, 2, 2]);
        let part = make_partition(&net).unwrap();
        let proj =
            project_feasibility(&net, None, &[900.0, -50.0], &[false], &part, &AdmmConfig::default())
                .unwrap();
        assert!(proj.feasible);
        assert_eq!(proj.u, vec![300.0, 0.0]);
    }

    #[test]
    fn projection_is_idempotent() {
        let net = partition_case(&[1, 1, 2, 2]);
        let part = make_partition(&net).unwrap();
        let cfg = AdmmConfig::default();
        let first =
            project_feasibility(&net, None, &[250.0, 10.0], &[true], &part, &cfg).unwrap();
        let second =
            project_feasibility(&net, None, &first.u, &[true], &part, &cfg).unwrap();
        let drift = first
            .u
            .iter()
            .zip(&second.u)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(drift < 1e-6, "drift {drift}");
        assert_eq!(first.feasible, second.feasible);
    }
}
