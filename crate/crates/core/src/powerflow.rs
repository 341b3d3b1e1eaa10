//! Steady-state AC power flow (Newton-Raphson, constant-PQ loads) and the
//! three defender objectives.
//!
//! The solver runs on the energized component only: buses with no closed path
//! to the slack are marked unenergized and never receive fabricated voltages.
//! DERs inject active power at unity power factor, i.e. negative PQ load.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{norm_inf, LuFactor, Mat};
use crate::netmodel::{Attack, Der, NetError, Network};
use crate::F;

#[derive(Debug, Error)]
pub enum PfError {
    #[error("dispatch is invalid: {0}")]
    Dispatch(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// DER active-power setpoints in kW, aligned with `Network::ders`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispatch {
    pub u: Vec<F>,
}

impl Dispatch {
    pub fn zeros(net: &Network) -> Self {
        Self { u: vec![0.0; net.ders.len()] }
    }

    /// Nominal operating point: every DER at the midpoint of its box.
    pub fn base_case(net: &Network) -> Self {
        Self { u: net.ders.iter().map(|d| 0.5 * (d.p_min + d.p_max)).collect() }
    }

    pub fn validate(&self, net: &Network) -> Result<(), PfError> {
        if self.u.len() != net.ders.len() {
            return Err(PfError::Dispatch(format!(
                "dispatch has {} entries for {} DERs",
                self.u.len(),
                net.ders.len()
            )));
        }
        for (v, d) in self.u.iter().zip(&net.ders) {
            if !(d.p_min <= *v && *v <= d.p_max) {
                return Err(PfError::Dispatch(format!(
                    "DER {} setpoint {v} outside [{}, {}]",
                    d.id, d.p_min, d.p_max
                )));
            }
        }
        Ok(())
    }

    /// Copy with every setpoint clamped into its box.
    pub fn clamped(&self, net: &Network) -> Self {
        let u = self
            .u
            .iter()
            .zip(&net.ders)
            .map(|(&v, d)| v.max(d.p_min).min(d.p_max))
            .collect();
        Self { u }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NrSettings {
    /// Convergence threshold on the max power mismatch, p.u.
    pub tolerance: F,
    pub max_iterations: usize,
}

impl Default for NrSettings {
    fn default() -> Self {
        Self { tolerance: 1e-6, max_iterations: 50 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    /// Voltage magnitude per bus position; `None` marks an unenergized bus.
    pub v_mag: Vec<Option<F>>,
    /// Voltage angle (rad) per bus position; `None` marks an unenergized bus.
    pub v_ang: Vec<Option<F>>,
    pub converged: bool,
    pub iterations: usize,
    pub max_mismatch: F,
}

impl PowerFlowSolution {
    pub fn min_energized_voltage(&self) -> Option<F> {
        self.v_mag.iter().flatten().copied().fold(None, |acc, v| {
            Some(match acc {
                Some(m) => m.min(v),
                None => v,
            })
        })
    }
}

/// Objective vector `(f1, f2, f3)`: load shed (kW), generation cost, voltage
/// band violation (p.u. sum).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveVector {
    pub f1: F,
    pub f2: F,
    pub f3: F,
}

impl ObjectiveVector {
    pub fn as_array(&self) -> [F; 3] {
        [self.f1, self.f2, self.f3]
    }
}

pub fn solve_power_flow(net: &Network, dispatch: &Dispatch) -> Result<PowerFlowSolution, PfError> {
    solve_power_flow_with(net, dispatch, &NrSettings::default())
}

pub fn solve_power_flow_with(
    net: &Network,
    dispatch: &Dispatch,
    settings: &NrSettings,
) -> Result<PowerFlowSolution, PfError> {
    dispatch.validate(net)?;
    let sys = EnergizedSystem::build(net, dispatch);
    Ok(sys.solve(settings))
}

/// The energized subnetwork in solver form: admittance matrix, scheduled
/// injections and index maps.
struct EnergizedSystem {
    n_buses: usize,
    /// Solver index per bus position (energized buses only).
    solver_index: Vec<Option<usize>>,
    /// Bus position per solver index; entry 0 is the slack.
    bus_of: Vec<usize>,
    g: Mat<F>,
    b: Mat<F>,
    /// Scheduled P injection, p.u., per solver index.
    p_spec: Vec<F>,
    q_spec: Vec<F>,
}

impl EnergizedSystem {
    fn build(net: &Network, dispatch: &Dispatch) -> Self {
        let index = net.bus_index();
        let energized = net.energized_buses();
        let slack_pos = index[&net.slack_bus];

        let mut bus_of = vec![slack_pos];
        for (pos, bus) in net.buses.iter().enumerate() {
            if pos != slack_pos && energized.contains(&bus.id) {
                bus_of.push(pos);
            }
        }
        let mut solver_index = vec![None; net.buses.len()];
        for (k, &pos) in bus_of.iter().enumerate() {
            solver_index[pos] = Some(k);
        }

        let n = bus_of.len();
        let mut g = Mat::zeros(n, n);
        let mut b = Mat::zeros(n, n);
        let mut stamp = |u: usize, v: usize, r: F, x: F| {
            let (Some(i), Some(j)) = (solver_index[index[&u]], solver_index[index[&v]]) else {
                return;
            };
            let den = r * r + x * x;
            let (gy, by) = (r / den, -x / den);
            g[(i, i)] += gy;
            g[(j, j)] += gy;
            g[(i, j)] -= gy;
            g[(j, i)] -= gy;
            b[(i, i)] += by;
            b[(j, j)] += by;
            b[(i, j)] -= by;
            b[(j, i)] -= by;
        };
        for br in &net.branches {
            if br.status == crate::netmodel::BranchStatus::Closed {
                stamp(br.from_bus, br.to_bus, br.r, br.x);
            }
        }
        for tie in &net.tie_switches {
            if tie.closed {
                stamp(tie.from_bus, tie.to_bus, tie.r, tie.x);
            }
        }

        let s_base_kw = 1000.0 * net.base_power_mva;
        let mut p_spec = vec![0.0; n];
        let mut q_spec = vec![0.0; n];
        for (pos, bus) in net.buses.iter().enumerate() {
            if let Some(i) = solver_index[pos] {
                p_spec[i] -= bus.p_load / s_base_kw;
                q_spec[i] -= bus.q_load / s_base_kw;
            }
        }
        for (der, &u) in net.ders.iter().zip(&dispatch.u) {
            if let Some(i) = solver_index[index[&der.bus]] {
                p_spec[i] += u / s_base_kw;
            }
        }

        Self { n_buses: net.buses.len(), solver_index, bus_of, g, b, p_spec, q_spec }
    }

    fn calc_injections(&self, vm: &[F], va: &[F]) -> (Vec<F>, Vec<F>) {
        let n = self.bus_of.len();
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for i in 0..n {
            let mut pi = 0.0;
            let mut qi = 0.0;
            for j in 0..n {
                let gij = self.g[(i, j)];
                let bij = self.b[(i, j)];
                if gij == 0.0 && bij == 0.0 {
                    continue;
                }
                let d = va[i] - va[j];
                let (sin, cos) = d.sin_cos();
                pi += vm[j] * (gij * cos + bij * sin);
                qi += vm[j] * (gij * sin - bij * cos);
            }
            p[i] = vm[i] * pi;
            q[i] = vm[i] * qi;
        }
        (p, q)
    }

    fn mismatch(&self, p: &[F], q: &[F]) -> Vec<F> {
        let n = self.bus_of.len();
        let m = n - 1;
        let mut mis = vec![0.0; 2 * m];
        for i in 1..n {
            mis[i - 1] = self.p_spec[i] - p[i];
            mis[m + i - 1] = self.q_spec[i] - q[i];
        }
        mis
    }

    fn jacobian(&self, vm: &[F], va: &[F], p: &[F], q: &[F]) -> Mat<F> {
        let n = self.bus_of.len();
        let m = n - 1;
        let mut jac = Mat::zeros(2 * m, 2 * m);
        for i in 1..n {
            for j in 1..n {
                let gij = self.g[(i, j)];
                let bij = self.b[(i, j)];
                let (h, nn, mm, l) = if i == j {
                    (
                        -q[i] - bij * vm[i] * vm[i],
                        p[i] / vm[i] + gij * vm[i],
                        p[i] - gij * vm[i] * vm[i],
                        q[i] / vm[i] - bij * vm[i],
                    )
                } else {
                    if gij == 0.0 && bij == 0.0 {
                        continue;
                    }
                    let d = va[i] - va[j];
                    let (sin, cos) = d.sin_cos();
                    let a = gij * cos + bij * sin;
                    let s = gij * sin - bij * cos;
                    (vm[i] * vm[j] * s, vm[i] * a, -vm[i] * vm[j] * a, vm[i] * s)
                };
                jac[(i - 1, j - 1)] = h;
                jac[(i - 1, m + j - 1)] = nn;
                jac[(m + i - 1, j - 1)] = mm;
                jac[(m + i - 1, m + j - 1)] = l;
            }
        }
        jac
    }

    fn solve(&self, settings: &NrSettings) -> PowerFlowSolution {
        let n = self.bus_of.len();
        let m = n - 1;
        let mut vm = vec![1.0; n];
        let mut va = vec![0.0; n];
        let mut converged = false;
        let mut iterations = 0;
        let mut max_mismatch = F::INFINITY;

        for _ in 0..settings.max_iterations {
            iterations += 1;
            let (p, q) = self.calc_injections(&vm, &va);
            let mis = self.mismatch(&p, &q);
            max_mismatch = norm_inf(&mis);
            if !max_mismatch.is_finite() {
                break;
            }
            if max_mismatch < settings.tolerance {
                converged = true;
                break;
            }
            if m == 0 {
                break;
            }
            let jac = self.jacobian(&vm, &va, &p, &q);
            let Some(factor) = LuFactor::new(&jac) else {
                break;
            };
            let step = factor.solve(&mis);
            for i in 1..n {
                va[i] += step[i - 1];
                vm[i] += step[m + i - 1];
                if vm[i] <= 0.0 {
                    // A collapsed magnitude means the iteration left the
                    // physical region; report divergence instead of chasing it.
                    return self.pack(&vm, &va, false, iterations, max_mismatch);
                }
            }
            // Reactive-limit hook: DERs run at unity power factor, so no bus
            // ever converts between PQ and PV here. A Q-capable source model
            // would convert violated buses and force a matrix rebuild.
            let _ = enforce_der_q_limits();
        }
        self.pack(&vm, &va, converged, iterations, max_mismatch)
    }

    fn pack(&self, vm: &[F], va: &[F], converged: bool, iterations: usize, max_mismatch: F) -> PowerFlowSolution {
        let mut v_mag = vec![None; self.n_buses];
        let mut v_ang = vec![None; self.n_buses];
        for (pos, idx) in self.solver_index.iter().enumerate() {
            if let Some(k) = *idx {
                v_mag[pos] = Some(vm[k]);
                v_ang[pos] = Some(va[k]);
            }
        }
        PowerFlowSolution { v_mag, v_ang, converged, iterations, max_mismatch }
    }
}

fn enforce_der_q_limits() -> bool {
    false
}

/// Outcome of a scenario solve, including any loads curtailed to reach
/// convergence. `net` is the scenario network with curtailments applied.
#[derive(Debug, Clone)]
pub struct ScenarioSolution {
    pub solution: PowerFlowSolution,
    pub curtailed_kw: F,
    pub curtailed_buses: Vec<usize>,
    pub net: Network,
}

const CURTAILMENT_ROUNDS: usize = 10;

/// Solve a scenario, curtailing loads if Newton-Raphson diverges: drop the
/// largest non-critical energized load (its full demand) and re-solve, up to
/// ten rounds. Critical buses are curtailed only when no non-critical load
/// remains. Curtailed demand counts toward f1.
pub fn solve_with_curtailment(net: &Network, dispatch: &Dispatch) -> Result<ScenarioSolution, PfError> {
    solve_with_curtailment_settings(net, dispatch, &NrSettings::default())
}

pub fn solve_with_curtailment_settings(
    net: &Network,
    dispatch: &Dispatch,
    settings: &NrSettings,
) -> Result<ScenarioSolution, PfError> {
    dispatch.validate(net)?;
    let mut work = net.clone();
    let mut curtailed_kw = 0.0;
    let mut curtailed_buses = Vec::new();
    let mut solution = solve_power_flow_with(&work, dispatch, settings)?;
    for _ in 0..CURTAILMENT_ROUNDS {
        if solution.converged {
            break;
        }
        let energized = work.energized_buses();
        let pick = |critical: bool| {
            work.buses
                .iter()
                .filter(|b| {
                    b.p_load > 0.0
                        && energized.contains(&b.id)
                        && work.critical_buses.contains(&b.id) == critical
                })
                .fold(None::<(F, usize)>, |best, b| match best {
                    Some((p, id)) if p > b.p_load || (p == b.p_load && id < b.id) => Some((p, id)),
                    _ => Some((b.p_load, b.id)),
                })
                .map(|(_, id)| id)
        };
        let Some(victim) = pick(false).or_else(|| pick(true)) else {
            break;
        };
        let pos = work.buses.iter().position(|b| b.id == victim).expect("victim exists");
        curtailed_kw += work.buses[pos].p_load;
        curtailed_buses.push(victim);
        work.buses[pos].p_load = 0.0;
        work.buses[pos].q_load = 0.0;
        solution = solve_power_flow_with(&work, dispatch, settings)?;
    }
    Ok(ScenarioSolution { solution, curtailed_kw, curtailed_buses, net: work })
}

/// Unserved demand in kW: load at unenergized buses, plus demand curtailed to
/// reach convergence, plus all remaining energized demand when even the
/// curtailment fallback failed to converge.
pub fn load_shed_f1(net: &Network, scen: &ScenarioSolution) -> F {
    let energized = scen.net.energized_buses();
    let mut shed: F = net
        .buses
        .iter()
        .filter(|b| !energized.contains(&b.id))
        .map(|b| b.p_load)
        .sum();
    shed += scen.curtailed_kw;
    if !scen.solution.converged {
        shed += scen
            .net
            .buses
            .iter()
            .filter(|b| energized.contains(&b.id))
            .map(|b| b.p_load)
            .sum::<F>();
    }
    shed
}

/// Quadratic generation cost over all DER setpoints.
pub fn generation_cost_f2(dispatch: &Dispatch, ders: &[Der]) -> F {
    dispatch
        .u
        .iter()
        .zip(ders)
        .map(|(&u, d)| d.cost_c2 * u * u + d.cost_c1 * u + d.cost_c0)
        .sum()
}

pub const VOLTAGE_BAND: (F, F) = (0.95, 1.05);

/// Sum of band violations over energized buses.
pub fn voltage_penalty_f3(sol: &PowerFlowSolution) -> F {
    let (lo, hi) = VOLTAGE_BAND;
    sol.v_mag
        .iter()
        .flatten()
        .map(|&v| (v - hi).max(0.0) + (lo - v).max(0.0))
        .sum()
}

/// Full evaluation of a scenario: returns the objective vector plus the
/// underlying solve for callers that need the voltage profile.
#[derive(Debug, Clone)]
pub struct ScenarioEvaluation {
    pub objectives: ObjectiveVector,
    pub scenario: ScenarioSolution,
}

/// Apply `(attack, sigma)`, solve, and score. Pure: identical inputs yield
/// identical outputs.
pub fn evaluate_objectives(
    net: &Network,
    dispatch: &Dispatch,
    sigma: &[bool],
    attack: Option<&Attack>,
) -> Result<ScenarioEvaluation, PfError> {
    let scenario_net = net.apply_scenario(attack, sigma)?;
    let scen = solve_with_curtailment(&scenario_net, dispatch)?;
    let f1 = load_shed_f1(&scenario_net, &scen);
    let f2 = generation_cost_f2(dispatch, &net.ders);
    let f3 = if scen.solution.converged { voltage_penalty_f3(&scen.solution) } else { 0.0 };
    Ok(ScenarioEvaluation { objectives: ObjectiveVector { f1, f2, f3 }, scenario: scen })
}

/// Sensitivity of energized voltage magnitudes to per-unit active injection
/// at each DER bus, evaluated at a converged operating point. Entry `g` is
/// `None` when DER `g` sits on an unenergized bus.
pub fn voltage_sensitivities(
    net: &Network,
    dispatch: &Dispatch,
    sol: &PowerFlowSolution,
) -> Option<Vec<Option<Vec<F>>>> {
    if !sol.converged {
        return None;
    }
    let sys = EnergizedSystem::build(net, dispatch);
    let n = sys.bus_of.len();
    let m = n - 1;
    if m == 0 {
        return Some(vec![None; net.ders.len()]);
    }
    let vm: Vec<F> = sys.bus_of.iter().map(|&pos| sol.v_mag[pos].expect("energized")).collect();
    let va: Vec<F> = sys.bus_of.iter().map(|&pos| sol.v_ang[pos].expect("energized")).collect();
    let (p, q) = sys.calc_injections(&vm, &va);
    let jac = sys.jacobian(&vm, &va, &p, &q);
    let factor = LuFactor::new(&jac)?;

    let index = net.bus_index();
    let mut out = Vec::with_capacity(net.ders.len());
    for der in &net.ders {
        let pos = index[&der.bus];
        let Some(k) = sys.solver_index[pos] else {
            out.push(None);
            continue;
        };
        if k == 0 {
            // Injection at the slack is absorbed by the slack itself.
            out.push(Some(vec![0.0; net.buses.len()]));
            continue;
        }
        let mut rhs = vec![0.0; 2 * m];
        rhs[k - 1] = 1.0;
        let delta = factor.solve(&rhs);
        let mut dv = vec![0.0; net.buses.len()];
        for i in 1..n {
            dv[sys.bus_of[i]] = delta[m + i - 1];
        }
        out.push(Some(dv));
    }
    Some(out)
}

/// Max nodal power-balance residual (p.u.) of a converged solution, checked
/// against the scheduled injections. Test oracle for solver consistency.
pub fn power_balance_residual(net: &Network, dispatch: &Dispatch, sol: &PowerFlowSolution) -> F {
    let sys = EnergizedSystem::build(net, dispatch);
    let vm: Vec<F> = sys.bus_of.iter().map(|&pos| sol.v_mag[pos].unwrap()).collect();
    let va: Vec<F> = sys.bus_of.iter().map(|&pos| sol.v_ang[pos].unwrap()).collect();
    let (p, q) = sys.calc_injections(&vm, &va);
    norm_inf(&sys.mismatch(&p, &q))
}

/// Per-bus voltage magnitudes keyed by bus id, for reports.
pub fn voltage_by_bus(net: &Network, sol: &PowerFlowSolution) -> BTreeMap<usize, Option<F>> {
    net.buses.iter().enumerate().map(|(pos, b)| (b.id, sol.v_mag[pos])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::load_case_str;

    fn two_bus_case(p_kw: F, q_kvar: F) -> Network {
        let text = serde_json::json!({
            "base_kv": 12.66,
            "base_mva": 10.0,
            "slack": 1,
            "buses": [
                {"id": 1, "p_load": 0.0, "q_load": 0.0, "feeder": 1},
                {"id": 2, "p_load": p_kw, "q_load": q_kvar, "feeder": 1}
            ],
            "branches": [
                {"id": 1, "from_bus": 1, "to_bus": 2, "r": 0.01, "x": 0.01,
                 "status": "closed", "attackable": true}
            ],
            "ties": [], "ders": [], "critical": []
        })
        .to_string();
        load_case_str(&text).unwrap()
    }

    /// Closed-form high-voltage root of the two-bus quadratic:
    /// V2^4 + V2^2 (2(Pr+Qx) - V1^2) + (P^2+Q^2)(r^2+x^2) = 0.
    fn two_bus_voltage_oracle(p: F, q: F, r: F, x: F) -> F {
        let a = 1.0 - 2.0 * (p * r + q * x);
        let disc = a * a - 4.0 * (p * p + q * q) * (r * r + x * x);
        (0.5 * (a + disc.sqrt())).sqrt()
    }

    #[test]
    fn flat_no_load_case_converges_in_one_iteration() {
        let net = two_bus_case(0.0, 0.0);
        let sol = solve_power_flow(&net, &Dispatch::zeros(&net)).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.v_mag[0], Some(1.0));
        assert_eq!(sol.v_mag[1], Some(1.0));
    }

    #[test]
    fn two_bus_matches_closed_form() {
        // 0.1 + j0.05 p.u. on a 10 MVA base.
        let net = two_bus_case(1000.0, 500.0);
        let settings = NrSettings { tolerance: 1e-10, max_iterations: 50 };
        let sol = solve_power_flow_with(&net, &Dispatch::zeros(&net), &settings).unwrap();
        assert!(sol.converged);
        let expected = two_bus_voltage_oracle(0.1, 0.05, 0.01, 0.01);
        let got = sol.v_mag[1].unwrap();
        assert!((got - expected).abs() < 1e-8, "got {got}, oracle {expected}");
    }

    #[test]
    fn converged_solution_balances_power() {
        let net = two_bus_case(1000.0, 500.0);
        let d = Dispatch::zeros(&net);
        let sol = solve_power_flow(&net, &d).unwrap();
        assert!(sol.converged);
        assert!(power_balance_residual(&net, &d, &sol) < 1e-6);
    }

    #[test]
    fn impossible_load_reports_divergence_not_a_state() {
        // Far beyond the maximum power transfer of the line.
        let net = two_bus_case(300_000.0, 150_000.0);
        let sol = solve_power_flow(&net, &Dispatch::zeros(&net)).unwrap();
        assert!(!sol.converged);
    }

    #[test]
    fn curtailment_restores_convergence_and_feeds_f1() {
        let net = two_bus_case(300_000.0, 150_000.0);
        let d = Dispatch::zeros(&net);
        let scen = solve_with_curtailment(&net, &d).unwrap();
        assert!(scen.solution.converged);
        assert_eq!(scen.curtailed_buses, vec![2]);
        assert_eq!(load_shed_f1(&net, &scen), 300_000.0);
    }

    #[test]
    fn f2_examples() {
        let der = |c2: F, c1: F, c0: F| Der {
            id: 1,
            bus: 1,
            p_min: 0.0,
            p_max: 1000.0,
            cost_c2: c2,
            cost_c1: c1,
            cost_c0: c0,
        };
        // u = 0 leaves only the constant terms.
        let ders = vec![der(0.5, 2.0, 5.0), der(0.1, 1.0, 7.0)];
        assert_eq!(generation_cost_f2(&Dispatch { u: vec![0.0, 0.0] }, &ders), 12.0);
        // Linear-only coefficients sum the setpoints.
        let ders = vec![der(0.0, 1.0, 0.0), der(0.0, 1.0, 0.0)];
        assert_eq!(generation_cost_f2(&Dispatch { u: vec![10.0, 20.0] }, &ders), 30.0);
        // One DER, c2=0.01, c1=2, c0=5, u=10 -> 26.
        let ders = vec![der(0.01, 2.0, 5.0)];
        assert_eq!(generation_cost_f2(&Dispatch { u: vec![10.0] }, &ders), 26.0);
    }

    #[test]
    fn f3_examples() {
        let sol = |mags: &[F]| PowerFlowSolution {
            v_mag: mags.iter().map(|&v| Some(v)).collect(),
            v_ang: mags.iter().map(|_| Some(0.0)).collect(),
            converged: true,
            iterations: 1,
            max_mismatch: 0.0,
        };
        assert_eq!(voltage_penalty_f3(&sol(&[1.0, 0.95, 1.05])), 0.0);
        let one_high = voltage_penalty_f3(&sol(&[1.07, 1.0]));
        assert!((one_high - 0.02).abs() < 1e-12);
        let two_low = voltage_penalty_f3(&sol(&[0.90, 0.94]));
        assert!((two_low - 0.06).abs() < 1e-12);
        // Unenergized buses never contribute.
        let mixed = PowerFlowSolution {
            v_mag: vec![Some(1.0), None],
            v_ang: vec![Some(0.0), None],
            converged: true,
            iterations: 1,
            max_mismatch: 0.0,
        };
        assert_eq!(voltage_penalty_f3(&mixed), 0.0);
    }

    #[test]
    fn dispatch_bounds_are_enforced() {
        let text = serde_json::json!({
            "base_kv": 12.66, "base_mva": 10.0, "slack": 1,
            "buses": [
                {"id": 1, "p_load": 0.0, "q_load": 0.0, "feeder": 1},
                {"id": 2, "p_load": 10.0, "q_load": 5.0, "feeder": 1}
            ],
            "branches": [
                {"id": 1, "from_bus": 1, "to_bus": 2, "r": 0.01, "x": 0.01,
                 "status": "closed", "attackable": true}
            ],
            "ties": [],
            "ders": [{"id": 1, "bus": 2, "p_min": 0.0, "p_max": 100.0,
                      "cost_c2": 0.0, "cost_c1": 1.0, "cost_c0": 0.0}],
            "critical": []
        })
        .to_string();
        let net = load_case_str(&text).unwrap();
        let over = Dispatch { u: vec![200.0] };
        assert!(solve_power_flow(&net, &over).is_err());
        let clamped = over.clamped(&net);
        assert_eq!(clamped.u, vec![100.0]);
        assert!(solve_power_flow(&net, &clamped).is_ok());
    }

    #[test]
    fn der_injection_raises_voltage() {
        let text = serde_json::json!({
            "base_kv": 12.66, "base_mva": 10.0, "slack": 1,
            "buses": [
                {"id": 1, "p_load": 0.0, "q_load": 0.0, "feeder": 1},
                {"id": 2, "p_load": 1000.0, "q_load": 400.0, "feeder": 1}
            ],
            "branches": [
                {"id": 1, "from_bus": 1, "to_bus": 2, "r": 0.02, "x": 0.02,
                 "status": "closed", "attackable": true}
            ],
            "ties": [],
            "ders": [{"id": 1, "bus": 2, "p_min": 0.0, "p_max": 800.0,
                      "cost_c2": 0.0, "cost_c1": 1.0, "cost_c0": 0.0}],
            "critical": []
        })
        .to_string();
        let net = load_case_str(&text).unwrap();
        let low = solve_power_flow(&net, &Dispatch::zeros(&net)).unwrap();
        let high = solve_power_flow(&net, &Dispatch { u: vec![800.0] }).unwrap();
        assert!(high.v_mag[1].unwrap() > low.v_mag[1].unwrap());
    }

    #[test]
    fn sensitivities_predict_voltage_response() {
        let text = serde_json::json!({
            "base_kv": 12.66, "base_mva": 10.0, "slack": 1,
            "buses": [
                {"id": 1, "p_load": 0.0, "q_load": 0.0, "feeder": 1},
                {"id": 2, "p_load": 1000.0, "q_load": 400.0, "feeder": 1},
                {"id": 3, "p_load": 500.0, "q_load": 200.0, "feeder": 1}
            ],
            "branches": [
                {"id": 1, "from_bus": 1, "to_bus": 2, "r": 0.02, "x": 0.02,
                 "status": "closed", "attackable": true},
                {"id": 2, "from_bus": 2, "to_bus": 3, "r": 0.03, "x": 0.03,
                 "status": "closed", "attackable": true}
            ],
            "ties": [],
            "ders": [{"id": 1, "bus": 3, "p_min": 0.0, "p_max": 500.0,
                      "cost_c2": 0.0, "cost_c1": 1.0, "cost_c0": 0.0}],
            "critical": []
        })
        .to_string();
        let net = load_case_str(&text).unwrap();
        let d0 = Dispatch { u: vec![100.0] };
        let sol0 = solve_power_flow(&net, &d0).unwrap();
        let sens = voltage_sensitivities(&net, &d0, &sol0).unwrap();
        let dv = sens[0].as_ref().unwrap();

        let delta_kw = 50.0;
        let d1 = Dispatch { u: vec![150.0] };
        let sol1 = solve_power_flow(&net, &d1).unwrap();
        let predicted = sol0.v_mag[2].unwrap() + dv[2] * delta_kw / 10_000.0;
        let actual = sol1.v_mag[2].unwrap();
        assert!((predicted - actual).abs() < 1e-4, "predicted {predicted}, actual {actual}");
    }
}
