//! Meta-training of the attacker parameters over perturbed network
//! configurations (first-order scheme: the outer gradient is evaluated at the
//! adapted parameters and applied to the shared initialization).

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::hgnn::{hgnn_forward, loss_and_gradient, mse_loss, HgnnParams, ShapeError};
use super::hypergraph::{build_hypergraph, Hypergraph};
use super::labels::impact_labels;
use crate::linalg::Mat;
use crate::netmodel::{BranchStatus, Network};
use crate::powerflow::{solve_with_curtailment, Dispatch, PfError};
use crate::F;

pub const FEATURE_DIM: usize = 4;

#[derive(Debug, Error)]
pub enum MamlError {
    #[error("power flow failed while building a task: {0}")]
    Pf(#[from] PfError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("non-finite meta loss at iteration {iteration}; learning rates diverge")]
    NonFinite { iteration: usize },
    #[error("task sampler needs a pool of at least one task")]
    EmptyPool,
}

/// Bus feature matrix: closed-line degree, apparent load magnitude (p.u.),
/// DER presence flag, voltage magnitude at base dispatch (zero when
/// unenergized).
pub fn node_features(net: &Network) -> Result<Mat<F>, PfError> {
    let index = net.bus_index();
    let n = net.buses.len();
    let mut degree = vec![0.0; n];
    for (u, v) in net.closed_edges() {
        degree[index[&u]] += 1.0;
        degree[index[&v]] += 1.0;
    }
    let mut der_here = vec![0.0; n];
    for d in &net.ders {
        der_here[index[&d.bus]] = 1.0;
    }
    let scen = solve_with_curtailment(net, &Dispatch::base_case(net))?;
    let s_base_kw = 1000.0 * net.base_power_mva;
    let mut x = Mat::zeros(n, FEATURE_DIM);
    for (i, bus) in net.buses.iter().enumerate() {
        x[(i, 0)] = degree[i];
        x[(i, 1)] = (bus.p_load * bus.p_load + bus.q_load * bus.q_load).sqrt() / s_base_kw;
        x[(i, 2)] = der_here[i];
        x[(i, 3)] = scen.solution.v_mag[i].unwrap_or(0.0);
    }
    Ok(x)
}

/// One meta-learning task: a perturbed network with features, impact labels
/// and a disjoint train/test split over bus positions.
#[derive(Debug, Clone)]
pub struct Task {
    pub net: Network,
    pub hypergraph: Hypergraph<F>,
    pub features: Mat<F>,
    pub labels: Vec<F>,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

impl Task {
    pub fn from_network(net: Network, rng: &mut ChaCha8Rng) -> Result<Self, MamlError> {
        net.validate().map_err(PfError::Net)?;
        let hypergraph = build_hypergraph(&net);
        let features = node_features(&net)?;
        let labels = impact_labels(&net)?;
        let mut order: Vec<usize> = (0..net.buses.len()).collect();
        order.shuffle(rng);
        let half = order.len().div_ceil(2);
        let mut train_idx = order[..half].to_vec();
        let mut test_idx = order[half..].to_vec();
        train_idx.sort_unstable();
        test_idx.sort_unstable();
        Ok(Self { net, hypergraph, features, labels, train_idx, test_idx })
    }
}

/// Deterministic pool of perturbed tasks. Perturbations: per-feeder load
/// scaling in `[0.7, 1.3]`, single-DER outage with probability 0.3, and a
/// closed-branch/open-tie swap with probability 0.2.
pub struct TaskSampler {
    tasks: Vec<Task>,
}

impl TaskSampler {
    pub fn new(base: &Network, pool_size: usize, seed: u64) -> Result<Self, MamlError> {
        if pool_size == 0 {
            return Err(MamlError::EmptyPool);
        }
        let mut tasks = Vec::with_capacity(pool_size);
        for i in 0..pool_size {
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed.wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            );
            let net = perturb(base, &mut rng);
            tasks.push(Task::from_network(net, &mut rng)?);
        }
        Ok(Self { tasks })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn task(&self, i: usize) -> &Task {
        &self.tasks[i % self.tasks.len()]
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }
}

fn perturb(base: &Network, rng: &mut ChaCha8Rng) -> Network {
    let mut net = base.clone();

    // Load scaling per feeder zone.
    let feeders: std::collections::BTreeSet<usize> = net.buses.iter().map(|b| b.feeder).collect();
    let scale: std::collections::BTreeMap<usize, F> =
        feeders.into_iter().map(|f| (f, rng.gen_range(0.7..1.3))).collect();
    for bus in &mut net.buses {
        let s = scale[&bus.feeder];
        bus.p_load *= s;
        bus.q_load *= s;
    }

    // Single-DER outage.
    if !net.ders.is_empty() && rng.gen_bool(0.3) {
        let g = rng.gen_range(0..net.ders.len());
        net.ders.remove(g);
    }

    // Swap one closed branch with an open tie: close the tie and open a
    // branch on the cycle it creates, keeping the operating topology radial.
    if !net.tie_switches.is_empty() && rng.gen_bool(0.2) {
        let t = rng.gen_range(0..net.tie_switches.len());
        let (a, b) = (net.tie_switches[t].from_bus, net.tie_switches[t].to_bus);
        if let Some(path) = branch_path(&net, a, b) {
            let victim = path[rng.gen_range(0..path.len())];
            let branch = net.branches.iter_mut().find(|br| br.id == victim).unwrap();
            branch.status = BranchStatus::Open;
            net.tie_switches[t].closed = true;
        }
    }
    net
}

/// Branch ids on the tree path between two buses over closed branches.
fn branch_path(net: &Network, from: usize, to: usize) -> Option<Vec<usize>> {
    use std::collections::{BTreeMap, VecDeque};
    let mut adj: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for br in &net.branches {
        if br.status == BranchStatus::Closed {
            adj.entry(br.from_bus).or_default().push((br.to_bus, br.id));
            adj.entry(br.to_bus).or_default().push((br.from_bus, br.id));
        }
    }
    let mut parent: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut queue = VecDeque::from([from]);
    let mut seen = std::collections::BTreeSet::from([from]);
    while let Some(u) = queue.pop_front() {
        if u == to {
            let mut path = Vec::new();
            let mut cur = to;
            while cur != from {
                let (prev, id) = parent[&cur];
                path.push(id);
                cur = prev;
            }
            path.reverse();
            return Some(path);
        }
        for &(v, id) in adj.get(&u).into_iter().flatten() {
            if seen.insert(v) {
                parent.insert(v, (u, id));
                queue.push_back(v);
            }
        }
    }
    None
}

/// One inner gradient step on the task's train split.
pub fn inner_adapt(theta: &HgnnParams<F>, task: &Task, alpha: F) -> Result<HgnnParams<F>, MamlError> {
    let (_, grad) =
        loss_and_gradient(&task.hypergraph, &task.features, theta, &task.labels, &task.train_idx)?;
    let mut adapted = theta.clone();
    adapted.axpy(-alpha, &grad);
    Ok(adapted)
}

/// Mean test-split loss after one inner adaptation step per task.
pub fn meta_test_loss(theta: &HgnnParams<F>, tasks: &[Task], alpha: F) -> Result<F, MamlError> {
    let mut sum = 0.0;
    for task in tasks {
        let adapted = inner_adapt(theta, task, alpha)?;
        let rho = hgnn_forward(&task.hypergraph, &task.features, &adapted)?;
        sum += mse_loss(&rho, &task.labels, &task.test_idx);
    }
    Ok(sum / tasks.len() as F)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MamlConfig {
    pub layers: usize,
    pub hidden: usize,
    pub alpha: F,
    pub beta: F,
    pub meta_iters: usize,
    pub meta_batch: usize,
    pub seed: u64,
}

impl Default for MamlConfig {
    fn default() -> Self {
        Self { layers: 2, hidden: 16, alpha: 0.01, beta: 0.001, meta_iters: 200, meta_batch: 4, seed: 42 }
    }
}

#[derive(Debug, Clone)]
pub struct MetaResult {
    pub theta: HgnnParams<F>,
    /// Summed pre-update test losses of each iteration's batch.
    pub batch_losses: Vec<F>,
}

/// First-order meta-training: for each batch task, adapt on the train split,
/// take the test-split gradient at the adapted parameters, and apply the
/// summed gradients to the shared initialization.
pub fn meta_train(sampler: &TaskSampler, cfg: &MamlConfig) -> Result<MetaResult, MamlError> {
    if sampler.is_empty() {
        return Err(MamlError::EmptyPool);
    }
    let mut theta = HgnnParams::init(FEATURE_DIM, cfg.hidden, cfg.layers, cfg.seed);
    let mut batch_losses = Vec::with_capacity(cfg.meta_iters);
    for iter in 0..cfg.meta_iters {
        let mut outer = HgnnParams::zeros(FEATURE_DIM, cfg.hidden, cfg.layers);
        let mut batch_loss = 0.0;
        for j in 0..cfg.meta_batch {
            let task = sampler.task(iter * cfg.meta_batch + j);
            let adapted = inner_adapt(&theta, task, cfg.alpha)?;
            let (test_loss, grad) = loss_and_gradient(
                &task.hypergraph,
                &task.features,
                &adapted,
                &task.labels,
                &task.test_idx,
            )?;
            batch_loss += test_loss;
            outer.axpy(1.0, &grad);
        }
        if !batch_loss.is_finite() {
            return Err(MamlError::NonFinite { iteration: iter });
        }
        batch_losses.push(batch_loss);
        theta.axpy(-cfg.beta, &outer);
    }
    Ok(MetaResult { theta, batch_losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacker::hypergraph::Hypergraph;
    use crate::netmodel::load_case_str;

    fn small_net() -> Network {
        let case = serde_json::json!({
            "base_kv": 12.66, "base_mva": 10.0, "slack": 1,
            "buses": [
                {"id": 1, "p_load": 0.0, "q_load": 0.0, "feeder": 1},
                {"id": 2, "p_load": 400.0, "q_load": 150.0, "feeder": 1},
                {"id": 3, "p_load": 300.0, "q_load": 120.0, "feeder": 1},
                {"id": 4, "p_load": 250.0, "q_load": 90.0, "feeder": 2},
                {"id": 5, "p_load": 150.0, "q_load": 60.0, "feeder": 2},
                {"id": 6, "p_load": 100.0, "q_load": 40.0, "feeder": 2}
            ],
            "branches": [
                {"id": 1, "from_bus": 1, "to_bus": 2, "r": 0.004, "x": 0.008,
                 "status": "closed", "attackable": false},
                {"id": 2, "from_bus": 2, "to_bus": 3, "r": 0.01, "x": 0.02,
                 "status": "closed", "attackable": true},
                {"id": 3, "from_bus": 2, "to_bus": 4, "r": 0.01, "x": 0.02,
                 "status": "closed", "attackable": true},
                {"id": 4, "from_bus": 4, "to_bus": 5, "r": 0.02, "x": 0.03,
                 "status": "closed", "attackable": true},
                {"id": 5, "from_bus": 5, "to_bus": 6, "r": 0.02, "x": 0.03,
                 "status": "closed", "attackable": true}
            ],
            "ties": [
                {"id": 101, "from_bus": 3, "to_bus": 6, "r": 0.01, "x": 0.01, "normally_open": true}
            ],
            "ders": [
                {"id": 1, "bus": 5, "p_min": 0.0, "p_max": 200.0,
                 "cost_c2": 1e-5, "cost_c1": 0.05, "cost_c0": 1.0}
            ],
            "critical": [4]
        });
        load_case_str(&case.to_string()).unwrap()
    }

    #[test]
    fn sampled_tasks_stay_valid_and_deterministic() {
        let net = small_net();
        let a = TaskSampler::new(&net, 8, 42).unwrap();
        let b = TaskSampler::new(&net, 8, 42).unwrap();
        for (ta, tb) in a.tasks().iter().zip(b.tasks()) {
            ta.net.validate().unwrap();
            assert_eq!(ta.labels, tb.labels);
            assert_eq!(ta.train_idx, tb.train_idx);
            assert!(ta.train_idx.iter().all(|i| !ta.test_idx.contains(i)));
            assert!(ta.labels.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        // Different seeds perturb differently somewhere in the pool.
        let c = TaskSampler::new(&net, 8, 43).unwrap();
        assert!(a.tasks().iter().zip(c.tasks()).any(|(x, y)| x.labels != y.labels));
    }

    #[test]
    fn inner_adapt_with_zero_rate_is_identity() {
        let net = small_net();
        let sampler = TaskSampler::new(&net, 1, 7).unwrap();
        let theta = HgnnParams::init(FEATURE_DIM, 8, 2, 1);
        let adapted = inner_adapt(&theta, sampler.task(0), 0.0).unwrap();
        assert_eq!(adapted.max_abs_diff(&theta), 0.0);
    }

    #[test]
    fn stationary_point_stays_fixed() {
        // Zero weights score zero everywhere; zero labels make the gradient
        // vanish, so the step keeps the parameters exactly.
        let net = small_net();
        let mut sampler = TaskSampler::new(&net, 1, 7).unwrap();
        sampler.tasks[0].labels = vec![0.0; sampler.tasks[0].labels.len()];
        let theta = HgnnParams::zeros(FEATURE_DIM, 8, 2);
        let adapted = inner_adapt(&theta, sampler.task(0), 0.5).unwrap();
        assert_eq!(adapted.max_abs_diff(&theta), 0.0);
    }

    #[test]
    fn scalar_quadratic_probe_steps_to_point_nine() {
        // Single vertex, self-hyperedge, scalar widths: with w_head = 1/sqrt(2)
        // and label 0, the train loss is w^2/2, so dL/dw = w and one step at
        // alpha = 0.1 from w = 1 lands on 0.9.
        let hg: Hypergraph<F> = Hypergraph::from_edge_sets(1, vec![vec![0]]);
        let x = Mat::from_rows(vec![vec![1.0]]);
        let theta = HgnnParams {
            w_layers: vec![Mat::from_rows(vec![vec![1.0]])],
            w_head: vec![std::f64::consts::FRAC_1_SQRT_2],
        };
        let task = Task {
            net: small_net(),
            hypergraph: hg,
            features: x,
            labels: vec![0.0],
            train_idx: vec![0],
            test_idx: vec![],
        };
        let adapted = inner_adapt(&theta, &task, 0.1).unwrap();
        assert!((adapted.w_layers[0][(0, 0)] - 0.9).abs() < 1e-12);
        // The head moves by its own analytic gradient, 2 * w^2 * w_head.
        let expected_head =
            std::f64::consts::FRAC_1_SQRT_2 - 0.1 * 2.0 * std::f64::consts::FRAC_1_SQRT_2;
        assert!((adapted.w_head[0] - expected_head).abs() < 1e-12);
    }

    #[test]
    fn zero_outer_rate_never_moves_theta() {
        let net = small_net();
        let sampler = TaskSampler::new(&net, 4, 11).unwrap();
        let cfg = MamlConfig { beta: 0.0, meta_iters: 5, meta_batch: 2, hidden: 8, ..Default::default() };
        let result = meta_train(&sampler, &cfg).unwrap();
        let init = HgnnParams::init(FEATURE_DIM, cfg.hidden, cfg.layers, cfg.seed);
        assert_eq!(result.theta.max_abs_diff(&init), 0.0);
    }

    #[test]
    fn meta_loss_drops_on_a_fixed_task() {
        let net = small_net();
        let sampler = TaskSampler::new(&net, 1, 3).unwrap();
        let cfg = MamlConfig { meta_iters: 50, meta_batch: 1, hidden: 8, ..Default::default() };
        let result = meta_train(&sampler, &cfg).unwrap();
        let first = result.batch_losses[0];
        let last = *result.batch_losses.last().unwrap();
        assert!(last < first, "loss went {first} -> {last}");
    }

    #[test]
    fn duplicated_task_matches_doubled_outer_rate() {
        // The outer update sums task gradients, so two copies of a task at
        // rate beta walk the same trajectory as one copy at 2 * beta.
        let net = small_net();
        let one = TaskSampler::new(&net, 1, 5).unwrap();
        let cfg_two = MamlConfig { meta_iters: 6, meta_batch: 2, hidden: 8, beta: 0.001, ..Default::default() };
        let cfg_double = MamlConfig { meta_iters: 6, meta_batch: 1, hidden: 8, beta: 0.002, ..Default::default() };
        let a = meta_train(&one, &cfg_two).unwrap();
        let b = meta_train(&one, &cfg_double).unwrap();
        assert!(a.theta.max_abs_diff(&b.theta) < 1e-12);
    }
}
