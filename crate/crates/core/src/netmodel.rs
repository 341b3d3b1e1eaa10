//! Case ingestion, validation and topology manipulation for radial
//! distribution networks.
//!
//! A case file is a single JSON document with top-level keys `base_kv`,
//! `base_mva`, `slack`, `buses[]`, `branches[]`, `ties[]`, `ders[]` and
//! `critical[]`. Branch and tie impedances are per unit on the case base;
//! loads and DER capacities are kW / kVAr.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::F;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("cannot read case file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("case file does not parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid case: {0}")]
    Validation(String),
    #[error("invalid scenario: {0}")]
    Scenario(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub p_load: F,
    pub q_load: F,
    /// Feeder-zone id, 1-based.
    pub feeder: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchStatus {
    Open,
    Closed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Branch {
    pub id: usize,
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: F,
    pub x: F,
    pub status: BranchStatus,
    pub attackable: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Der {
    pub id: usize,
    pub bus: usize,
    pub p_min: F,
    pub p_max: F,
    pub cost_c2: F,
    pub cost_c1: F,
    pub cost_c0: F,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TieSwitch {
    pub id: usize,
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: F,
    pub x: F,
    pub normally_open: bool,
    /// Operating state; never part of a case file.
    #[serde(skip)]
    pub closed: bool,
}

/// A single-line outage: removal of one attackable, normally-closed branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attack {
    pub branch_id: usize,
    pub end_buses: (usize, usize),
}

impl Attack {
    pub fn on(branch: &Branch) -> Self {
        Self { branch_id: branch.id, end_buses: (branch.from_bus, branch.to_bus) }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CaseFile {
    base_kv: F,
    base_mva: F,
    slack: usize,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    ties: Vec<TieSwitch>,
    ders: Vec<Der>,
    critical: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub ders: Vec<Der>,
    pub critical_buses: BTreeSet<usize>,
    pub tie_switches: Vec<TieSwitch>,
    pub slack_bus: usize,
    pub base_voltage_kv: F,
    pub base_power_mva: F,
}

/// Load a case file from disk and validate it.
pub fn load_case(path: impl AsRef<Path>) -> Result<Network, NetError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| NetError::Io { path: path.display().to_string(), source })?;
    load_case_str(&text)
}

/// Parse and validate a case document held in memory.
pub fn load_case_str(text: &str) -> Result<Network, NetError> {
    let case: CaseFile = serde_json::from_str(text)?;
    let net = Network {
        buses: case.buses,
        branches: case.branches,
        ders: case.ders,
        critical_buses: case.critical.into_iter().collect(),
        tie_switches: case.ties,
        slack_bus: case.slack,
        base_voltage_kv: case.base_kv,
        base_power_mva: case.base_mva,
    };
    net.validate()?;
    Ok(net)
}

impl Network {
    /// Map from bus id to position in `buses`.
    pub fn bus_index(&self) -> BTreeMap<usize, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    pub fn total_load_kw(&self) -> F {
        self.buses.iter().map(|b| b.p_load).sum()
    }

    /// Closed edges of the operating topology: closed branches plus closed
    /// ties, as bus-id pairs.
    pub fn closed_edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .branches
            .iter()
            .filter(|b| b.status == BranchStatus::Closed)
            .map(|b| (b.from_bus, b.to_bus))
            .collect();
        edges.extend(self.tie_switches.iter().filter(|t| t.closed).map(|t| (t.from_bus, t.to_bus)));
        edges
    }

    /// All attacks available to the adversary: closed branches flagged
    /// attackable. Ties are never attackable.
    pub fn attackable_assets(&self) -> Vec<Attack> {
        self.branches
            .iter()
            .filter(|b| b.attackable && b.status == BranchStatus::Closed)
            .map(Attack::on)
            .collect()
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let fail = |msg: String| Err(NetError::Validation(msg));
        if self.buses.is_empty() {
            return fail("case has zero buses".into());
        }
        let mut ids = BTreeSet::new();
        for b in &self.buses {
            if !ids.insert(b.id) {
                return fail(format!("duplicate bus id {}", b.id));
            }
            if b.p_load < 0.0 {
                return fail(format!("bus {} has negative active load", b.id));
            }
            if b.feeder == 0 {
                return fail(format!("bus {} has feeder id 0; feeders are 1-based", b.id));
            }
        }
        if !ids.contains(&self.slack_bus) {
            return fail(format!("slack bus {} is not in the bus set", self.slack_bus));
        }
        let mut branch_ids = BTreeSet::new();
        for br in &self.branches {
            if !branch_ids.insert(br.id) {
                return fail(format!("duplicate branch id {}", br.id));
            }
            if br.from_bus == br.to_bus {
                return fail(format!("branch {} connects a bus to itself", br.id));
            }
            for end in [br.from_bus, br.to_bus] {
                if !ids.contains(&end) {
                    return fail(format!("branch {} references missing bus {}", br.id, end));
                }
            }
            if br.r < 0.0 || br.x < 0.0 || (br.r == 0.0 && br.x == 0.0) {
                return fail(format!("branch {} has invalid impedance", br.id));
            }
        }
        let mut tie_ids = BTreeSet::new();
        for t in &self.tie_switches {
            if !tie_ids.insert(t.id) || branch_ids.contains(&t.id) {
                return fail(format!("tie {} id collides with another element", t.id));
            }
            if t.from_bus == t.to_bus {
                return fail(format!("tie {} connects a bus to itself", t.id));
            }
            for end in [t.from_bus, t.to_bus] {
                if !ids.contains(&end) {
                    return fail(format!("tie {} references missing bus {}", t.id, end));
                }
            }
            if t.r < 0.0 || t.x < 0.0 || (t.r == 0.0 && t.x == 0.0) {
                return fail(format!("tie {} has invalid impedance", t.id));
            }
            if !t.normally_open {
                return fail(format!("tie {} must be normally open", t.id));
            }
        }
        let mut der_ids = BTreeSet::new();
        for d in &self.ders {
            if !der_ids.insert(d.id) {
                return fail(format!("duplicate DER id {}", d.id));
            }
            if !ids.contains(&d.bus) {
                return fail(format!("DER {} references missing bus {}", d.id, d.bus));
            }
            if !(0.0 <= d.p_min && d.p_min <= d.p_max) {
                return fail(format!("DER {} has inverted capacity bounds", d.id));
            }
            if d.cost_c2 < 0.0 {
                return fail(format!("DER {} has negative quadratic cost", d.id));
            }
        }
        for c in &self.critical_buses {
            if !ids.contains(c) {
                return fail(format!("critical bus {c} is not in the bus set"));
            }
        }
        // Radiality with every tie open: the closed-branch graph must be a
        // forest, i.e. |closed| = |buses| - #components.
        let closed: Vec<(usize, usize)> = self
            .branches
            .iter()
            .filter(|b| b.status == BranchStatus::Closed)
            .map(|b| (b.from_bus, b.to_bus))
            .collect();
        let comps = count_components(&ids, &closed);
        if closed.len() != self.buses.len() - comps {
            return fail(format!(
                "closed branches are not radial: {} edges, {} buses, {} components",
                closed.len(),
                self.buses.len(),
                comps
            ));
        }
        Ok(())
    }

    /// Apply an optional attack and a tie-switch vector, returning a modified
    /// copy. `sigma[s]` closes tie `s`; the input network is untouched.
    pub fn apply_scenario(&self, attack: Option<&Attack>, sigma: &[bool]) -> Result<Network, NetError> {
        if sigma.len() != self.tie_switches.len() {
            return Err(NetError::Scenario(format!(
                "sigma has {} entries but the network has {} tie switches",
                sigma.len(),
                self.tie_switches.len()
            )));
        }
        let mut net = self.clone();
        if let Some(attack) = attack {
            if net.tie_switches.iter().any(|t| t.id == attack.branch_id) {
                return Err(NetError::Scenario(format!(
                    "attack references tie switch {}, which is not attackable",
                    attack.branch_id
                )));
            }
            let branch = net
                .branches
                .iter_mut()
                .find(|b| b.id == attack.branch_id)
                .ok_or_else(|| {
                    NetError::Scenario(format!("attack references unknown branch {}", attack.branch_id))
                })?;
            if branch.status == BranchStatus::Open {
                return Err(NetError::Scenario(format!(
                    "attack references branch {}, which is already open",
                    attack.branch_id
                )));
            }
            if !branch.attackable {
                return Err(NetError::Scenario(format!(
                    "attack references branch {}, which is not attackable",
                    attack.branch_id
                )));
            }
            let ends = (branch.from_bus, branch.to_bus);
            let rev = (branch.to_bus, branch.from_bus);
            if attack.end_buses != ends && attack.end_buses != rev {
                return Err(NetError::Scenario(format!(
                    "attack end buses {:?} do not match branch {}",
                    attack.end_buses, attack.branch_id
                )));
            }
            branch.status = BranchStatus::Open;
        }
        for (tie, &close) in net.tie_switches.iter_mut().zip(sigma) {
            tie.closed = close;
        }
        Ok(net)
    }

    /// Buses connected to the slack bus over the operating topology.
    pub fn energized_buses(&self) -> BTreeSet<usize> {
        let mut adj: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (u, v) in self.closed_edges() {
            adj.entry(u).or_default().push(v);
            adj.entry(v).or_default().push(u);
        }
        let mut seen = BTreeSet::new();
        let mut stack = vec![self.slack_bus];
        seen.insert(self.slack_bus);
        while let Some(u) = stack.pop() {
            if let Some(next) = adj.get(&u) {
                for &v in next {
                    if seen.insert(v) {
                        stack.push(v);
                    }
                }
            }
        }
        seen
    }
}

fn count_components(ids: &BTreeSet<usize>, edges: &[(usize, usize)]) -> usize {
    let index: BTreeMap<usize, usize> = ids.iter().copied().enumerate().map(|(i, id)| (id, i)).collect();
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for &(u, v) in edges {
        let (ru, rv) = (find(&mut parent, index[&u]), find(&mut parent, index[&v]));
        if ru != rv {
            parent[ru] = rv;
        }
    }
    (0..ids.len()).filter(|&i| find(&mut parent, i) == i).count()
}
