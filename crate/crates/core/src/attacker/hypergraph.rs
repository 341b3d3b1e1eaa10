//! Hypergraph over the operating topology, with the normalized propagation
//! operator `S = Dv^{-1/2} H De^{-1} H^T Dv^{-1/2}`.

use std::collections::BTreeSet;

use crate::linalg::Mat;
use crate::netmodel::{BranchStatus, Network};
use crate::scalar::Scalar;
use crate::F;

#[derive(Debug, Clone)]
pub struct Hypergraph<T> {
    /// Binary incidence matrix, vertices x hyperedges.
    pub incidence: Mat<T>,
    /// Vertex lists per hyperedge (sorted, deduplicated).
    pub edges: Vec<Vec<usize>>,
    /// Vertex degrees (row sums of `incidence`).
    pub d_v: Vec<T>,
    /// Hyperedge degrees (column sums of `incidence`).
    pub d_e: Vec<T>,
    /// Dense propagation operator, vertices x vertices.
    pub s_op: Mat<T>,
}

impl<T: Scalar> Hypergraph<T> {
    /// Build from explicit hyperedges over `0..n_vertices`. Every vertex must
    /// appear in at least one hyperedge.
    pub fn from_edge_sets(n_vertices: usize, edges: Vec<Vec<usize>>) -> Self {
        let edges: Vec<Vec<usize>> = edges
            .into_iter()
            .map(|e| {
                let set: BTreeSet<usize> = e.into_iter().collect();
                set.into_iter().collect()
            })
            .collect();
        let mut incidence = Mat::zeros(n_vertices, edges.len());
        for (j, edge) in edges.iter().enumerate() {
            for &v in edge {
                assert!(v < n_vertices, "hyperedge vertex {v} out of range");
                incidence[(v, j)] = T::one();
            }
        }
        let d_v: Vec<T> = (0..n_vertices)
            .map(|i| incidence.row(i).iter().fold(T::zero(), |a, &b| a + b))
            .collect();
        let d_e: Vec<T> = edges.iter().map(|e| T::of(e.len() as f64)).collect();
        assert!(
            d_v.iter().all(|&d| d >= T::one()),
            "every vertex must appear in at least one hyperedge"
        );

        let mut s_op = Mat::zeros(n_vertices, n_vertices);
        for (j, edge) in edges.iter().enumerate() {
            let inv_de = T::one() / d_e[j];
            for &u in edge {
                for &v in edge {
                    let w = inv_de / (d_v[u] * d_v[v]).sqrt();
                    s_op[(u, v)] += w;
                }
            }
        }
        Self { incidence, edges, d_v, d_e, s_op }
    }

    pub fn n_vertices(&self) -> usize {
        self.incidence.rows()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }
}

/// Hypergraph of a network: one pair hyperedge per closed line (branches and
/// closed ties), plus one neighborhood group per bus covering the bus, its
/// closed-line neighbors and any DER buses attached there.
pub fn build_hypergraph(net: &Network) -> Hypergraph<F> {
    let index = net.bus_index();
    let n = net.buses.len();
    let mut adjacency: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    let mut edges: Vec<Vec<usize>> = Vec::new();

    let line = |u: usize, v: usize, edges: &mut Vec<Vec<usize>>, adj: &mut Vec<BTreeSet<usize>>| {
        let (a, b) = (index[&u], index[&v]);
        edges.push(vec![a.min(b), a.max(b)]);
        adj[a].insert(b);
        adj[b].insert(a);
    };
    for br in &net.branches {
        if br.status == BranchStatus::Closed {
            line(br.from_bus, br.to_bus, &mut edges, &mut adjacency);
        }
    }
    for tie in &net.tie_switches {
        if tie.closed {
            line(tie.from_bus, tie.to_bus, &mut edges, &mut adjacency);
        }
    }

    let der_positions: BTreeSet<usize> = net.ders.iter().map(|d| index[&d.bus]).collect();
    for b in 0..n {
        let mut group = adjacency[b].clone();
        group.insert(b);
        if der_positions.contains(&b) {
            group.insert(b);
        }
        edges.push(group.into_iter().collect());
    }

    Hypergraph::from_edge_sets(n, edges)
}
