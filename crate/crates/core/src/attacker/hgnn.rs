//! Neural scoring over the hypergraph: ReLU propagation layers, mean-pooled
//! hyperedge scores and per-bus aggregation, with exact reverse-mode
//! gradients of the training loss.
//!
//! Layer update: `X^{l+1} = relu(S X^l W^l)`. Each hyperedge score is the
//! mean of its incident final embeddings projected by `w_head`; per-bus
//! scores sum the incident hyperedge scores.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::hypergraph::Hypergraph;
use crate::linalg::Mat;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
#[error("shape mismatch: {0}")]
pub struct ShapeError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HgnnParams<T> {
    pub w_layers: Vec<Mat<T>>,
    pub w_head: Vec<T>,
}

impl<T: Scalar> HgnnParams<T> {
    /// Seeded uniform initialization. Scales are kept small so that scores
    /// start in the same range as the labels.
    pub fn init(feature_dim: usize, hidden: usize, layers: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |scale: f64| T::of(rng.gen_range(-scale..scale));
        let mut w_layers = Vec::with_capacity(layers);
        for l in 0..layers {
            let rows = if l == 0 { feature_dim } else { hidden };
            w_layers.push(Mat::from_fn(rows, hidden, |_, _| uniform(0.2)));
        }
        let w_head = (0..hidden).map(|_| uniform(0.05)).collect();
        Self { w_layers, w_head }
    }

    pub fn zeros(feature_dim: usize, hidden: usize, layers: usize) -> Self {
        let w_layers = (0..layers)
            .map(|l| Mat::zeros(if l == 0 { feature_dim } else { hidden }, hidden))
            .collect();
        Self { w_layers, w_head: vec![T::zero(); hidden] }
    }

    /// In-place `self += alpha * other`, used for gradient steps.
    pub fn axpy(&mut self, alpha: T, other: &Self) {
        for (w, g) in self.w_layers.iter_mut().zip(&other.w_layers) {
            let updated = w.add(&g.scale(alpha));
            *w = updated;
        }
        for (w, g) in self.w_head.iter_mut().zip(&other.w_head) {
            *w += alpha * *g;
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        let mut m = T::zero();
        for (a, b) in self.w_layers.iter().zip(&other.w_layers) {
            m = m.max(a.max_abs_diff(b));
        }
        for (a, b) in self.w_head.iter().zip(&other.w_head) {
            m = m.max((*a - *b).abs());
        }
        m
    }

    /// Flat view over all parameters, for finite-difference checks.
    pub fn param_count(&self) -> usize {
        self.w_layers.iter().map(|w| w.rows() * w.cols()).sum::<usize>() + self.w_head.len()
    }

    pub fn get_flat(&self, mut i: usize) -> T {
        for w in &self.w_layers {
            let n = w.rows() * w.cols();
            if i < n {
                return w[(i / w.cols(), i % w.cols())];
            }
            i -= n;
        }
        self.w_head[i]
    }

    pub fn set_flat(&mut self, mut i: usize, v: T) {
        for w in &mut self.w_layers {
            let (rows, cols) = (w.rows(), w.cols());
            let n = rows * cols;
            if i < n {
                w[(i / cols, i % cols)] = v;
                return;
            }
            i -= n;
        }
        self.w_head[i] = v;
    }

    fn check_shapes(&self, hg: &Hypergraph<T>, x: &Mat<T>) -> Result<(), ShapeError> {
        if x.rows() != hg.n_vertices() {
            return Err(ShapeError(format!(
                "features have {} rows for {} vertices",
                x.rows(),
                hg.n_vertices()
            )));
        }
        let mut width = x.cols();
        for (l, w) in self.w_layers.iter().enumerate() {
            if w.rows() != width {
                return Err(ShapeError(format!(
                    "layer {l} expects {} inputs, got {width}",
                    w.rows()
                )));
            }
            width = w.cols();
        }
        if self.w_head.len() != width {
            return Err(ShapeError(format!(
                "head expects {} inputs, got {width}",
                self.w_head.len()
            )));
        }
        Ok(())
    }
}

struct Trace<T> {
    /// `X^0 .. X^L`.
    activations: Vec<Mat<T>>,
    /// Pre-activations `S X^l W^l` for each layer.
    preacts: Vec<Mat<T>>,
    /// Mean-pooled final embeddings per hyperedge.
    pooled: Mat<T>,
    /// Per-bus scores.
    scores: Vec<T>,
}

fn forward_trace<T: Scalar>(
    hg: &Hypergraph<T>,
    x: &Mat<T>,
    theta: &HgnnParams<T>,
) -> Result<Trace<T>, ShapeError> {
    theta.check_shapes(hg, x)?;
    let mut activations = vec![x.clone()];
    let mut preacts = Vec::with_capacity(theta.w_layers.len());
    for w in &theta.w_layers {
        let pre = hg.s_op.matmul(activations.last().unwrap()).matmul(w);
        activations.push(pre.map(|v| v.max(T::zero())));
        preacts.push(pre);
    }
    let last = activations.last().unwrap();
    let h = last.cols();
    let mut pooled = Mat::zeros(hg.n_edges(), h);
    for (e, verts) in hg.edges.iter().enumerate() {
        let inv = T::one() / T::of(verts.len() as f64);
        for &v in verts {
            for c in 0..h {
                pooled[(e, c)] += last[(v, c)] * inv;
            }
        }
    }
    let edge_scores: Vec<T> = (0..hg.n_edges())
        .map(|e| crate::linalg::dot(pooled.row(e), &theta.w_head))
        .collect();
    let mut scores = vec![T::zero(); hg.n_vertices()];
    for (e, verts) in hg.edges.iter().enumerate() {
        for &v in verts {
            scores[v] += edge_scores[e];
        }
    }
    Ok(Trace { activations, preacts, pooled, scores })
}

/// Per-bus vulnerability scores.
pub fn hgnn_forward<T: Scalar>(
    hg: &Hypergraph<T>,
    x: &Mat<T>,
    theta: &HgnnParams<T>,
) -> Result<Vec<T>, ShapeError> {
    Ok(forward_trace(hg, x, theta)?.scores)
}

/// Mean squared error of the scores against labels, restricted to `idx`.
pub fn mse_loss<T: Scalar>(scores: &[T], labels: &[T], idx: &[usize]) -> T {
    if idx.is_empty() {
        return T::zero();
    }
    let sum = idx
        .iter()
        .map(|&i| {
            let d = scores[i] - labels[i];
            d * d
        })
        .fold(T::zero(), |a, b| a + b);
    sum / T::of(idx.len() as f64)
}

/// Training loss and its exact gradient with respect to every parameter.
pub fn loss_and_gradient<T: Scalar>(
    hg: &Hypergraph<T>,
    x: &Mat<T>,
    theta: &HgnnParams<T>,
    labels: &[T],
    idx: &[usize],
) -> Result<(T, HgnnParams<T>), ShapeError> {
    let trace = forward_trace(hg, x, theta)?;
    let loss = mse_loss(&trace.scores, labels, idx);
    let mut grad = HgnnParams {
        w_layers: theta.w_layers.iter().map(|w| Mat::zeros(w.rows(), w.cols())).collect(),
        w_head: vec![T::zero(); theta.w_head.len()],
    };
    if idx.is_empty() {
        return Ok((loss, grad));
    }

    let n = hg.n_vertices();
    let h = theta.w_head.len();
    let scale = T::of(2.0) / T::of(idx.len() as f64);
    let mut d_scores = vec![T::zero(); n];
    for &i in idx {
        d_scores[i] = scale * (trace.scores[i] - labels[i]);
    }

    // scores = sum of incident edge scores; z_e = pooled_e . w_head.
    let mut d_edge = vec![T::zero(); hg.n_edges()];
    for (e, verts) in hg.edges.iter().enumerate() {
        for &v in verts {
            d_edge[e] += d_scores[v];
        }
    }
    for c in 0..h {
        let mut g = T::zero();
        for e in 0..hg.n_edges() {
            g += d_edge[e] * trace.pooled[(e, c)];
        }
        grad.w_head[c] = g;
    }
    let last = trace.activations.last().unwrap();
    let mut d_x = Mat::zeros(n, last.cols());
    for (e, verts) in hg.edges.iter().enumerate() {
        let inv = T::one() / T::of(verts.len() as f64);
        for &v in verts {
            for c in 0..h {
                d_x[(v, c)] += d_edge[e] * theta.w_head[c] * inv;
            }
        }
    }

    // Layers in reverse: pre = S X W, next = relu(pre).
    for l in (0..theta.w_layers.len()).rev() {
        let pre = &trace.preacts[l];
        let d_pre = Mat::from_fn(d_x.rows(), d_x.cols(), |i, j| {
            if pre[(i, j)] > T::zero() { d_x[(i, j)] } else { T::zero() }
        });
        let propagated = hg.s_op.matmul(&trace.activations[l]);
        grad.w_layers[l] = propagated.transpose().matmul(&d_pre);
        if l > 0 {
            // S is symmetric, so the pullback through S is another S product.
            d_x = hg.s_op.matmul(&d_pre).matmul(&theta.w_layers[l].transpose());
        }
    }
    Ok((loss, grad))
}
