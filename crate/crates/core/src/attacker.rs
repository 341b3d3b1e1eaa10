//! Attacker model: hypergraph construction, neural scoring of buses,
//! outage-impact labels and meta-training of the scoring parameters.

pub mod hgnn;
pub mod hypergraph;
pub mod labels;
pub mod maml;

pub use hgnn::{hgnn_forward, loss_and_gradient, mse_loss, HgnnParams, ShapeError};
pub use hypergraph::{build_hypergraph, Hypergraph};
pub use labels::impact_labels;
pub use maml::{
    inner_adapt, meta_test_loss, meta_train, node_features, MamlConfig, MamlError, MetaResult,
    Task, TaskSampler,
};
