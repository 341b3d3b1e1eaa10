//! Attacker-defender resilience toolkit for radial distribution networks.
//!
//! The crate is organized around the stages of the planning pipeline:
//!
//! - [`netmodel`]: case ingestion, validation, topology manipulation;
//! - [`powerflow`]: Newton-Raphson AC power flow and defender objectives;
//! - [`attacker`]: hypergraph scoring model with meta-trained parameters;
//! - [`vuln`]: asset risks and the temperature-softmax attack distribution;
//! - [`defender`]: NSGA-II search over dispatch and tie-switch vectors;
//! - [`admm`]: consensus-based feasibility projection of defense candidates;
//! - [`game`]: Stackelberg leader selection and follower best response;
//! - [`montecarlo`]: trial aggregation, robust ranking and rule extraction.
//!
//! Numeric kernels are generic over [`Scalar`] (`f32` or `f64`); the pipeline
//! itself runs on the concrete alias [`F`].

pub mod admm;
pub mod attacker;
pub mod defender;
pub mod game;
pub mod linalg;
pub mod montecarlo;
pub mod netmodel;
pub mod powerflow;
pub mod scalar;
pub mod vuln;

pub use scalar::Scalar;

/// Scalar type used by the concrete pipeline. All bundled case data, solver
/// tolerances and serialized artifacts assume this precision.
pub type F = f64;
