//! Exact Gaussian Whittle–Matérn random fields on compact metric graphs.
//!
//! The Markov cases `alpha = 1` and `alpha = 2` are handled through sparse
//! vertex precisions (plus Kirchhoff constraints for `alpha = 2`), which gives
//! exact simulation, likelihoods and kriging at arbitrary points on the
//! network.

pub mod error;
pub mod graph;
pub mod kernels;
pub mod sparse;
pub mod constrained;
pub mod precision;
pub mod simulation;
pub mod kl;
pub mod inference;
pub mod laplacian;

pub use error::{Error, Result};
pub use graph::{MetricGraph, PointOnEdge};
pub use kernels::ModelParams;
