//! Goal-conditioned multi-modal trajectory forecasting with explicit
//! reference-polyline conditioning, plus the tooling around it.

pub mod counterfactual;
pub mod diff;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod lane_graph;
pub mod model;
pub mod scalar;
pub mod scenario;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Point2 = geometry::Point<f64>;
pub type Polyline2 = geometry::Polyline<f64>;
pub type AffineFrame = geometry::Frame<f64>;
pub type Tensor64 = diff::Tensor<f64>;
pub type Tape64<'a> = diff::Tape<'a, f64>;
pub type ParameterStore64 = diff::ParameterStore<f64>;
