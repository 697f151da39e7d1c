//! Riemannian geometry for the latent spaces of generative models.
//!
//! The latent space `Z = R^d` of a generator `g: Z -> X` inherits the
//! pull-back `J_g(z)^T M_X(g(z)) J_g(z)` of an ambient metric `M_X`. This crate
//! provides the ambient metrics (data support, cost, local LDA, local
//! diagonal covariance, linear projections and positive combinations), smooth
//! generators with exact Jacobians, geodesic solvers (energy descent over
//! natural cubic splines, RK4 shooting for the exponential map), a graph
//! heuristic for expensive generators, and samplers for the metric-aware
//! latent density.
//!
//! Everything works on `nalgebra` dynamic matrices with `f64` entries.

pub mod cluster;
pub mod data;
pub mod error;
pub mod generator;
pub mod geometry;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod sampling;
pub mod train;

pub use error::{Error, Result};
pub use geometry::{
    curve_energy, curve_length, exp_map, geodesic_ode_rhs, log_map, metric_derivative,
    solve_geodesic_bvp, BvpOptions, ConstantMetric, Curve, ExpOptions, FnMetric, GeodesicSolution,
    IdentityMetric, LogMap, LogOptions, MetricField,
    TangentVector,
};

pub use nalgebra::{DMatrix, DVector};
