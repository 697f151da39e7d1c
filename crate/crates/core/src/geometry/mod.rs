//! Curves, length and energy, the geodesic equation and its solvers.

mod bvp;
mod curve;
mod functional;
mod maps;
mod metric;
mod ode;

pub use bvp::{solve_geodesic_bvp, solve_geodesic_bvp_from, BvpOptions, GeodesicSolution};
pub use curve::Curve;
pub use functional::{curve_energy, curve_length, squared_speeds};
pub use maps::{exp_map, log_map, LogMap, LogOptions};
pub(crate) use metric::directional_fd;
pub use metric::{
    derivative_slice, metric_derivative, metric_derivative_with, ConstantMetric, DerivativeMode,
    FiniteDifferenceOnly, FnMetric, IdentityMetric, MetricField, TangentVector, FD_STEP,
};
pub use ode::{geodesic_ode_rhs, geodesic_trajectory, ExpOptions};
