//! Smooth generators, their Jacobians and the latent metrics they induce.

mod io;
mod model;
mod net;
mod pca;
mod pullback;
mod rbf;

pub use io::{load_model, save_model};
pub use model::{finite_diff_jacobian, BatchMap, FnBatchMap, Generator, LinearPart, MapTrace, ParaboloidMap, SmoothMap};
pub use net::{Activation, FeedforwardNet, ForwardTrace, Layer};
pub use pca::{fit_pca, fit_pca_points, PcaModel};
pub use pullback::{
    expected_pullback_metric, forward, jacobian_mean, jacobian_sigma, pullback_metric, sigma,
    stochastic_pullback_metric, stochastic_pullback_metric_frozen, ExpectedPullbackMetric,
    FiniteDiffPullbackMetric, PullbackMetric, StochasticPullbackMetric, IMMERSION_RATIO,
};
pub use rbf::{PositiveRbf, SigmaTrace, DEFAULT_ZETA, PRECISION_WEIGHT_FLOOR};
