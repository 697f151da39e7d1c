//! Ambient metrics: data support and cost, local diagonal covariance, local
//! LDA blends, positive combinations and linear projections.

mod combine;
mod lda;
mod local_diag;
mod projected;
mod spec;
mod support;

pub use combine::{combine_metrics, CombinedMetric};
pub use lda::{
    eval_convex_combination_metric, fit_local_lda, local_lda_step, LdaStep, LocalLdaFit,
    LocalLdaMetricSet, LocalLdaOptions, KERNEL_FLOOR,
};
pub use local_diag::{eval_local_diag_cov_metric, LocalDiagonalMetric};
pub use projected::{eval_projected_metric, ProjectedMetric, DENSE_LIMIT};
pub use spec::MetricSpec;
pub use support::{
    eval_support_metric, fit_rbf_support, fit_rbf_support_points, rbf_bandwidths, SupportFunction,
    SupportMetric, SupportMetricParams, SupportMode, NNLS_ITERS, WEIGHT_FLOOR,
};
