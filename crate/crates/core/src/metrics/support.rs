//! Diagonal metrics driven by a positive scalar function `h`: small near the
//! data (support) or large near penalized regions (cost).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cluster::{kmeans, nnls, KMEANS_ITERS, KMEANS_SEED};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::geometry::MetricField;

pub const NNLS_ITERS: usize = 500;
pub const WEIGHT_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SupportFunction {
    /// `h(x) = sum_k w_k exp(-lambda_k |x - c_k|^2 / 2)`.
    PositiveRbf {
        centers: Vec<Vec<f64>>,
        lambdas: Vec<f64>,
        weights: Vec<f64>,
    },
    /// Mixture of Gaussians sharing one diagonal covariance, without the
    /// normalizing constant.
    UnnormalizedGmm {
        centers: Vec<Vec<f64>>,
        variances: Vec<f64>,
        weights: Vec<f64>,
    },
}

impl SupportFunction {
    pub fn rbf(centers: Vec<DVector<f64>>, lambdas: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let f = SupportFunction::PositiveRbf {
            centers: centers.iter().map(|c| c.iter().copied().collect()).collect(),
            lambdas,
            weights,
        };
        f.validate()?;
        Ok(f)
    }

    /// Cost function `sum_k y_k exp(-|x - c_k|^2 / (2 sigma^2))`.
    pub fn cost_rbf(centers: Vec<DVector<f64>>, heights: Vec<f64>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::config("cost bandwidth sigma must be positive"));
        }
        let lambdas = vec![1.0 / (sigma * sigma); centers.len()];
        SupportFunction::rbf(centers, lambdas, heights)
    }

    pub fn gmm(centers: Vec<DVector<f64>>, variances: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let f = SupportFunction::UnnormalizedGmm {
            centers: centers.iter().map(|c| c.iter().copied().collect()).collect(),
            variances,
            weights,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let (centers, weights) = match self {
            SupportFunction::PositiveRbf {
                centers,
                lambdas,
                weights,
            } => {
                if lambdas.len() != centers.len() || lambdas.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
                    return Err(Error::config("rbf bandwidths must be positive, one per center"));
                }
                if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
                    return Err(Error::config("rbf weights must be positive"));
                }
                (centers, weights)
            }
            SupportFunction::UnnormalizedGmm {
                centers,
                variances,
                weights,
            } => {
                let dim = centers.first().map_or(0, Vec::len);
                if variances.len() != dim || variances.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return Err(Error::config("gmm variances must be positive, one per coordinate"));
                }
                if weights.iter().any(|w| !(*w >= 0.0)) {
                    return Err(Error::config("gmm mixture weights must be nonnegative"));
                }
                if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return Err(Error::config("gmm mixture weights must sum to one"));
                }
                (centers, weights)
            }
        };
        if centers.is_empty() {
            return Err(Error::config("support function needs at least one center"));
        }
        if weights.len() != centers.len() {
            return Err(Error::config("one weight per center is required"));
        }
        let dim = centers[0].len();
        if dim == 0 || centers.iter().any(|c| c.len() != dim) {
            return Err(Error::config("centers must share a positive dimension"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            SupportFunction::PositiveRbf { centers, .. } | SupportFunction::UnnormalizedGmm { centers, .. } => {
                centers[0].len()
            }
        }
    }

    pub fn num_centers(&self) -> usize {
        match self {
            SupportFunction::PositiveRbf { centers, .. } | SupportFunction::UnnormalizedGmm { centers, .. } => {
                centers.len()
            }
        }
    }

    pub fn lambdas(&self) -> Option<&[f64]> {
        match self {
            SupportFunction::PositiveRbf { lambdas, .. } => Some(lambdas),
            _ => None,
        }
    }

    /// Per-center kernel values and gradient scales: `phi_k(x)` and the
    /// vector `s_k` with `d phi_k / dx = -phi_k * s_k`.
    fn kernels(&self, x: &DVector<f64>) -> Vec<(f64, f64, DVector<f64>)> {
        match self {
            SupportFunction::PositiveRbf {
                centers,
                lambdas,
                weights,
            } => centers
                .iter()
                .zip(lambdas)
                .zip(weights)
                .map(|((c, l), w)| {
                    let diff = x - DVector::from_column_slice(c);
                    let phi = (-0.5 * l * diff.norm_squared()).exp();
                    (*w, phi, diff * *l)
                })
                .collect(),
            SupportFunction::UnnormalizedGmm {
                centers,
                variances,
                weights,
            } => centers
                .iter()
                .zip(weights)
                .map(|(c, w)| {
                    let diff = DVector::from_fn(x.len(), |i, _| (x[i] - c[i]) / variances[i]);
                    let q: f64 = (0..x.len()).map(|i| (x[i] - c[i]) * diff[i]).sum();
                    (*w, (-0.5 * q).exp(), diff)
                })
                .collect(),
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.kernels(x).iter().map(|(w, phi, _)| w * phi).sum()
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        for (w, phi, s) in self.kernels(x) {
            g -= s * (w * phi);
        }
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupportMode {
    /// `(alpha h + eps)^-1 I`: cheap near the data.
    Support,
    /// `(alpha h + eps) I`: expensive where the cost is high.
    Cost,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportMetricParams {
    pub alpha: f64,
    pub epsilon: f64,
    pub mode: SupportMode,
}

impl Default for SupportMetricParams {
    fn default() -> Self {
        SupportMetricParams {
            alpha: 1e3,
            epsilon: 1e-2,
            mode: SupportMode::Support,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportMetric {
    pub h: SupportFunction,
    pub params: SupportMetricParams,
}

impl SupportMetric {
    pub fn new(h: SupportFunction, params: SupportMetricParams) -> Result<Self> {
        h.validate()?;
        if !(params.alpha > 0.0) || !(params.epsilon > 0.0) {
            return Err(Error::config("alpha and epsilon must be positive"));
        }
        Ok(SupportMetric { h, params })
    }

    /// The common diagonal entry at `x`. In support mode `h` is capped at 1,
    /// which keeps the entries inside `[1/(alpha+eps), 1/eps]` even where a
    /// fitted RBF overshoots.
    pub fn scale(&self, x: &DVector<f64>) -> f64 {
        let h = self.h.value(x);
        match self.params.mode {
            SupportMode::Support => 1.0 / (self.params.alpha * h.min(1.0) + self.params.epsilon),
            SupportMode::Cost => self.params.alpha * h + self.params.epsilon,
        }
    }

    fn scale_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let a = self.params.alpha;
        match self.params.mode {
            SupportMode::Support => {
                let h = self.h.value(x);
                if h >= 1.0 {
                    return DVector::zeros(x.len());
                }
                let s = a * h + self.params.epsilon;
                self.h.gradient(x) * (-a / (s * s))
            }
            SupportMode::Cost => self.h.gradient(x) * a,
        }
    }
}

/// `eval_support_metric` as a free function.
pub fn eval_support_metric(h: &SupportFunction, params: &SupportMetricParams, x: &DVector<f64>) -> DMatrix<f64> {
    let m = SupportMetric {
        h: h.clone(),
        params: *params,
    };
    DMatrix::identity(x.len(), x.len()) * m.scale(x)
}

impl MetricField for SupportMetric {
    fn dim(&self) -> usize {
        self.h.dim()
    }
    fn eval_raw(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(DMatrix::identity(x.len(), x.len()) * self.scale(x))
    }
    fn derivative_raw(&self, x: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        let d = x.len();
        let g = self.scale_gradient(x);
        let mut out = DMatrix::zeros(d * d, d);
        for l in 0..d {
            for i in 0..d {
                out[(i * d + i, l)] = g[l];
            }
        }
        Some(Ok(out))
    }
    fn directional_derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        let d = x.len();
        Some(Ok(DMatrix::identity(d, d) * self.scale_gradient(x).dot(u)))
    }
    fn quad_form(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        let s = self.scale(x);
        if !s.is_finite() {
            return Err(Error::numerical("support metric is not finite"));
        }
        Ok(s * (1.0 + crate::linalg::SPD_JITTER) * v.norm_squared())
    }
    fn pull_back(&self, x: &DVector<f64>, jac: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let s = self.scale(x);
        if !s.is_finite() {
            return Err(Error::numerical("support metric is not finite"));
        }
        Ok(jac.transpose() * jac * (s * (1.0 + crate::linalg::SPD_JITTER)))
    }
}

/// Positive RBF fitted to take the value 1 on the data.
///
/// Centers come from k-means, bandwidths from the mean distance of each
/// cluster to its center scaled by `kappa`, weights from nonnegative least
/// squares and then floored at `1e-8`.
pub fn fit_rbf_support(data: &Dataset, k: usize, kappa: f64) -> Result<SupportFunction> {
    fit_rbf_support_points(&data.point_vec(), k, kappa)
}

pub fn fit_rbf_support_points(points: &[DVector<f64>], k: usize, kappa: f64) -> Result<SupportFunction> {
    if !(kappa > 0.0) {
        return Err(Error::config("kappa must be positive"));
    }
    if k > points.len() {
        return Err(Error::config(format!("K = {k} exceeds the {} data points", points.len())));
    }
    let km = kmeans(points, k, KMEANS_SEED, KMEANS_ITERS)?;
    let lambdas = rbf_bandwidths(points, &km.centers, &km.assignment, kappa);
    let n = points.len();
    let phi = DMatrix::from_fn(n, k, |i, j| {
        (-0.5 * lambdas[j] * (&points[i] - &km.centers[j]).norm_squared()).exp()
    });
    let w = nnls(&phi, &DVector::from_element(n, 1.0), NNLS_ITERS);
    let weights = w.iter().map(|v| v.max(WEIGHT_FLOOR)).collect();
    SupportFunction::rbf(km.centers, lambdas, weights)
}

/// `lambda_k = 1/2 (kappa * mean_{x in C_k} |x - c_k|)^-2`.
///
/// A cluster whose points all sit on the center borrows the smallest
/// positive spread of the other clusters (or 1 if there is none).
pub fn rbf_bandwidths(points: &[DVector<f64>], centers: &[DVector<f64>], assignment: &[usize], kappa: f64) -> Vec<f64> {
    let k = centers.len();
    let mut sum = vec![0.0; k];
    let mut count = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignment) {
        sum[a] += (p - &centers[a]).norm();
        count[a] += 1;
    }
    let spreads: Vec<f64> = (0..k)
        .map(|j| if count[j] > 0 { sum[j] / count[j] as f64 } else { 0.0 })
        .collect();
    let fallback = spreads
        .iter()
        .copied()
        .filter(|s| *s > 0.0)
        .fold(f64::INFINITY, f64::min);
    let fallback = if fallback.is_finite() { fallback } else { 1.0 };
    spreads
        .into_iter()
        .map(|s| {
            let s = if s > 0.0 { s } else { fallback };
            0.5 / (kappa * s).powi(2)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{metric_derivative, metric_derivative_with, DerivativeMode};
    use proptest::prelude::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn single(center: &[f64]) -> SupportFunction {
        SupportFunction::rbf(vec![v(center)], vec![2.0], vec![1.0]).unwrap()
    }

    #[test]
    fn kernel_at_center_is_one() {
        let p = SupportMetricParams::default();
        let m = eval_support_metric(&single(&[1.0, 2.0]), &p, &v(&[1.0, 2.0]));
        assert!((m[(0, 0)] - 1.0 / (p.alpha + p.epsilon)).abs() < 1e-15);
        assert_eq!(m[(0, 1)], 0.0);
    }

    #[test]
    fn far_field_limits() {
        let h = single(&[0.0, 0.0]);
        let far = v(&[100.0, 0.0]);
        let p = SupportMetricParams::default();
        assert!((eval_support_metric(&h, &p, &far)[(0, 0)] - 1.0 / p.epsilon).abs() < 1e-9);
        let c = SupportMetricParams {
            mode: SupportMode::Cost,
            ..p
        };
        assert!((eval_support_metric(&h, &c, &far)[(1, 1)] - p.epsilon).abs() < 1e-12);
    }

    #[test]
    fn cost_metric_at_center() {
        let h = SupportFunction::cost_rbf(vec![v(&[0.5, 0.5])], vec![100.0], 0.2).unwrap();
        let p = SupportMetricParams {
            mode: SupportMode::Cost,
            ..SupportMetricParams::default()
        };
        let m = eval_support_metric(&h, &p, &v(&[0.5, 0.5]));
        assert!((m[(0, 0)] - (p.alpha * 100.0 + p.epsilon)).abs() < 1e-9);
    }

    #[test]
    fn gmm_weights_must_sum_to_one() {
        assert!(SupportFunction::gmm(vec![v(&[0.0])], vec![1.0], vec![0.5]).is_err());
        let g = SupportFunction::gmm(vec![v(&[0.0]), v(&[2.0])], vec![0.25], vec![0.5, 0.5]).unwrap();
        let x = 0.3;
        let expect = 0.5 * (-0.5 * x * x / 0.25f64).exp() + 0.5 * (-0.5 * (x - 2.0) * (x - 2.0) / 0.25f64).exp();
        assert!((g.value(&v(&[x])) - expect).abs() < 1e-15);
    }

    #[test]
    fn one_cluster_unit_spread_gives_half() {
        let pts = vec![v(&[1.0, 0.0]), v(&[-1.0, 0.0]), v(&[0.0, 1.0]), v(&[0.0, -1.0])];
        let h = fit_rbf_support_points(&pts, 1, 1.0).unwrap();
        assert!((h.lambdas().unwrap()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn smaller_kappa_means_larger_bandwidth_parameter() {
        let pts: Vec<_> = (0..60).map(|i| v(&[(i as f64 * 0.37).sin() * 3.0, (i as f64 * 0.91).cos()])).collect();
        let a = fit_rbf_support_points(&pts, 5, 1.0).unwrap();
        let b = fit_rbf_support_points(&pts, 5, 0.33).unwrap();
        for (la, lb) in a.lambdas().unwrap().iter().zip(b.lambdas().unwrap()) {
            assert!(lb > la);
        }
    }

    #[test]
    fn too_many_centers_is_config_error() {
        let pts = vec![v(&[0.0]), v(&[1.0])];
        assert!(fit_rbf_support_points(&pts, 3, 1.0).unwrap_err().is_config());
    }

    #[test]
    fn analytic_derivative_matches_finite_differences() {
        let h = SupportFunction::rbf(vec![v(&[0.0, 0.0]), v(&[1.0, 0.5])], vec![1.5, 3.0], vec![0.7, 0.4]).unwrap();
        for mode in [SupportMode::Support, SupportMode::Cost] {
            let m = SupportMetric::new(
                h.clone(),
                SupportMetricParams {
                    alpha: 3.0,
                    epsilon: 0.5,
                    mode,
                },
            )
            .unwrap();
            let x = v(&[0.3, -0.2]);
            let a = metric_derivative(&m, &x).unwrap();
            let f = metric_derivative_with(&m, &x, DerivativeMode::CentralDifference { step: 1e-5 }).unwrap();
            assert!((a - f).amax() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn support_entries_are_bounded(x in prop::collection::vec(-5.0f64..5.0, 2), w in 0.01f64..1.0) {
            let h = SupportFunction::rbf(vec![v(&[0.0, 0.0]), v(&[1.0, 1.0])], vec![1.0, 4.0], vec![w, 1.5 - w]).unwrap();
            let p = SupportMetricParams::default();
            let m = SupportMetric::new(h, p).unwrap();
            let s = m.scale(&v(&x));
            prop_assert!(s >= 1.0 / (p.alpha + p.epsilon) && s <= 1.0 / p.epsilon);
        }
    }
}
