//! Inverse of a locally weighted diagonal covariance.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::geometry::MetricField;

/// `M_dd(x) = (sum_n w_n(x) (x_nd - x_d)^2 + eps)^-1` with
/// `w_n(x) = exp(-|x_n - x|^2 / (2 sigma^2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDiagonalMetric {
    pub points: Vec<DVector<f64>>,
    pub sigma: f64,
    pub epsilon: f64,
}

impl LocalDiagonalMetric {
    pub fn new(points: Vec<DVector<f64>>, sigma: f64, epsilon: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::config("local diagonal metric needs data"));
        }
        let d = points[0].len();
        if points.iter().any(|p| p.len() != d) {
            return Err(Error::config("data points must share a dimension"));
        }
        if !(sigma > 0.0) || !(epsilon > 0.0) {
            return Err(Error::config("sigma and epsilon must be positive"));
        }
        Ok(LocalDiagonalMetric {
            points,
            sigma,
            epsilon,
        })
    }

    pub fn from_dataset(data: &Dataset, sigma: f64, epsilon: f64) -> Result<Self> {
        Self::new(data.point_vec(), sigma, epsilon)
    }

    /// Weighted squared deviations per coordinate.
    fn spread(&self, x: &DVector<f64>) -> DVector<f64> {
        let s2 = 2.0 * self.sigma * self.sigma;
        let mut s = DVector::zeros(x.len());
        for p in &self.points {
            let diff = p - x;
            let w = if self.sigma.is_infinite() {
                1.0
            } else {
                (-diff.norm_squared() / s2).exp()
            };
            s += diff.map(|v| v * v) * w;
        }
        s
    }

    pub fn diagonal(&self, x: &DVector<f64>) -> DVector<f64> {
        self.spread(x).map(|s| 1.0 / (s + self.epsilon))
    }
}

pub fn eval_local_diag_cov_metric(data: &Dataset, sigma: f64, eps: f64, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    let m = LocalDiagonalMetric::from_dataset(data, sigma, eps)?;
    Ok(DMatrix::from_diagonal(&m.diagonal(x)))
}

impl MetricField for LocalDiagonalMetric {
    fn dim(&self) -> usize {
        self.points[0].len()
    }
    fn eval_raw(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_diagonal(&self.diagonal(x)))
    }
    fn derivative_raw(&self, x: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        let d = x.len();
        let inv_s2 = 1.0 / (self.sigma * self.sigma);
        // dS_j/dx_l
        let mut ds = DMatrix::<f64>::zeros(d, d);
        for p in &self.points {
            let diff = p - x;
            let w = if self.sigma.is_infinite() {
                1.0
            } else {
                (-0.5 * diff.norm_squared() * inv_s2).exp()
            };
            for j in 0..d {
                for l in 0..d {
                    let mut g = w * diff[l] * inv_s2 * diff[j] * diff[j];
                    if self.sigma.is_infinite() {
                        g = 0.0;
                    }
                    if j == l {
                        g -= 2.0 * w * diff[j];
                    }
                    ds[(j, l)] += g;
                }
            }
        }
        let m = self.diagonal(x);
        let mut out = DMatrix::zeros(d * d, d);
        for j in 0..d {
            for l in 0..d {
                out[(j * d + j, l)] = -m[j] * m[j] * ds[(j, l)];
            }
        }
        Some(Ok(out))
    }
}
