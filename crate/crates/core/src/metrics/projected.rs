//! Metrics learned on a linear projection of the ambient space.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{directional_fd, MetricField};

/// Above this ambient dimension the full `D x D` matrix is never formed.
pub const DENSE_LIMIT: usize = 256;

/// `P^T M'(P (x - c)) P` for a `d' x D` projection `P`.
#[derive(Clone)]
pub struct ProjectedMetric {
    pub projection: DMatrix<f64>,
    pub center: DVector<f64>,
    pub inner: Arc<dyn MetricField>,
}

impl std::fmt::Debug for ProjectedMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProjectedMetric")
            .field("projection", &(self.projection.nrows(), self.projection.ncols()))
            .finish()
    }
}

impl ProjectedMetric {
    pub fn new(projection: DMatrix<f64>, center: DVector<f64>, inner: Arc<dyn MetricField>) -> Result<Self> {
        if projection.ncols() != center.len() {
            return Err(Error::config("projection columns must match the center dimension"));
        }
        if projection.nrows() != inner.dim() {
            return Err(Error::config("projection rows must match the inner metric dimension"));
        }
        Ok(ProjectedMetric {
            projection,
            center,
            inner,
        })
    }

    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.projection * (x - &self.center)
    }

    fn check(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() == self.center.len() {
            Ok(())
        } else {
            Err(Error::config(format!(
                "dimension mismatch: projected metric has dimension {}, point has {}",
                self.center.len(),
                x.len()
            )))
        }
    }
}

impl MetricField for ProjectedMetric {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn eval_raw(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        if self.dim() > DENSE_LIMIT {
            return Err(Error::config(format!(
                "projected metric in dimension {} is only available as a quadratic form or pull-back",
                self.dim()
            )));
        }
        self.check(x)?;
        let inner = self.inner.eval(&self.project(x))?;
        Ok(self.projection.transpose() * inner * &self.projection)
    }
    fn directional_derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        if self.dim() > DENSE_LIMIT {
            return Some(Err(Error::config("dense derivative of a high-dimensional projected metric")));
        }
        let xp = self.project(x);
        let up = &self.projection * u;
        let d = match self.inner.directional_derivative(&xp, &up) {
            Some(r) => r,
            None => directional_fd(self.inner.as_ref(), &xp, &up),
        };
        Some(d.map(|d| self.projection.transpose() * d * &self.projection))
    }
    fn quad_form(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        self.check(x)?;
        self.inner.quad_form(&self.project(x), &(&self.projection * v))
    }
    fn pull_back(&self, x: &DVector<f64>, jac: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(x)?;
        self.inner.pull_back(&self.project(x), &(&self.projection * jac))
    }
    fn pull_back_derivative(
        &self,
        x: &DVector<f64>,
        jac: &DMatrix<f64>,
        djac: &[DMatrix<f64>],
        x_dot: &DMatrix<f64>,
    ) -> Result<Vec<DMatrix<f64>>> {
        self.check(x)?;
        let pd: Vec<DMatrix<f64>> = djac.iter().map(|d| &self.projection * d).collect();
        self.inner.pull_back_derivative(
            &self.project(x),
            &(&self.projection * jac),
            &pd,
            &(&self.projection * x_dot),
        )
    }
}

pub fn eval_projected_metric(pm: &ProjectedMetric, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    pm.eval(x)
}
