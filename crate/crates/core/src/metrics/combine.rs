//! Positive linear combinations of metric fields.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{directional_fd, MetricField};

/// `M(x) = sum_i w_i M_i(x)` with `w_i > 0`.
#[derive(Clone)]
pub struct CombinedMetric {
    fields: Vec<Arc<dyn MetricField>>,
    weights: Vec<f64>,
}

impl std::fmt::Debug for CombinedMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CombinedMetric")
            .field("components", &self.fields.len())
            .field("weights", &self.weights)
            .finish()
    }
}

pub fn combine_metrics(fields: Vec<Arc<dyn MetricField>>, weights: Vec<f64>) -> Result<CombinedMetric> {
    if fields.is_empty() || fields.len() != weights.len() {
        return Err(Error::config("need one positive weight per metric"));
    }
    if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(Error::config("combination weights must be positive"));
    }
    let d = fields[0].dim();
    if let Some(f) = fields.iter().find(|f| f.dim() != d) {
        return Err(Error::config(format!(
            "dimension mismatch in combination: {} vs {d}",
            f.dim()
        )));
    }
    Ok(CombinedMetric { fields, weights })
}

impl CombinedMetric {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[Arc<dyn MetricField>] {
        &self.fields
    }
}

impl MetricField for CombinedMetric {
    fn dim(&self) -> usize {
        self.fields[0].dim()
    }
    fn eval_raw(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        for (f, w) in self.fields.iter().zip(&self.weights) {
            m += f.eval(x)? * *w;
        }
        Ok(m)
    }
    fn directional_derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        let d = self.dim();
        let mut out = DMatrix::zeros(d, d);
        for (f, w) in self.fields.iter().zip(&self.weights) {
            let dm = match f.directional_derivative(x, u) {
                Some(r) => r,
                None => directional_fd(f.as_ref(), x, u),
            };
            match dm {
                Ok(m) => out += m * *w,
                Err(e) => return Some(Err(e)),
            }
        }
        Some(Ok(out))
    }
    fn derivative_raw(&self, x: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        let d = self.dim();
        let mut out = DMatrix::zeros(d * d, d);
        for l in 0..d {
            let mut e = DVector::zeros(d);
            e[l] = 1.0;
            match self.directional_derivative(x, &e)? {
                Ok(m) => out.set_column(l, &DVector::from_column_slice(m.as_slice())),
                Err(err) => return Some(Err(err)),
            }
        }
        Some(Ok(out))
    }
    fn quad_form(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        let mut s = 0.0;
        for (f, w) in self.fields.iter().zip(&self.weights) {
            s += w * f.quad_form(x, v)?;
        }
        Ok(s)
    }
    fn pull_back(&self, x: &DVector<f64>, jac: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let k = jac.ncols();
        let mut m = DMatrix::zeros(k, k);
        for (f, w) in self.fields.iter().zip(&self.weights) {
            m += f.pull_back(x, jac)? * *w;
        }
        Ok(m)
    }
    fn pull_back_derivative(
        &self,
        x: &DVector<f64>,
        jac: &DMatrix<f64>,
        djac: &[DMatrix<f64>],
        x_dot: &DMatrix<f64>,
    ) -> Result<Vec<DMatrix<f64>>> {
        let k = jac.ncols();
        let mut out = vec![DMatrix::zeros(k, k); djac.len()];
        for (f, w) in self.fields.iter().zip(&self.weights) {
            for (o, part) in out.iter_mut().zip(f.pull_back_derivative(x, jac, djac, x_dot)?) {
                *o += part * *w;
            }
        }
        Ok(out)
    }
}
