//! Latent metrics induced by a generator and an ambient metric.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::MetricField;
use crate::linalg::{regularize_spd, sym_eigenvalues};

use super::model::{finite_diff_jacobian, BatchMap, Generator, SmoothMap};

/// Smallest-to-largest eigenvalue ratio below which a pull-back is reported
/// as rank deficient.
pub const IMMERSION_RATIO: f64 = 1e-12;

fn check_ambient(map_out: usize, ambient: &dyn MetricField) -> Result<()> {
    if map_out == ambient.dim() {
        Ok(())
    } else {
        Err(Error::config(format!(
            "generator output dimension {map_out} does not match ambient metric dimension {}",
            ambient.dim()
        )))
    }
}

fn rank_deficient(m: &DMatrix<f64>) -> bool {
    let ev = sym_eigenvalues(m);
    let hi = ev.last().copied().unwrap_or(0.0);
    ev.first().copied().unwrap_or(0.0) < IMMERSION_RATIO * hi.abs()
}

fn stack(slices: Vec<DMatrix<f64>>, d: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(d * d, slices.len());
    for (l, s) in slices.iter().enumerate() {
        out.set_column(l, &DVector::from_column_slice(s.as_slice()));
    }
    out
}

/// `J(z)^T M_X(g(z)) J(z)`.
pub struct PullbackMetric<G> {
    pub map: G,
    pub ambient: Arc<dyn MetricField>,
    warned: AtomicBool,
}

impl<G: SmoothMap> PullbackMetric<G> {
    pub fn new(map: G, ambient: Arc<dyn MetricField>) -> Result<Self> {
        check_ambient(map.output_dim(), ambient.as_ref())?;
        Ok(PullbackMetric {
            map,
            ambient,
            warned: AtomicBool::new(false),
        })
    }
}

impl<G: SmoothMap> MetricField for PullbackMetric<G> {
    fn dim(&self) -> usize {
        self.map.input_dim()
    }

    fn eval_raw(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        let x = self.map.value(z)?;
        let j = self.map.jacobian(z)?;
        let m = self.ambient.pull_back(&x, &j)?;
        if !self.warned.load(Ordering::Relaxed) && rank_deficient(&m) && !self.warned.swap(true, Ordering::Relaxed) {
            log::warn!(
                "pull-back metric is rank deficient at {:?}; the generator is not an immersion there",
                z.as_slice()
            );
        }
        Ok(m)
    }

    fn derivative_raw(&self, z: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        Some((|| {
            let t = self.map.trace(z)?;
            let s = self
                .ambient
                .pull_back_derivative(&t.value, &t.jacobian, &t.hessian, &t.jacobian)?;
            Ok(stack(s, z.len()))
        })())
    }
}

/// `J_mu^T M_X(mu) J_mu + J_sigma^T M_X(mu) J_sigma`.
pub struct ExpectedPullbackMetric {
    pub generator: Arc<Generator>,
    pub ambient: Arc<dyn MetricField>,
}

impl ExpectedPullbackMetric {
    pub fn new(generator: Arc<Generator>, ambient: Arc<dyn MetricField>) -> Result<Self> {
        if !generator.has_precision() {
            return Err(Error::config(
                "the expected metric needs a precision network; use the deterministic pull-back metric instead",
            ));
        }
        check_ambient(generator.ambient_dim(), ambient.as_ref())?;
        Ok(ExpectedPullbackMetric { generator, ambient })
    }
}

impl MetricField for ExpectedPullbackMetric {
    fn dim(&self) -> usize {
        self.generator.latent_dim()
    }

    fn eval_raw(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mu = self.generator.forward(z)?;
        let jm = self.generator.jacobian_mean(z)?;
        let js = self.generator.jacobian_sigma(z)?;
        let a = self.ambient.eval(&mu)?;
        Ok(jm.transpose() * &a * &jm + js.transpose() * &a * &js)
    }

    fn derivative_raw(&self, z: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        Some((|| {
            let m = self.generator.mean_trace(z)?;
            let s = self.generator.sigma_trace(z)?;
            let dm = self
                .ambient
                .pull_back_derivative(&m.value, &m.jacobian, &m.hessian, &m.jacobian)?;
            let ds = self
                .ambient
                .pull_back_derivative(&m.value, &s.jacobian, &s.hessian, &m.jacobian)?;
            Ok(stack(dm.into_iter().zip(ds).map(|(a, b)| a + b).collect(), z.len()))
        })())
    }
}

/// `J_eps^T M_X(mu + eps * sigma) J_eps` with `J_eps = J_mu + diag(eps) J_sigma`
/// for one fixed noise draw `eps`.
pub struct StochasticPullbackMetric {
    pub generator: Arc<Generator>,
    pub ambient: Arc<dyn MetricField>,
    pub eps: DVector<f64>,
}

impl StochasticPullbackMetric {
    pub fn new(generator: Arc<Generator>, ambient: Arc<dyn MetricField>, eps: DVector<f64>) -> Result<Self> {
        if !generator.has_precision() {
            return Err(Error::config("the stochastic metric needs a precision network"));
        }
        check_ambient(generator.ambient_dim(), ambient.as_ref())?;
        if eps.len() != generator.ambient_dim() {
            return Err(Error::config(format!(
                "noise has {} entries, ambient dimension is {}",
                eps.len(),
                generator.ambient_dim()
            )));
        }
        Ok(StochasticPullbackMetric {
            generator,
            ambient,
            eps,
        })
    }
}

fn scale_rows(m: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (i, f) in s.iter().enumerate() {
        out.row_mut(i).scale_mut(*f);
    }
    out
}

impl MetricField for StochasticPullbackMetric {
    fn dim(&self) -> usize {
        self.generator.latent_dim()
    }

    fn eval_raw(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mu = self.generator.forward(z)?;
        let sigma = self.generator.sigma(z)?;
        let j = self.generator.jacobian_mean(z)? + scale_rows(&self.generator.jacobian_sigma(z)?, &self.eps);
        let x = mu + self.eps.component_mul(&sigma);
        self.ambient.pull_back(&x, &j)
    }

    fn derivative_raw(&self, z: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        Some((|| {
            let m = self.generator.mean_trace(z)?;
            let s = self.generator.sigma_trace(z)?;
            let j = &m.jacobian + scale_rows(&s.jacobian, &self.eps);
            let dj: Vec<DMatrix<f64>> = m
                .hessian
                .iter()
                .zip(&s.hessian)
                .map(|(a, b)| a + scale_rows(b, &self.eps))
                .collect();
            let x = &m.value + self.eps.component_mul(&s.sigma);
            Ok(stack(self.ambient.pull_back_derivative(&x, &j, &dj, &j)?, z.len()))
        })())
    }
}

/// Pull-back with forward-difference Jacobians from batched evaluations.
///
/// Suited to generators without closed-form derivatives; metric derivatives
/// fall back to central differences of the metric itself.
pub struct FiniteDiffPullbackMetric<B> {
    pub map: B,
    pub ambient: Arc<dyn MetricField>,
    pub lambda: f64,
}

impl<B: BatchMap> FiniteDiffPullbackMetric<B> {
    pub fn new(map: B, ambient: Arc<dyn MetricField>, lambda: f64) -> Result<Self> {
        check_ambient(map.output_dim(), ambient.as_ref())?;
        if !(lambda > 0.0) {
            return Err(Error::config("finite-difference step must be positive"));
        }
        Ok(FiniteDiffPullbackMetric { map, ambient, lambda })
    }
}

impl<B: BatchMap> MetricField for FiniteDiffPullbackMetric<B> {
    fn dim(&self) -> usize {
        self.map.input_dim()
    }

    fn eval_raw(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        let x = self.map.eval_batch(&DMatrix::from_row_slice(1, z.len(), z.as_slice()))?;
        let j = finite_diff_jacobian(&self.map, z, self.lambda)?;
        self.ambient.pull_back(&x.row(0).transpose(), &j)
    }
}

pub fn forward(generator: &Generator, z: &DVector<f64>) -> Result<DVector<f64>> {
    generator.forward(z)
}

pub fn jacobian_mean(generator: &Generator, z: &DVector<f64>) -> Result<DMatrix<f64>> {
    generator.jacobian_mean(z)
}

pub fn jacobian_sigma(generator: &Generator, z: &DVector<f64>) -> Result<DMatrix<f64>> {
    generator.jacobian_sigma(z)
}

pub fn sigma(generator: &Generator, z: &DVector<f64>) -> Result<DVector<f64>> {
    generator.sigma(z)
}

/// Symmetrized and regularized `J^T M_X(g(z)) J`; warns when rank deficient.
pub fn pullback_metric(generator: &Generator, ambient: &dyn MetricField, z: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_ambient(generator.ambient_dim(), ambient)?;
    let x = generator.forward(z)?;
    let j = generator.jacobian_mean(z)?;
    let m = ambient.pull_back(&x, &j)?;
    if rank_deficient(&m) {
        log::warn!(
            "pull-back metric is rank deficient at {:?}; the generator is not an immersion there",
            z.as_slice()
        );
    }
    Ok(regularize_spd(&m))
}

pub fn expected_pullback_metric(
    generator: &Generator,
    ambient: &dyn MetricField,
    z: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    if !generator.has_precision() {
        return Err(Error::config(
            "the expected metric needs a precision network; use pullback_metric instead",
        ));
    }
    check_ambient(generator.ambient_dim(), ambient)?;
    let mu = generator.forward(z)?;
    let jm = generator.jacobian_mean(z)?;
    let js = generator.jacobian_sigma(z)?;
    let a = ambient.eval(&mu)?;
    Ok(regularize_spd(&(jm.transpose() * &a * &jm + js.transpose() * &a * &js)))
}

pub fn stochastic_pullback_metric(
    generator: &Generator,
    ambient: &dyn MetricField,
    z: &DVector<f64>,
    eps: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    check_ambient(generator.ambient_dim(), ambient)?;
    if eps.len() != generator.ambient_dim() {
        return Err(Error::config("noise length must equal the ambient dimension"));
    }
    let mu = generator.forward(z)?;
    let sigma = generator.sigma(z)?;
    let j = generator.jacobian_mean(z)? + scale_rows(&generator.jacobian_sigma(z)?, eps);
    let x = mu + eps.component_mul(&sigma);
    Ok(regularize_spd(&ambient.pull_back(&x, &j)?))
}

/// The stochastic metric with the ambient metric frozen at `mu(z)`, the form
/// whose expectation over `eps` is the expected metric.
pub fn stochastic_pullback_metric_frozen(
    generator: &Generator,
    ambient: &dyn MetricField,
    z: &DVector<f64>,
    eps: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    check_ambient(generator.ambient_dim(), ambient)?;
    let mu = generator.forward(z)?;
    let j = generator.jacobian_mean(z)? + scale_rows(&generator.jacobian_sigma(z)?, eps);
    Ok(regularize_spd(&ambient.pull_back(&mu, &j)?))
}
