//! The `MetricField` abstraction: a smooth map from a point to an SPD matrix.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, regularize_spd};

/// Default relative step for central finite differences of a metric.
pub const FD_STEP: f64 = 1e-4;

/// A Riemannian metric in global coordinates.
///
/// Implementors supply [`MetricField::eval_raw`]; every public evaluation goes
/// through [`MetricField::eval`], which symmetrizes and adds a
/// `1e-10 * trace/d` diagonal shift. Evaluators must be deterministic and
/// callable from several threads at once.
pub trait MetricField: Send + Sync {
    fn dim(&self) -> usize;

    /// The metric before symmetrization and regularization.
    fn eval_raw(&self, x: &DVector<f64>) -> Result<DMatrix<f64>>;

    /// Closed-form `d vec(M) / dx` as a `d^2 x d` matrix (column-major `vec`),
    /// or `None` when the field has no analytic derivative.
    fn derivative_raw(&self, _x: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        None
    }

    /// `sum_k dM/dx_k * u_k`, analytic when available.
    fn directional_derivative(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Option<Result<DMatrix<f64>>> {
        let d = self.dim();
        self.derivative_raw(x).map(|res| {
            res.map(|dm| {
                let flat = dm * u;
                DMatrix::from_column_slice(d, d, flat.as_slice())
            })
        })
    }

    fn eval(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.dim(), x.len())?;
        let m = self.eval_raw(x)?;
        if !all_finite(&m) {
            return Err(Error::numerical(format!(
                "metric evaluation is not finite at {:?}",
                x.as_slice()
            )));
        }
        Ok(regularize_spd(&m))
    }

    /// `<v, M(x) v>`. Large fields override this to avoid forming `M`.
    fn quad_form(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        let m = self.eval(x)?;
        Ok(v.dot(&(m * v)))
    }

    /// `J^T M(x) J` for a `dim x k` matrix `J`.
    fn pull_back(&self, x: &DVector<f64>, jac: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let m = self.eval(x)?;
        Ok(jac.transpose() * m * jac)
    }

    /// Derivatives of `z -> J(z)^T M(x(z)) J(z)` with respect to each `z_l`.
    ///
    /// `djac[l] = dJ/dz_l` and `x_dot = dx/dz` (which differs from `J` for
    /// the uncertainty term of the expected metric).
    fn pull_back_derivative(
        &self,
        x: &DVector<f64>,
        jac: &DMatrix<f64>,
        djac: &[DMatrix<f64>],
        x_dot: &DMatrix<f64>,
    ) -> Result<Vec<DMatrix<f64>>> {
        let a = self.eval(x)?;
        let jt = jac.transpose();
        let aj = &a * jac;
        let mut out = Vec::with_capacity(djac.len());
        for (l, dj) in djac.iter().enumerate() {
            let u: DVector<f64> = x_dot.column(l).into_owned();
            let da = match self.directional_derivative(x, &u) {
                Some(r) => r?,
                None => directional_fd(self, x, &u)?,
            };
            let cross = dj.transpose() * &aj;
            out.push(&cross + cross.transpose() + &jt * da * jac);
        }
        Ok(out)
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::config(format!(
            "dimension mismatch: metric has dimension {expected}, point has {got}"
        )))
    }
}

/// Central difference of `M` along direction `u`.
pub(crate) fn directional_fd<M: MetricField + ?Sized>(
    metric: &M,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let umax = u.amax();
    if umax == 0.0 {
        return Ok(DMatrix::zeros(metric.dim(), metric.dim()));
    }
    let h = FD_STEP * x.amax().max(1.0) / umax;
    let plus = metric.eval(&(x + u * h))?;
    let minus = metric.eval(&(x - u * h))?;
    Ok((plus - minus) / (2.0 * h))
}

/// How `metric_derivative` obtains `d vec(M)/dz`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DerivativeMode {
    /// Closed form when the field supplies one, central differences otherwise.
    Analytic,
    CentralDifference { step: f64 },
}

impl Default for DerivativeMode {
    fn default() -> Self {
        DerivativeMode::Analytic
    }
}

/// `d vec(M)/dz` as a `d^2 x d` matrix; column `l` is `vec(dM/dz_l)`.
pub fn metric_derivative<M: MetricField + ?Sized>(
    metric: &M,
    z: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    metric_derivative_with(metric, z, DerivativeMode::Analytic)
}

pub fn metric_derivative_with<M: MetricField + ?Sized>(
    metric: &M,
    z: &DVector<f64>,
    mode: DerivativeMode,
) -> Result<DMatrix<f64>> {
    check_dim(metric.dim(), z.len())?;
    match mode {
        DerivativeMode::Analytic => match metric.derivative_raw(z) {
            Some(r) => {
                let dm = r?;
                // symmetrize each slice, matching eval()
                let d = metric.dim();
                Ok(DMatrix::from_fn(d * d, d, |row, l| {
                    let (i, j) = (row % d, row / d);
                    0.5 * (dm[(i + j * d, l)] + dm[(j + i * d, l)])
                }))
            }
            None => central_difference(metric, z, FD_STEP),
        },
        DerivativeMode::CentralDifference { step } => central_difference(metric, z, step),
    }
}

fn central_difference<M: MetricField + ?Sized>(
    metric: &M,
    z: &DVector<f64>,
    step: f64,
) -> Result<DMatrix<f64>> {
    let d = metric.dim();
    let mut out = DMatrix::zeros(d * d, d);
    for l in 0..d {
        let h = step * z[l].abs().max(1.0);
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[l] += h;
        zm[l] -= h;
        let diff = (metric.eval(&zp)? - metric.eval(&zm)?) / (2.0 * h);
        out.column_mut(l).copy_from_slice(diff.as_slice());
    }
    Ok(out)
}

/// Slice `l` of a `d^2 x d` derivative tensor as a `d x d` matrix.
pub fn derivative_slice(dm: &DMatrix<f64>, l: usize) -> DMatrix<f64> {
    let d = dm.ncols();
    DMatrix::from_column_slice(d, d, dm.column(l).as_slice())
}

macro_rules! forward_metric_field {
    ($ty:ty) => {
        fn dim(&self) -> usize {
            (**self).dim()
        }
        fn eval_raw(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
            (**self).eval_raw(x)
        }
        fn derivative_raw(&self, x: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
            (**self).derivative_raw(x)
        }
        fn directional_derivative(
            &self,
            x: &DVector<f64>,
            u: &DVector<f64>,
        ) -> Option<Result<DMatrix<f64>>> {
            (**self).directional_derivative(x, u)
        }
        fn eval(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
            (**self).eval(x)
        }
        fn quad_form(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
            (**self).quad_form(x, v)
        }
        fn pull_back(&self, x: &DVector<f64>, jac: &DMatrix<f64>) -> Result<DMatrix<f64>> {
            (**self).pull_back(x, jac)
        }
        fn pull_back_derivative(
            &self,
            x: &DVector<f64>,
            jac: &DMatrix<f64>,
            djac: &[DMatrix<f64>],
            x_dot: &DMatrix<f64>,
        ) -> Result<Vec<DMatrix<f64>>> {
            (**self).pull_back_derivative(x, jac, djac, x_dot)
        }
    };
}

impl<M: MetricField + ?Sized> MetricField for Arc<M> {
    forward_metric_field!(Arc<M>);
}

impl<M: MetricField + ?Sized> MetricField for &M {
    forward_metric_field!(&M);
}

impl<M: MetricField + ?Sized> MetricField for Box<M> {
    forward_metric_field!(Box<M>);
}

/// The Euclidean metric `I_d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityMetric {
    pub dim: usize,
}

impl IdentityMetric {
    pub fn new(dim: usize) -> Self {
        IdentityMetric { dim }
    }
}

impl MetricField for IdentityMetric {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval_raw(&self, _x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(DMatrix::identity(self.dim, self.dim))
    }
    fn derivative_raw(&self, _x: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        Some(Ok(DMatrix::zeros(self.dim * self.dim, self.dim)))
    }
    // already perfectly conditioned, so no jitter
    fn eval(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.dim, x.len())?;
        Ok(DMatrix::identity(self.dim, self.dim))
    }
    fn quad_form(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(v.norm_squared())
    }
    fn pull_back(&self, _x: &DVector<f64>, jac: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(jac.transpose() * jac)
    }
}

/// A position-independent SPD matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantMetric {
    matrix: DMatrix<f64>,
}

impl ConstantMetric {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::config("constant metric must be square"));
        }
        if !all_finite(&matrix) {
            return Err(Error::config("constant metric has non-finite entries"));
        }
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        if (&matrix - matrix.transpose()).amax() > 1e-12 * scale {
            return Err(Error::config("constant metric must be symmetric"));
        }
        if matrix.clone().cholesky().is_none() {
            return Err(Error::config("constant metric must be positive definite"));
        }
        Ok(ConstantMetric { matrix })
    }

    /// Panics unless every entry is positive and finite.
    pub fn diagonal(entries: &[f64]) -> Self {
        assert!(
            entries.iter().all(|&e| e > 0.0 && e.is_finite()),
            "diagonal metric entries must be positive"
        );
        ConstantMetric {
            matrix: DMatrix::from_diagonal(&DVector::from_column_slice(entries)),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl MetricField for ConstantMetric {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn eval_raw(&self, _x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.matrix.clone())
    }
    fn derivative_raw(&self, _x: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        let d = self.dim();
        Some(Ok(DMatrix::zeros(d * d, d)))
    }
}

type MatrixFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// A metric given by closures; mostly useful for tests and quick experiments.
pub struct FnMetric {
    dim: usize,
    eval: Box<MatrixFn>,
    derivative: Option<Box<MatrixFn>>,
}

impl FnMetric {
    pub fn new(
        dim: usize,
        eval: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        FnMetric {
            dim,
            eval: Box::new(eval),
            derivative: None,
        }
    }

    /// Attach a closed-form `d vec(M)/dz` (`d^2 x d`).
    pub fn with_derivative(
        mut self,
        derivative: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.derivative = Some(Box::new(derivative));
        self
    }
}

impl MetricField for FnMetric {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval_raw(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok((self.eval)(x))
    }
    fn derivative_raw(&self, x: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        self.derivative.as_ref().map(|f| Ok(f(x)))
    }
}

/// Hides the analytic derivative of the wrapped field so that every consumer
/// falls back to central differences.
pub struct FiniteDifferenceOnly<M>(pub M);

impl<M: MetricField> MetricField for FiniteDifferenceOnly<M> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn eval_raw(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.0.eval_raw(x)
    }
}

/// A tangent vector `v` at base point `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub base: DVector<f64>,
    pub components: DVector<f64>,
}

impl TangentVector {
    pub fn new(base: DVector<f64>, components: DVector<f64>) -> Result<Self> {
        if base.len() != components.len() {
            return Err(Error::config(format!(
                "tangent vector has {} components but base point has dimension {}",
                components.len(),
                base.len()
            )));
        }
        Ok(TangentVector { base, components })
    }

    pub fn zero(base: DVector<f64>) -> Self {
        let components = DVector::zeros(base.len());
        TangentVector { base, components }
    }

    pub fn dim(&self) -> usize {
        self.base.len()
    }

    pub fn norm(&self) -> f64 {
        self.components.norm()
    }
}
