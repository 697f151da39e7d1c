use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

use super::net::FeedforwardNet;
use super::pca::PcaModel;
use super::rbf::{PositiveRbf, SigmaTrace};

/// `A z + b` with `A = U diag(sqrt(lambda))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPart {
    /// `D x d`.
    pub u: DMatrix<f64>,
    pub lambda: DVector<f64>,
    pub b: DVector<f64>,
    a: DMatrix<f64>,
}

impl LinearPart {
    pub fn new(u: DMatrix<f64>, lambda: DVector<f64>, b: DVector<f64>) -> Result<Self> {
        if u.ncols() != lambda.len() || u.nrows() != b.len() {
            return Err(Error::config(format!(
                "linear part: U is {}x{}, lambda has {} entries, b has {}",
                u.nrows(),
                u.ncols(),
                lambda.len(),
                b.len()
            )));
        }
        if lambda.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::config("linear part: lambda must be nonnegative"));
        }
        let mut a = u.clone();
        for (j, l) in lambda.iter().enumerate() {
            a.column_mut(j).scale_mut(l.sqrt());
        }
        Ok(LinearPart { u, lambda, b, a })
    }

    /// A general `A`, stored as `U = A`, `lambda = 1`.
    pub fn from_matrix(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let d = a.ncols();
        LinearPart::new(a, DVector::from_element(d, 1.0), b)
    }

    pub fn from_pca(pca: &PcaModel) -> Result<Self> {
        LinearPart::new(pca.components.clone(), pca.eigenvalues.clone(), pca.mean.clone())
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }
}

/// `g(z) = f(z) + A z + b`, optionally preceded by `z = U~ z~` and paired with
/// a precision network for the per-coordinate spread `sigma(z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    /// `None` means `f = 0`.
    pub net: Option<FeedforwardNet>,
    pub linear: Option<LinearPart>,
    pub precision: Option<PositiveRbf>,
    /// `d x d~` with orthonormal columns.
    pub subspace: Option<DMatrix<f64>>,
}

/// Value, Jacobian and second derivatives of a map `R^d -> R^D`.
pub struct MapTrace {
    pub value: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    /// `dJ/dz_l`, one per input coordinate.
    pub hessian: Vec<DMatrix<f64>>,
}

impl Generator {
    pub fn new(
        net: Option<FeedforwardNet>,
        linear: Option<LinearPart>,
        precision: Option<PositiveRbf>,
        subspace: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let (d, dout) = match (&net, &linear) {
            (Some(n), Some(l)) => {
                if n.input_dim() != l.u.ncols() || n.output_dim() != l.u.nrows() {
                    return Err(Error::config(format!(
                        "network maps {} -> {} but the linear part maps {} -> {}",
                        n.input_dim(),
                        n.output_dim(),
                        l.u.ncols(),
                        l.u.nrows()
                    )));
                }
                (n.input_dim(), n.output_dim())
            }
            (Some(n), None) => (n.input_dim(), n.output_dim()),
            (None, Some(l)) => (l.u.ncols(), l.u.nrows()),
            (None, None) => return Err(Error::config("a generator needs a network or a linear part")),
        };
        if let Some(p) = &precision {
            if p.latent_dim() != d || p.output_dim() != dout {
                return Err(Error::config(format!(
                    "precision network maps {} -> {}, generator maps {d} -> {dout}",
                    p.latent_dim(),
                    p.output_dim()
                )));
            }
        }
        if let Some(s) = &subspace {
            if s.nrows() != d {
                return Err(Error::config(format!("subspace has {} rows, latent dimension is {d}", s.nrows())));
            }
            let gram = s.transpose() * s;
            if (gram - DMatrix::identity(s.ncols(), s.ncols())).amax() > 1e-8 {
                return Err(Error::config("subspace columns must be orthonormal"));
            }
        }
        Ok(Generator {
            net,
            linear,
            precision,
            subspace,
        })
    }

    pub fn from_net(net: FeedforwardNet) -> Self {
        Generator {
            net: Some(net),
            linear: None,
            precision: None,
            subspace: None,
        }
    }

    pub fn linear(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        Generator::new(None, Some(LinearPart::from_matrix(a, b)?), None, None)
    }

    pub fn with_precision(mut self, precision: PositiveRbf) -> Result<Self> {
        let net = self.net.take();
        let linear = self.linear.take();
        let subspace = self.subspace.take();
        Generator::new(net, linear, Some(precision), subspace)
    }

    /// Dimension of the generator's own input, before any subspace map.
    fn core_dim(&self) -> usize {
        match (&self.net, &self.linear) {
            (Some(n), _) => n.input_dim(),
            (None, Some(l)) => l.u.ncols(),
            (None, None) => 0,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.subspace.as_ref().map_or(self.core_dim(), |s| s.ncols())
    }

    pub fn ambient_dim(&self) -> usize {
        match (&self.net, &self.linear) {
            (Some(n), _) => n.output_dim(),
            (None, Some(l)) => l.u.nrows(),
            (None, None) => 0,
        }
    }

    pub fn has_precision(&self) -> bool {
        self.precision.is_some()
    }

    fn check(&self, z: &DVector<f64>) -> Result<()> {
        if z.len() == self.latent_dim() {
            Ok(())
        } else {
            Err(Error::config(format!(
                "dimension mismatch: generator latent dimension {}, point has {}",
                self.latent_dim(),
                z.len()
            )))
        }
    }

    fn lift(&self, z: &DVector<f64>) -> DVector<f64> {
        match &self.subspace {
            Some(s) => s * z,
            None => z.clone(),
        }
    }

    fn core_forward(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut out = match &self.net {
            Some(n) => n.forward(z),
            None => DVector::zeros(self.ambient_dim()),
        };
        if let Some(l) = &self.linear {
            out += l.matrix() * z + &l.b;
        }
        out
    }

    pub fn forward(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(z)?;
        Ok(self.core_forward(&self.lift(z)))
    }

    /// One point per row.
    pub fn forward_batch(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if z.ncols() != self.latent_dim() {
            return Err(Error::config(format!(
                "dimension mismatch: generator latent dimension {}, batch has {} columns",
                self.latent_dim(),
                z.ncols()
            )));
        }
        let zl = match &self.subspace {
            Some(s) => z * s.transpose(),
            None => z.clone(),
        };
        let mut out = match &self.net {
            Some(n) => n.forward_batch(&zl),
            None => DMatrix::zeros(z.nrows(), self.ambient_dim()),
        };
        if let Some(l) = &self.linear {
            let lin = &zl * l.matrix().transpose();
            out += lin;
            for mut r in out.row_iter_mut() {
                r += l.b.transpose();
            }
        }
        Ok(out)
    }

    pub fn jacobian_mean(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check(z)?;
        let zl = self.lift(z);
        let mut j = match &self.net {
            Some(n) => n.jacobian(&zl),
            None => DMatrix::zeros(self.ambient_dim(), zl.len()),
        };
        if let Some(l) = &self.linear {
            j += l.matrix();
        }
        Ok(self.restrict(j))
    }

    fn restrict(&self, j: DMatrix<f64>) -> DMatrix<f64> {
        match &self.subspace {
            Some(s) => j * s,
            None => j,
        }
    }

    /// Chain rule through the subspace map for second derivatives.
    fn restrict_hessian(&self, h: Vec<DMatrix<f64>>) -> Vec<DMatrix<f64>> {
        match &self.subspace {
            None => h,
            Some(s) => (0..s.ncols())
                .map(|l| {
                    let mut acc = DMatrix::zeros(h[0].nrows(), h[0].ncols());
                    for (m, hm) in h.iter().enumerate() {
                        acc += hm * s[(m, l)];
                    }
                    acc * s
                })
                .collect(),
        }
    }

    pub fn mean_trace(&self, z: &DVector<f64>) -> Result<MapTrace> {
        self.check(z)?;
        let zl = self.lift(z);
        let d = zl.len();
        let dout = self.ambient_dim();
        let (mut value, mut jacobian, hessian) = match &self.net {
            Some(n) => {
                let t = n.trace(&zl);
                (t.value, t.jacobian, t.hessian)
            }
            None => (DVector::zeros(dout), DMatrix::zeros(dout, d), vec![DMatrix::zeros(dout, d); d]),
        };
        if let Some(l) = &self.linear {
            value += l.matrix() * &zl + &l.b;
            jacobian += l.matrix();
        }
        Ok(MapTrace {
            value,
            jacobian: self.restrict(jacobian),
            hessian: self.restrict_hessian(hessian),
        })
    }

    fn precision_net(&self) -> Result<&PositiveRbf> {
        self.precision.as_ref().ok_or_else(|| {
            Error::config("generator has no precision network; use the deterministic pull-back metric instead")
        })
    }

    pub fn sigma(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(z)?;
        Ok(self.precision_net()?.sigma(&self.lift(z)))
    }

    pub fn jacobian_sigma(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check(z)?;
        let j = self.precision_net()?.jacobian_sigma(&self.lift(z));
        Ok(self.restrict(j))
    }

    pub fn sigma_trace(&self, z: &DVector<f64>) -> Result<SigmaTrace> {
        self.check(z)?;
        let t = self.precision_net()?.trace(&self.lift(z));
        Ok(SigmaTrace {
            sigma: t.sigma,
            jacobian: self.restrict(t.jacobian),
            hessian: self.restrict_hessian(t.hessian),
        })
    }

    /// Network widths never shrink (the usual shape of an immersion).
    pub fn widths_nondecreasing(&self) -> bool {
        self.net.as_ref().is_none_or(|n| n.widths_nondecreasing())
    }
}

/// A twice differentiable map with closed-form derivatives.
pub trait SmoothMap: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn value(&self, z: &DVector<f64>) -> Result<DVector<f64>>;
    fn jacobian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>>;
    fn trace(&self, z: &DVector<f64>) -> Result<MapTrace>;
}

impl SmoothMap for Generator {
    fn input_dim(&self) -> usize {
        self.latent_dim()
    }
    fn output_dim(&self) -> usize {
        self.ambient_dim()
    }
    fn value(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        self.forward(z)
    }
    fn jacobian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.jacobian_mean(z)
    }
    fn trace(&self, z: &DVector<f64>) -> Result<MapTrace> {
        self.mean_trace(z)
    }
}

impl<T: SmoothMap + ?Sized> SmoothMap for std::sync::Arc<T> {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }
    fn value(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        (**self).value(z)
    }
    fn jacobian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        (**self).jacobian(z)
    }
    fn trace(&self, z: &DVector<f64>) -> Result<MapTrace> {
        (**self).trace(z)
    }
}

/// `g(z) = [z_1, z_2, a (z_1^2 + z_2^2)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParaboloidMap {
    pub a: f64,
}

impl Default for ParaboloidMap {
    fn default() -> Self {
        ParaboloidMap { a: 0.3 }
    }
}

impl ParaboloidMap {
    fn check(z: &DVector<f64>) -> Result<()> {
        if z.len() == 2 {
            Ok(())
        } else {
            Err(Error::config(format!("paraboloid map takes 2-D points, got {}", z.len())))
        }
    }
}

impl SmoothMap for ParaboloidMap {
    fn input_dim(&self) -> usize {
        2
    }
    fn output_dim(&self) -> usize {
        3
    }
    fn value(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        ParaboloidMap::check(z)?;
        Ok(DVector::from_vec(vec![z[0], z[1], self.a * (z[0] * z[0] + z[1] * z[1])]))
    }
    fn jacobian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        ParaboloidMap::check(z)?;
        Ok(DMatrix::from_row_slice(
            3,
            2,
            &[1.0, 0.0, 0.0, 1.0, 2.0 * self.a * z[0], 2.0 * self.a * z[1]],
        ))
    }
    fn trace(&self, z: &DVector<f64>) -> Result<MapTrace> {
        let mut h0 = DMatrix::zeros(3, 2);
        h0[(2, 0)] = 2.0 * self.a;
        let mut h1 = DMatrix::zeros(3, 2);
        h1[(2, 1)] = 2.0 * self.a;
        Ok(MapTrace {
            value: self.value(z)?,
            jacobian: self.jacobian(z)?,
            hessian: vec![h0, h1],
        })
    }
}

/// A map evaluated on many points at once, one point per row.
pub trait BatchMap: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn eval_batch(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>>;
}

impl BatchMap for Generator {
    fn input_dim(&self) -> usize {
        self.latent_dim()
    }
    fn output_dim(&self) -> usize {
        self.ambient_dim()
    }
    fn eval_batch(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.forward_batch(z)
    }
}

impl BatchMap for FeedforwardNet {
    fn input_dim(&self) -> usize {
        FeedforwardNet::input_dim(self)
    }
    fn output_dim(&self) -> usize {
        FeedforwardNet::output_dim(self)
    }
    fn eval_batch(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward_batch(z))
    }
}

impl<T: BatchMap + ?Sized> BatchMap for std::sync::Arc<T> {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }
    fn eval_batch(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        (**self).eval_batch(z)
    }
}

/// Wraps a batch closure as a [`BatchMap`].
pub struct FnBatchMap<F> {
    input: usize,
    output: usize,
    f: F,
}

impl<F> FnBatchMap<F>
where
    F: Fn(&DMatrix<f64>) -> Result<DMatrix<f64>> + Send + Sync,
{
    pub fn new(input: usize, output: usize, f: F) -> Self {
        FnBatchMap { input, output, f }
    }
}

impl<F> BatchMap for FnBatchMap<F>
where
    F: Fn(&DMatrix<f64>) -> Result<DMatrix<f64>> + Send + Sync,
{
    fn input_dim(&self) -> usize {
        self.input
    }
    fn output_dim(&self) -> usize {
        self.output
    }
    fn eval_batch(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        (self.f)(z)
    }
}

/// Forward differences `(g(z + lambda e_j) - g(z)) / lambda`, all `d + 1`
/// points sent through the map in a single batch.
pub fn finite_diff_jacobian<B: BatchMap + ?Sized>(map: &B, z: &DVector<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::config("finite-difference step must be positive"));
    }
    let d = z.len();
    if d != map.input_dim() {
        return Err(Error::config(format!(
            "dimension mismatch: map input dimension {}, point has {d}",
            map.input_dim()
        )));
    }
    let mut batch = DMatrix::zeros(d + 1, d);
    for r in 0..=d {
        batch.row_mut(r).copy_from(&z.transpose());
        if r > 0 {
            batch[(r, r - 1)] += lambda;
        }
    }
    let out = map.eval_batch(&batch)?;
    if out.nrows() != d + 1 {
        return Err(Error::numerical("batched map returned the wrong number of rows"));
    }
    let base = out.row(0);
    let mut j = DMatrix::zeros(out.ncols(), d);
    for c in 0..d {
        j.set_column(c, &((out.row(c + 1) - base) / lambda).transpose());
    }
    Ok(j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::net::Activation;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn tanh_generator(seed: u64) -> Generator {
        let net = FeedforwardNet::random(&[2, 3, 3], Activation::Tanh, seed).unwrap();
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.5, -0.5]);
        let lin = LinearPart::from_matrix(a, v(&[0.1, 0.2, 0.3])).unwrap();
        Generator::new(Some(net), Some(lin), None, None).unwrap()
    }

    #[test]
    fn linear_only_generator_is_affine() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.0, 1.0, -1.0, 3.0]);
        let b = v(&[1.0, -1.0, 0.5]);
        let g = Generator::linear(a.clone(), b.clone()).unwrap();
        let z = v(&[0.7, -0.3]);
        assert!((g.forward(&z).unwrap() - (&a * &z + &b)).amax() < 1e-15);
        assert_eq!(g.jacobian_mean(&z).unwrap(), a);
        assert!(g.mean_trace(&z).unwrap().hessian.iter().all(|h| h.amax() == 0.0));
    }

    #[test]
    fn linear_part_scales_by_root_eigenvalues() {
        let u = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let l = LinearPart::new(u, v(&[4.0, 9.0]), v(&[0.0, 0.0])).unwrap();
        assert_eq!(l.matrix(), &DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]));
    }

    #[test]
    fn tanh_far_field_is_linear_up_to_a_bound() {
        let g = tanh_generator(3);
        let lin = g.linear.clone().unwrap();
        let net = g.net.as_ref().unwrap();
        let wout = &net.layers.last().unwrap().w;
        let bound = wout.abs().row_sum().amax() + net.layers.last().unwrap().b.amax();
        let dir = v(&[0.6, -0.8]);
        for t in [10.0, 100.0, 1e4] {
            let z = &dir * t;
            let gap = (g.forward(&z).unwrap() - (lin.matrix() * &z + &lin.b)).amax();
            assert!(gap <= bound + 1e-12);
        }
    }

    #[test]
    fn jacobian_includes_linear_term_and_matches_fd() {
        let g = tanh_generator(5);
        let z = v(&[0.4, 0.9]);
        let j = g.jacobian_mean(&z).unwrap();
        let h = 1e-5;
        for c in 0..2 {
            let mut p = z.clone();
            let mut m = z.clone();
            p[c] += h;
            m[c] -= h;
            let fd = (g.forward(&p).unwrap() - g.forward(&m).unwrap()) / (2.0 * h);
            assert!((j.column(c) - fd).amax() < 1e-9);
        }
    }

    #[test]
    fn subspace_composes_with_the_chain_rule() {
        let net = FeedforwardNet::random(&[3, 5, 4], Activation::Softplus, 8).unwrap();
        let s = DMatrix::from_row_slice(3, 2, &[0.6, 0.0, 0.8, 0.0, 0.0, 1.0]);
        let g = Generator::new(Some(net.clone()), None, None, Some(s.clone())).unwrap();
        assert_eq!(g.latent_dim(), 2);
        let z = v(&[0.3, -0.7]);
        assert_eq!(g.forward(&z).unwrap(), net.forward(&(&s * &z)));
        let t = g.mean_trace(&z).unwrap();
        let h = 1e-5;
        for l in 0..2 {
            let mut p = z.clone();
            let mut m = z.clone();
            p[l] += h;
            m[l] -= h;
            let fd = (g.jacobian_mean(&p).unwrap() - g.jacobian_mean(&m).unwrap()) / (2.0 * h);
            assert!((&t.hessian[l] - fd).amax() < 1e-8);
        }
        let batch = DMatrix::from_row_slice(2, 2, &[0.3, -0.7, 1.0, 2.0]);
        let out = g.forward_batch(&batch).unwrap();
        assert!((out.row(0).transpose() - g.forward(&z).unwrap()).amax() < 1e-14);
    }

    #[test]
    fn subspace_must_be_orthonormal() {
        let net = FeedforwardNet::random(&[2, 3], Activation::Tanh, 0).unwrap();
        let s = DMatrix::from_element(2, 1, 1.0);
        assert!(Generator::new(Some(net), None, None, Some(s)).is_err());
    }

    #[test]
    fn sigma_without_precision_is_a_config_error() {
        let g = tanh_generator(1);
        assert!(g.sigma(&v(&[0.0, 0.0])).unwrap_err().is_config());
    }

    #[test]
    fn finite_differences_of_a_linear_map_are_exact() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.25, -1.0, 2.0]);
        let g = Generator::linear(a.clone(), v(&[0.0, 0.0])).unwrap();
        for lam in [0.5, 0.25, 0.125] {
            let j = finite_diff_jacobian(&g, &v(&[1.0, 2.0]), lam).unwrap();
            assert!((j - &a).amax() < 1e-14);
        }
    }

    #[test]
    fn finite_differences_use_one_batched_call() {
        let calls = AtomicUsize::new(0);
        let rows = AtomicUsize::new(0);
        let net = FeedforwardNet::random(&[4, 6, 5], Activation::Tanh, 2).unwrap();
        let map = FnBatchMap::new(4, 5, |z: &DMatrix<f64>| {
            calls.fetch_add(1, Ordering::SeqCst);
            rows.store(z.nrows(), Ordering::SeqCst);
            Ok(net.forward_batch(z))
        });
        finite_diff_jacobian(&map, &DVector::zeros(4), 1e-4).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert_eq!(rows.load(Ordering::SeqCst), 5);
    }

    #[test]
    fn forward_difference_error_is_first_order() {
        let g = tanh_generator(9);
        let z = v(&[0.3, -0.4]);
        let exact = g.jacobian_mean(&z).unwrap();
        let errs: Vec<f64> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&l| (finite_diff_jacobian(&g, &z, l).unwrap() - &exact).norm())
            .collect();
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log10() >= 0.9);
        }
    }

    #[test]
    fn paraboloid_derivatives() {
        let p = ParaboloidMap::default();
        let z = v(&[1.0, -2.0]);
        assert!((p.value(&z).unwrap()[2] - 1.5).abs() < 1e-15);
        let t = p.trace(&z).unwrap();
        assert_eq!(t.jacobian[(2, 1)], -1.2);
        assert_eq!(t.hessian[0][(2, 0)], 0.6);
    }
}
