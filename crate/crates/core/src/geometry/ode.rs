//! The geodesic equation and its fixed-step RK4 integration.

use nalgebra::{DMatrix, DVector};

use super::metric::{metric_derivative, MetricField};
use crate::error::{Error, Result};

/// `c'' = -1/2 M^{-1} [ 2 (c'^T (x) I_d) dvec(M)/dc c' - dvec(M)/dc^T (c' (x) c') ]`.
///
/// Both Kronecker factors are formed explicitly; `d` is small for latent
/// spaces.
pub fn geodesic_ode_rhs<M: MetricField + ?Sized>(
    z: &DVector<f64>,
    zdot: &DVector<f64>,
    metric: &M,
) -> Result<DVector<f64>> {
    let d = metric.dim();
    if z.len() != d || zdot.len() != d {
        return Err(Error::config(format!(
            "dimension mismatch: metric {d}, point {}, velocity {}",
            z.len(),
            zdot.len()
        )));
    }
    let m = metric.eval(z)?;
    let dm = metric_derivative(metric, z)?;

    // (c'^T (x) I_d): d x d^2
    let mut left = DMatrix::zeros(d, d * d);
    for j in 0..d {
        for i in 0..d {
            left[(i, j * d + i)] = zdot[j];
        }
    }
    // c' (x) c': d^2
    let mut outer = DVector::zeros(d * d);
    for j in 0..d {
        for i in 0..d {
            outer[j * d + i] = zdot[j] * zdot[i];
        }
    }
    let bracket = (left * &dm * zdot) * 2.0 - dm.transpose() * outer;
    let rhs = bracket * -0.5;
    solve_spd(m, &rhs)
}

pub(crate) fn solve_spd(m: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        return Ok(ch.solve(rhs));
    }
    m.lu()
        .solve(rhs)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::numerical("metric is singular"))
}

/// Options for [`exp_map`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpOptions {
    /// RK4 steps on `[0, 1]`.
    pub steps: usize,
    /// Integration aborts once `|z|` exceeds this value.
    pub bound: f64,
}

impl Default for ExpOptions {
    fn default() -> Self {
        ExpOptions {
            steps: 100,
            bound: 1e6,
        }
    }
}

/// Integrates `z' = w, w' = geodesic_ode_rhs(z, w)` from `(x, v)` over
/// `[0, 1]` and returns the whole trajectory of positions (length `steps+1`).
pub fn geodesic_trajectory<M: MetricField + ?Sized>(
    x: &DVector<f64>,
    v: &DVector<f64>,
    metric: &M,
    opts: &ExpOptions,
) -> Result<Vec<DVector<f64>>> {
    if opts.steps == 0 {
        return Err(Error::config("exp map needs at least one RK4 step"));
    }
    if x.len() != v.len() {
        return Err(Error::config("tangent vector and base point dimensions differ"));
    }
    let h = 1.0 / opts.steps as f64;
    let mut z = x.clone();
    let mut w = v.clone();
    let mut path = Vec::with_capacity(opts.steps + 1);
    path.push(z.clone());
    let accel = |z: &DVector<f64>, w: &DVector<f64>| geodesic_ode_rhs(z, w, metric);
    for step in 0..opts.steps {
        let t = step as f64 * h;
        let k1z = w.clone();
        let k1w = accel(&z, &w).map_err(|e| e.at_t(t))?;
        let z2 = &z + &k1z * (0.5 * h);
        let w2 = &w + &k1w * (0.5 * h);
        let k2w = accel(&z2, &w2).map_err(|e| e.at_t(t))?;
        let z3 = &z + &w2 * (0.5 * h);
        let w3 = &w + &k2w * (0.5 * h);
        let k3w = accel(&z3, &w3).map_err(|e| e.at_t(t))?;
        let z4 = &z + &w3 * h;
        let w4 = &w + &k3w * h;
        let k4w = accel(&z4, &w4).map_err(|e| e.at_t(t))?;
        z += (k1z + &w2 * 2.0 + &w3 * 2.0 + &w4) * (h / 6.0);
        w += (k1w + k2w * 2.0 + k3w * 2.0 + k4w) * (h / 6.0);
        let norm = z.norm();
        if !norm.is_finite() || norm > opts.bound {
            return Err(Error::DomainEscape {
                norm,
                bound: opts.bound,
                t: t + h,
            });
        }
        path.push(z.clone());
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::metric::{
        metric_derivative_with, ConstantMetric, DerivativeMode, FnMetric, IdentityMetric,
    };

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    /// diag(1, 1 + z1^2) with its exact derivative.
    fn bump() -> FnMetric {
        FnMetric::new(2, |z| DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0 + z[0] * z[0]]))
            .with_derivative(|z| {
                let mut d = DMatrix::zeros(4, 2);
                d[(3, 0)] = 2.0 * z[0];
                d
            })
    }

    #[test]
    fn constant_metric_has_no_acceleration() {
        let m = ConstantMetric::diagonal(&[2.0, 5.0, 1.0]);
        let a = geodesic_ode_rhs(&v(&[1.0, 2.0, 3.0]), &v(&[-1.0, 0.5, 2.0]), &m).unwrap();
        assert!(a.amax() == 0.0);
    }

    /// Independent oracle: the Euler-Lagrange residual of the discretised
    /// energy. For a quadratic curve c(t) = z + t zd + t^2/2 a, the discrete
    /// energy gradient with respect to the middle sample vanishes (to O(h^2))
    /// exactly when `a` is the geodesic acceleration. Here we recover `a` by
    /// solving that stationarity condition with Newton iterations on `a`.
    fn euler_lagrange_oracle(m: &FnMetric, z: &DVector<f64>, zd: &DVector<f64>) -> DVector<f64> {
        let h = 1e-3;
        let energy = |mid: &DVector<f64>, a: &DVector<f64>| {
            // three samples at t = -h, 0, h with the middle one displaced
            let p0 = z - zd * h + a * (0.5 * h * h);
            let p2 = z + zd * h + a * (0.5 * h * h);
            let seg = |p: &DVector<f64>, q: &DVector<f64>| {
                let c = (p + q) * 0.5;
                let dv = (q - p) / h;
                0.5 * dv.dot(&(m.eval(&c).unwrap() * &dv)) * h
            };
            seg(&p0, mid) + seg(mid, &p2)
        };
        let residual = |a: &DVector<f64>| {
            let eps = 1e-6;
            DVector::from_fn(2, |k, _| {
                let mut up = z.clone();
                let mut dn = z.clone();
                up[k] += eps;
                dn[k] -= eps;
                (energy(&up, a) - energy(&dn, a)) / (2.0 * eps)
            })
        };
        let mut a = DVector::zeros(2);
        for _ in 0..3 {
            let r = residual(&a);
            let jac = DMatrix::from_fn(2, 2, |i, j| {
                let mut ap = a.clone();
                ap[j] += 1.0;
                residual(&ap)[i] - r[i]
            });
            a -= jac.lu().solve(&r).unwrap();
        }
        a
    }

    #[test]
    fn matches_discrete_euler_lagrange_oracle() {
        let m = bump();
        let z = v(&[1.0, 0.0]);
        let zd = v(&[1.0, 1.0]);
        let rhs = geodesic_ode_rhs(&z, &zd, &m).unwrap();
        let oracle = euler_lagrange_oracle(&m, &z, &zd);
        assert!((rhs - &oracle).amax() < 1e-4, "{oracle}");
        // closed form: a1 = z1 zd2^2, a2 = -2 z1 zd1 zd2 / (1 + z1^2)
        assert!((oracle - v(&[1.0, -1.0])).amax() < 1e-4);
    }

    #[test]
    fn finite_difference_derivative_gives_same_rhs() {
        let m = bump();
        let fd = crate::geometry::metric::FiniteDifferenceOnly(bump());
        let z = v(&[0.7, -0.3]);
        let zd = v(&[0.4, 1.1]);
        let a = geodesic_ode_rhs(&z, &zd, &m).unwrap();
        let b = geodesic_ode_rhs(&z, &zd, &fd).unwrap();
        assert!((a - b).amax() < 1e-7);
        let d1 = metric_derivative_with(&m, &z, DerivativeMode::Analytic).unwrap();
        let d2 = metric_derivative_with(&fd, &z, DerivativeMode::Analytic).unwrap();
        assert!((d1 - d2).amax() < 1e-7);
    }

    #[test]
    fn trajectory_is_a_line_in_flat_space() {
        let path = geodesic_trajectory(
            &v(&[1.0, 2.0]),
            &v(&[0.5, -0.25]),
            &IdentityMetric::new(2),
            &ExpOptions::default(),
        )
        .unwrap();
        assert!((path.last().unwrap() - v(&[1.5, 1.75])).amax() < 1e-12);
    }

    #[test]
    fn escaping_trajectory_is_reported() {
        // unit speed means z' = c (1 + z^2), which blows up at finite t
        let m = FnMetric::new(1, |z| DMatrix::from_element(1, 1, (1.0 + z[0] * z[0]).powi(-2)));
        let opts = ExpOptions {
            steps: 100,
            bound: 50.0,
        };
        let r = geodesic_trajectory(&v(&[1.0]), &v(&[5.0]), &m, &opts);
        assert!(matches!(r, Err(Error::DomainEscape { .. })), "{r:?}");
    }
}
