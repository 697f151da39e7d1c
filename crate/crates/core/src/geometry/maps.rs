//! Exponential and logarithmic maps.

use nalgebra::{DMatrix, DVector};

use super::bvp::{solve_geodesic_bvp, BvpOptions};
use super::metric::{MetricField, TangentVector};
use super::ode::{geodesic_trajectory, ExpOptions};
use crate::error::{Error, Result};

/// Endpoint of the geodesic leaving `x` with initial velocity `v` after unit
/// time.
pub fn exp_map<M: MetricField + ?Sized>(
    x: &DVector<f64>,
    v: &TangentVector,
    metric: &M,
    opts: &ExpOptions,
) -> Result<DVector<f64>> {
    if v.base.len() != x.len() || v.base != *x {
        return Err(Error::config("tangent vector is not based at the given point"));
    }
    if v.components.iter().all(|c| *c == 0.0) {
        return Ok(x.clone());
    }
    let path = geodesic_trajectory(x, &v.components, metric, opts)?;
    Ok(path.last().cloned().unwrap_or_else(|| x.clone()))
}

#[derive(Debug, Clone)]
pub struct LogOptions {
    pub bvp: BvpOptions,
    /// Integrator used by the shooting refinement.
    pub exp: ExpOptions,
    /// Newton shooting iterations polishing the BVP initial velocity; zero
    /// keeps the raw spline derivative.
    pub shooting_iters: usize,
    /// Target endpoint miss, relative to `max(1, |y - x|)`.
    pub shooting_tol: f64,
}

impl Default for LogOptions {
    fn default() -> Self {
        LogOptions {
            bvp: BvpOptions::default(),
            exp: ExpOptions::default(),
            shooting_iters: 30,
            shooting_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LogMap {
    /// Normal coordinates: the initial velocity scaled so that its Euclidean
    /// norm is the geodesic length.
    pub tangent: TangentVector,
    /// Initial velocity of the unit-time geodesic; `exp_map` inverts this.
    pub velocity: DVector<f64>,
    pub length: f64,
    pub converged: bool,
}

fn shooting_miss<M: MetricField + ?Sized>(
    x: &DVector<f64>,
    v: &DVector<f64>,
    y: &DVector<f64>,
    metric: &M,
    opts: &ExpOptions,
) -> Option<DVector<f64>> {
    let path = geodesic_trajectory(x, v, metric, opts).ok()?;
    let miss = path.last()? - y;
    miss.iter().all(|m| m.is_finite()).then_some(miss)
}

fn refine_by_shooting<M: MetricField + ?Sized>(
    x: &DVector<f64>,
    y: &DVector<f64>,
    v0: DVector<f64>,
    metric: &M,
    opts: &LogOptions,
) -> (DVector<f64>, bool) {
    let d = x.len();
    let target = opts.shooting_tol * (y - x).norm().max(1.0);
    let Some(mut miss) = shooting_miss(x, &v0, y, metric, &opts.exp) else {
        return (v0, false);
    };
    let mut v = v0;
    for _ in 0..opts.shooting_iters {
        if miss.norm() <= target {
            return (v, true);
        }
        let mut jac = DMatrix::zeros(d, d);
        for j in 0..d {
            let h = 1e-7 * v[j].abs().max(1e-3);
            let mut vp = v.clone();
            vp[j] += h;
            let Some(mp) = shooting_miss(x, &vp, y, metric, &opts.exp) else {
                return (v, false);
            };
            jac.set_column(j, &((mp - &miss) / h));
        }
        let Some(delta) = jac.lu().solve(&miss) else {
            return (v, false);
        };
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..20 {
            let trial = &v - &delta * step;
            if let Some(m) = shooting_miss(x, &trial, y, metric, &opts.exp) {
                if m.norm() < miss.norm() {
                    v = trial;
                    miss = m;
                    improved = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let ok = miss.norm() <= target;
    (v, ok)
}

/// Initial velocity of the geodesic from `x` to `y`, both raw and in normal
/// coordinates.
///
/// The boundary-value solution gives a first estimate which Newton shooting
/// on the exponential map then polishes. If shooting fails the spline
/// derivative is kept and `converged` reports the BVP status.
pub fn log_map<M: MetricField + ?Sized>(
    x: &DVector<f64>,
    y: &DVector<f64>,
    metric: &M,
    opts: &LogOptions,
) -> Result<LogMap> {
    if x == y {
        let zero = TangentVector::zero(x.clone());
        return Ok(LogMap {
            velocity: zero.components.clone(),
            tangent: zero,
            length: 0.0,
            converged: true,
        });
    }
    let sol = solve_geodesic_bvp(x, y, metric, &opts.bvp)?;
    let v_bvp = sol.curve.velocity(0.0);
    let (velocity, length, converged) = if opts.shooting_iters > 0 {
        let (v, shot) = refine_by_shooting(x, y, v_bvp.clone(), metric, opts);
        if shot {
            let len = metric.quad_form(x, &v)?.max(0.0).sqrt();
            (v, len, true)
        } else {
            (v_bvp, sol.length, sol.converged)
        }
    } else {
        (v_bvp, sol.length, sol.converged)
    };
    let norm = velocity.norm();
    let normal = if norm > 0.0 {
        &velocity * (length / norm)
    } else {
        velocity.clone()
    };
    Ok(LogMap {
        tangent: TangentVector::new(x.clone(), normal)?,
        velocity,
        length,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::metric::{ConstantMetric, FnMetric, IdentityMetric};

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn exp_in_flat_space_is_translation() {
        let x = v(&[0.5, -1.0, 2.0]);
        let t = TangentVector::new(x.clone(), v(&[0.25, 0.5, -0.125])).unwrap();
        let y = exp_map(&x, &t, &IdentityMetric::new(3), &ExpOptions::default()).unwrap();
        assert!((y - v(&[0.75, -0.5, 1.875])).amax() < 1e-12);
    }

    #[test]
    fn exp_of_zero_is_base() {
        let x = v(&[1.0, 2.0]);
        let m = FnMetric::new(2, |z| DMatrix::identity(2, 2) * (1.0 + z[0] * z[0]));
        let y = exp_map(&x, &TangentVector::zero(x.clone()), &m, &ExpOptions::default()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn exp_rejects_foreign_tangent() {
        let t = TangentVector::new(v(&[1.0, 0.0]), v(&[1.0, 0.0])).unwrap();
        let r = exp_map(&v(&[0.0, 0.0]), &t, &IdentityMetric::new(2), &ExpOptions::default());
        assert!(r.unwrap_err().is_config());
    }

    #[test]
    fn log_in_flat_space_is_difference() {
        let x = v(&[0.0, 1.0]);
        let y = v(&[2.0, -1.0]);
        let l = log_map(&x, &y, &IdentityMetric::new(2), &LogOptions::default()).unwrap();
        assert!((&l.tangent.components - (&y - &x)).norm() < 1e-8);
        assert!(l.converged);
    }

    #[test]
    fn log_of_same_point_is_zero() {
        let x = v(&[0.3, 0.3]);
        let l = log_map(&x, &x, &IdentityMetric::new(2), &LogOptions::default()).unwrap();
        assert_eq!(l.tangent.norm(), 0.0);
    }

    #[test]
    fn log_under_constant_metric_has_riemannian_norm() {
        let l = log_map(
            &v(&[0.0, 0.0]),
            &v(&[1.0, 0.0]),
            &ConstantMetric::diagonal(&[4.0, 1.0]),
            &LogOptions::default(),
        )
        .unwrap();
        assert!((l.tangent.norm() - 2.0).abs() < 1e-8);
        assert!(l.tangent.components[1].abs() < 1e-8);
        assert!(l.tangent.components[0] > 0.0);
    }

    #[test]
    fn log_inverts_exp_on_curved_metric() {
        let m = FnMetric::new(2, |z| {
            DMatrix::from_row_slice(2, 2, &[1.0 + z[1] * z[1], 0.3 * z[0], 0.3 * z[0], 1.0 + z[0] * z[0]])
        });
        let x = v(&[0.4, -0.3]);
        let vel = v(&[0.06, 0.05]);
        let y = exp_map(&x, &TangentVector::new(x.clone(), vel.clone()).unwrap(), &m, &ExpOptions::default())
            .unwrap();
        let l = log_map(&x, &y, &m, &LogOptions::default()).unwrap();
        assert!((&l.velocity - &vel).norm() <= 1e-3 * vel.norm());
    }
}
