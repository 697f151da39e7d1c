//! Geodesic boundary-value problems by discretized energy descent.
//!
//! The unknowns are the interior knots of a natural cubic spline; the
//! endpoints stay fixed. Each iteration takes a preconditioned gradient step
//! on the trapezoidal energy, with an Armijo backtracking line search.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::curve::{Curve, SplineBasis};
use super::functional::curve_length;
use super::metric::{derivative_slice, metric_derivative, MetricField};
use crate::error::{Error, Result};
use crate::graph::{graph_shortest_path, spline_through, LatentGraph};

#[derive(Debug, Clone)]
pub struct BvpOptions {
    /// Number of spline knots including both endpoints.
    pub knots: usize,
    /// Quadrature segments; `None` means the smallest multiple of
    /// `knots - 1` that is at least `10 * knots`, so the grid contains every
    /// knot.
    pub segments: Option<usize>,
    /// Stop when one iteration lowers the energy by less than this fraction.
    pub tol: f64,
    pub max_iters: usize,
    /// Sufficient-decrease constant of the line search.
    pub armijo_c: f64,
    /// Scale the gradient by the inverse of the metric-weighted spline
    /// stiffness (the Gauss-Newton part of the energy Hessian).
    pub precondition: bool,
    /// Initialize from the shortest path on this graph instead of the chord.
    pub graph_init: Option<Arc<LatentGraph>>,
}

impl Default for BvpOptions {
    fn default() -> Self {
        BvpOptions {
            knots: 16,
            segments: None,
            tol: 1e-6,
            max_iters: 2000,
            armijo_c: 1e-4,
            precondition: true,
            graph_init: None,
        }
    }
}

impl BvpOptions {
    pub fn segments(&self) -> usize {
        self.segments.unwrap_or_else(|| {
            let n = self.knots.max(2);
            (10 * n).div_ceil(n - 1) * (n - 1)
        })
    }
}

#[derive(Debug, Clone)]
pub struct GeodesicSolution {
    pub curve: Curve,
    pub length: f64,
    pub energy: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Relative energy decrease of the last iteration.
    pub residual: f64,
}

/// Approximate geodesic between `a` and `b`.
///
/// Running out of iterations is not an error: the best curve is returned with
/// `converged = false`.
pub fn solve_geodesic_bvp<M: MetricField + ?Sized>(
    a: &DVector<f64>,
    b: &DVector<f64>,
    metric: &M,
    opts: &BvpOptions,
) -> Result<GeodesicSolution> {
    if a.len() != metric.dim() || b.len() != metric.dim() {
        return Err(Error::config(format!(
            "dimension mismatch: endpoints {}/{}, metric {}",
            a.len(),
            b.len(),
            metric.dim()
        )));
    }
    if opts.knots < 2 {
        return Err(Error::config("a geodesic needs at least 2 knots"));
    }
    if a == b {
        let curve = Curve::new(vec![a.clone(); opts.knots])?;
        return Ok(GeodesicSolution {
            curve,
            length: 0.0,
            energy: 0.0,
            converged: true,
            iterations: 0,
            residual: 0.0,
        });
    }
    let init = match &opts.graph_init {
        Some(graph) => {
            let path = graph_shortest_path(graph, a, b, metric)?;
            spline_through(&path.points)?.resample(opts.knots)?
        }
        None => Curve::straight_line(a, b, opts.knots)?,
    };
    solve_geodesic_bvp_from(&init, metric, opts)
}

struct Discretization {
    basis: SplineBasis,
    weights: Vec<f64>,
    n: usize,
    d: usize,
}

struct EnergyState {
    energy: f64,
    positions: DMatrix<f64>,
    velocities: DMatrix<f64>,
    metrics: Vec<DMatrix<f64>>,
}

impl Discretization {
    fn new(n: usize, d: usize, segments: usize) -> Self {
        let grid: Vec<f64> = (0..=segments).map(|q| q as f64 / segments as f64).collect();
        let h = 1.0 / segments as f64;
        let mut weights = vec![h; segments + 1];
        weights[0] *= 0.5;
        weights[segments] *= 0.5;
        Discretization {
            basis: SplineBasis::new(n, &grid),
            weights,
            n,
            d,
        }
    }

    fn energy_only<M: MetricField + ?Sized>(&self, knots: &DMatrix<f64>, metric: &M) -> Result<f64> {
        let pos = &self.basis.value * knots;
        let vel = &self.basis.deriv * knots;
        let mut e = 0.0;
        for (q, w) in self.weights.iter().enumerate() {
            let c = pos.row(q).transpose();
            let v = vel.row(q).transpose();
            e += w * metric.quad_form(&c, &v)?;
        }
        let e = 0.5 * e;
        if e.is_finite() {
            Ok(e)
        } else {
            Err(Error::numerical("energy is not finite"))
        }
    }

    fn state<M: MetricField + ?Sized>(&self, knots: &DMatrix<f64>, metric: &M) -> Result<EnergyState> {
        let positions = &self.basis.value * knots;
        let velocities = &self.basis.deriv * knots;
        let mut metrics = Vec::with_capacity(self.weights.len());
        let mut e = 0.0;
        for (q, w) in self.weights.iter().enumerate() {
            let c = positions.row(q).transpose();
            let v = velocities.row(q).transpose();
            let m = metric.eval(&c)?;
            e += w * v.dot(&(&m * &v));
            metrics.push(m);
        }
        let energy = 0.5 * e;
        if !energy.is_finite() {
            return Err(Error::numerical("energy is not finite"));
        }
        Ok(EnergyState {
            energy,
            positions,
            velocities,
            metrics,
        })
    }

    /// Gradient with respect to the interior knots, flattened knot-major.
    fn gradient<M: MetricField + ?Sized>(&self, st: &EnergyState, metric: &M) -> Result<DVector<f64>> {
        let (n, d) = (self.n, self.d);
        let mut grad = DVector::zeros((n - 2) * d);
        for (q, w) in self.weights.iter().enumerate() {
            let c = st.positions.row(q).transpose();
            let v = st.velocities.row(q).transpose();
            let mv = &st.metrics[q] * &v;
            // d/dc of <v, M(c) v>
            let dm = metric_derivative(metric, &c)?;
            let dq = DVector::from_fn(d, |l, _| v.dot(&(derivative_slice(&dm, l) * &v)));
            for i in 1..n - 1 {
                let bd = self.basis.deriv[(q, i)];
                let bv = self.basis.value[(q, i)];
                if bd == 0.0 && bv == 0.0 {
                    continue;
                }
                let mut block = grad.rows_mut((i - 1) * d, d);
                block += (&mv * bd + &dq * (0.5 * bv)) * *w;
            }
        }
        Ok(grad)
    }

    /// `sum_q w_q (B'_q B'_q^T) (x) M_q` on the interior knots.
    fn preconditioner(&self, st: &EnergyState) -> DMatrix<f64> {
        let (n, d) = (self.n, self.d);
        let m = n - 2;
        let mut h = DMatrix::zeros(m * d, m * d);
        for (q, w) in self.weights.iter().enumerate() {
            for i in 1..n - 1 {
                let bi = self.basis.deriv[(q, i)];
                if bi == 0.0 {
                    continue;
                }
                for j in 1..n - 1 {
                    let bj = self.basis.deriv[(q, j)];
                    if bj == 0.0 {
                        continue;
                    }
                    let mut block = h.view_mut(((i - 1) * d, (j - 1) * d), (d, d));
                    block += &st.metrics[q] * (w * bi * bj);
                }
            }
        }
        h
    }
}

fn knots_matrix(curve: &Curve) -> DMatrix<f64> {
    let k = curve.knots();
    DMatrix::from_fn(k.len(), curve.dim(), |i, j| k[i][j])
}

fn curve_from_matrix(m: &DMatrix<f64>, template: &Curve) -> Result<Curve> {
    let n = m.nrows();
    let interior: Vec<DVector<f64>> = (1..n - 1).map(|i| m.row(i).transpose()).collect();
    template.with_interior(&interior)
}

fn apply_step(knots: &DMatrix<f64>, dir: &DVector<f64>, step: f64, d: usize) -> DMatrix<f64> {
    let mut out = knots.clone();
    for i in 1..knots.nrows() - 1 {
        for l in 0..d {
            out[(i, l)] -= step * dir[(i - 1) * d + l];
        }
    }
    out
}

/// Energy descent starting from an arbitrary initial curve (its endpoints are
/// kept).
pub fn solve_geodesic_bvp_from<M: MetricField + ?Sized>(
    init: &Curve,
    metric: &M,
    opts: &BvpOptions,
) -> Result<GeodesicSolution> {
    if init.dim() != metric.dim() {
        return Err(Error::config(format!(
            "dimension mismatch: curve {}, metric {}",
            init.dim(),
            metric.dim()
        )));
    }
    let segments = opts.segments();
    let n = init.num_knots();
    let d = init.dim();
    let mut knots = knots_matrix(init);
    let mut iterations = 0;
    let mut converged = false;
    let mut residual = f64::INFINITY;

    if n > 2 {
        let disc = Discretization::new(n, d, segments);
        let mut st = disc.state(&knots, metric)?;
        while iterations < opts.max_iters {
            iterations += 1;
            let grad = disc.gradient(&st, metric)?;
            if grad.amax() == 0.0 || st.energy == 0.0 {
                converged = true;
                residual = 0.0;
                break;
            }
            let mut dir = if opts.precondition {
                disc.preconditioner(&st)
                    .cholesky()
                    .map(|ch| ch.solve(&grad))
                    .unwrap_or_else(|| grad.clone())
            } else {
                grad.clone()
            };
            let mut slope = grad.dot(&dir);
            if !(slope > 0.0) || !dir.iter().all(|v| v.is_finite()) {
                dir = grad.clone();
                slope = grad.dot(&grad);
            }
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let trial = apply_step(&knots, &dir, step, d);
                let e = match disc.energy_only(&trial, metric) {
                    Ok(e) => e,
                    Err(Error::NumericalDomain { .. }) => {
                        step *= 0.5;
                        continue;
                    }
                    Err(other) => return Err(other),
                };
                if e <= st.energy - opts.armijo_c * step * slope {
                    accepted = Some(trial);
                    break;
                }
                step *= 0.5;
            }
            let Some(trial) = accepted else {
                // no descent left at working precision
                converged = true;
                residual = 0.0;
                break;
            };
            let new_state = disc.state(&trial, metric)?;
            residual = (st.energy - new_state.energy) / st.energy;
            knots = trial;
            st = new_state;
            if residual < opts.tol {
                converged = true;
                break;
            }
        }
    } else {
        converged = true;
        residual = 0.0;
    }

    let curve = curve_from_matrix(&knots, init)?;
    let disc_energy = if n > 2 {
        Discretization::new(n, d, segments).energy_only(&knots, metric)?
    } else {
        super::functional::curve_energy(&curve, metric, segments)?
    };
    let length = curve_length(&curve, metric, segments)?;
    Ok(GeodesicSolution {
        curve,
        length,
        energy: disc_energy,
        converged,
        iterations,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::functional::squared_speeds;
    use crate::geometry::metric::{ConstantMetric, FnMetric, IdentityMetric};

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn max_chord_deviation(sol: &GeodesicSolution, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let dir = (b - a).normalize();
        sol.curve
            .knots()
            .iter()
            .map(|k| {
                let r = k - a;
                (&r - &dir * r.dot(&dir)).norm()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn flat_space_gives_the_chord() {
        let a = v(&[0.0, 0.0]);
        let b = v(&[1.0, 2.0]);
        let sol = solve_geodesic_bvp(&a, &b, &IdentityMetric::new(2), &BvpOptions::default()).unwrap();
        assert!(sol.converged);
        assert!(max_chord_deviation(&sol, &a, &b) < 1e-6);
        assert!((sol.length - 5f64.sqrt()).abs() < 1e-9, "{sol:?}");
    }

    #[test]
    fn coincident_endpoints_give_constant_curve() {
        let a = v(&[0.3, -0.2]);
        let sol = solve_geodesic_bvp(&a, &a, &IdentityMetric::new(2), &BvpOptions::default()).unwrap();
        assert_eq!(sol.length, 0.0);
        assert!(sol.curve.knots().iter().all(|k| k == &a));
    }

    /// Conformal metric that is expensive near the origin: the geodesic
    /// between (-1, 0) and (1, 0) must bend away from the chord.
    fn bump_metric() -> FnMetric {
        FnMetric::new(2, |z| DMatrix::identity(2, 2) * (1.0 + 10.0 * (-4.0 * z.norm_squared()).exp()))
    }

    #[test]
    fn geodesic_beats_chord_and_respects_invariants() {
        let m = bump_metric();
        let a = v(&[-1.0, 0.05]);
        let b = v(&[1.0, 0.05]);
        let opts = BvpOptions::default();
        let chord = Curve::straight_line(&a, &b, 2).unwrap();
        let chord_len = curve_length(&chord, &m, opts.segments()).unwrap();
        let sol = solve_geodesic_bvp(&a, &b, &m, &opts).unwrap();
        assert!(sol.converged, "{sol:?}");
        assert!(sol.length < chord_len);
        assert!(sol.energy >= 0.5 * sol.length * sol.length - 1e-6 * sol.energy);
        let recomputed = curve_length(&sol.curve, &m, opts.segments()).unwrap();
        assert!((recomputed - sol.length).abs() <= 1e-10 * sol.length);
        let speeds: Vec<f64> = squared_speeds(&sol.curve, &m, 400)
            .unwrap()
            .into_iter()
            .map(f64::sqrt)
            .collect();
        let mean = speeds.iter().sum::<f64>() / speeds.len() as f64;
        let var = speeds.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / speeds.len() as f64;
        assert!(var.sqrt() / mean < 5e-2, "speed cv {}", var.sqrt() / mean);
    }

    #[test]
    fn constant_metric_geodesic_is_straight() {
        let m = ConstantMetric::diagonal(&[4.0, 1.0]);
        let a = v(&[0.0, 0.0]);
        let b = v(&[1.0, 0.0]);
        let sol = solve_geodesic_bvp(&a, &b, &m, &BvpOptions::default()).unwrap();
        assert!((sol.length - 2.0).abs() < 1e-8);
    }

    #[test]
    fn max_iters_exhaustion_is_flagged_not_an_error() {
        let m = bump_metric();
        let opts = BvpOptions {
            max_iters: 1,
            tol: 0.0,
            ..BvpOptions::default()
        };
        let sol = solve_geodesic_bvp(&v(&[-1.0, 0.05]), &v(&[1.0, 0.05]), &m, &opts).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 1);
    }

    #[test]
    fn unpreconditioned_descent_agrees() {
        let m = bump_metric();
        let a = v(&[-1.0, 0.05]);
        let b = v(&[1.0, 0.05]);
        let pre = solve_geodesic_bvp(&a, &b, &m, &BvpOptions::default()).unwrap();
        let plain = solve_geodesic_bvp(
            &a,
            &b,
            &m,
            &BvpOptions {
                precondition: false,
                tol: 1e-9,
                max_iters: 20000,
                ..BvpOptions::default()
            },
        )
        .unwrap();
        assert!((pre.length - plain.length).abs() / pre.length < 1e-3, "{} {}", pre.length, plain.length);
    }

    #[test]
    fn non_finite_metric_is_an_error() {
        let m = FnMetric::new(2, |_| DMatrix::from_element(2, 2, f64::NAN));
        let r = solve_geodesic_bvp(&v(&[0.0, 0.0]), &v(&[1.0, 0.0]), &m, &BvpOptions::default());
        assert!(matches!(r, Err(Error::NumericalDomain { .. })));
    }
}
