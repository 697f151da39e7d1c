//! Length and energy of curves under a metric (trapezoidal quadrature).

use super::curve::Curve;
use super::metric::MetricField;
use crate::error::{Error, Result};

fn check(curve: &Curve, metric: &(impl MetricField + ?Sized), segments: usize) -> Result<()> {
    if segments == 0 {
        return Err(Error::config("quadrature needs at least one segment"));
    }
    if curve.dim() != metric.dim() {
        return Err(Error::config(format!(
            "dimension mismatch: curve has dimension {}, metric {}",
            curve.dim(),
            metric.dim()
        )));
    }
    Ok(())
}

/// `<c'(t), M(c(t)) c'(t)>` at the `segments + 1` uniform quadrature nodes.
pub fn squared_speeds<M: MetricField + ?Sized>(
    curve: &Curve,
    metric: &M,
    segments: usize,
) -> Result<Vec<f64>> {
    check(curve, metric, segments)?;
    (0..=segments)
        .map(|i| {
            let t = i as f64 / segments as f64;
            let q = metric
                .quad_form(&curve.eval(t), &curve.velocity(t))
                .map_err(|e| e.at_t(t))?;
            if q.is_finite() {
                Ok(q.max(0.0))
            } else {
                Err(Error::numerical("non-finite metric evaluation").at_t(t))
            }
        })
        .collect()
}

pub(crate) fn trapezoid(values: &[f64]) -> f64 {
    let n = values.len() - 1;
    let h = 1.0 / n as f64;
    let inner: f64 = values[1..n].iter().sum();
    h * (0.5 * (values[0] + values[n]) + inner)
}

/// Riemannian length `int_0^1 sqrt(<c', M(c) c'>) dt`.
pub fn curve_length<M: MetricField + ?Sized>(
    curve: &Curve,
    metric: &M,
    segments: usize,
) -> Result<f64> {
    let speeds: Vec<f64> = squared_speeds(curve, metric, segments)?
        .into_iter()
        .map(f64::sqrt)
        .collect();
    Ok(trapezoid(&speeds))
}

/// Energy `1/2 int_0^1 <c', M(c) c'> dt`.
pub fn curve_energy<M: MetricField + ?Sized>(
    curve: &Curve,
    metric: &M,
    segments: usize,
) -> Result<f64> {
    Ok(0.5 * trapezoid(&squared_speeds(curve, metric, segments)?))
}
