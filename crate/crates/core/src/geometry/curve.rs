//! Curves as natural cubic splines through knots at uniform parameters.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::metric::MetricField;
use crate::error::{Error, Result};
use crate::linalg::sqrt_det_spd;

/// A natural cubic spline `c: [0,1] -> R^d` through `N_k >= 2` knots placed at
/// `t_i = i / (N_k - 1)`. The first and last knots are the endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    knots: Vec<DVector<f64>>,
    second: Vec<DVector<f64>>,
}

#[derive(Serialize, Deserialize)]
struct CurveJson {
    knots: Vec<Vec<f64>>,
    dim: usize,
}

/// Second derivatives of the natural spline through scalar values at uniform
/// spacing `h`. Row-wise generic over the knot type via closures would be
/// overkill; vectors are solved component-wise in one sweep.
fn natural_second_derivatives(knots: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let n = knots.len();
    let d = knots[0].len();
    let mut m = vec![DVector::zeros(d); n];
    if n < 3 {
        return m;
    }
    let h = 1.0 / (n - 1) as f64;
    let scale = 6.0 / (h * h);
    // Thomas algorithm for m_{i-1} + 4 m_i + m_{i+1} = rhs_i, i = 1..n-2
    let inner = n - 2;
    let mut c_prime = vec![0.0; inner];
    let mut d_prime: Vec<DVector<f64>> = Vec::with_capacity(inner);
    for i in 0..inner {
        let k = i + 1;
        let rhs = (&knots[k + 1] - &knots[k] * 2.0 + &knots[k - 1]) * scale;
        if i == 0 {
            c_prime[0] = 1.0 / 4.0;
            d_prime.push(rhs / 4.0);
        } else {
            let denom = 4.0 - c_prime[i - 1];
            c_prime[i] = 1.0 / denom;
            let v = (rhs - &d_prime[i - 1]) / denom;
            d_prime.push(v);
        }
    }
    for i in (0..inner).rev() {
        let v = if i + 1 < inner {
            &d_prime[i] - &m[i + 2] * c_prime[i]
        } else {
            d_prime[i].clone()
        };
        m[i + 1] = v;
    }
    m
}

impl Curve {
    pub fn new(knots: Vec<DVector<f64>>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::config("a curve needs at least 2 knots"));
        }
        let d = knots[0].len();
        if d == 0 {
            return Err(Error::config("curve dimension must be positive"));
        }
        if let Some(i) = knots.iter().position(|k| k.len() != d) {
            return Err(Error::config(format!(
                "knot {i} has dimension {}, expected {d}",
                knots[i].len()
            )));
        }
        if knots.iter().any(|k| k.iter().any(|v| !v.is_finite())) {
            return Err(Error::numerical("curve knots must be finite"));
        }
        let second = natural_second_derivatives(&knots);
        Ok(Curve { knots, second })
    }

    /// `n` equally spaced knots on the segment from `a` to `b`.
    pub fn straight_line(a: &DVector<f64>, b: &DVector<f64>, n: usize) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::config("endpoints have different dimensions"));
        }
        let n = n.max(2);
        let knots = (0..n)
            .map(|i| {
                if i == 0 {
                    a.clone()
                } else if i == n - 1 {
                    b.clone()
                } else {
                    let s = i as f64 / (n - 1) as f64;
                    a + (b - a) * s
                }
            })
            .collect();
        Curve::new(knots)
    }

    pub fn dim(&self) -> usize {
        self.knots[0].len()
    }

    pub fn num_knots(&self) -> usize {
        self.knots.len()
    }

    pub fn knots(&self) -> &[DVector<f64>] {
        &self.knots
    }

    pub fn start(&self) -> &DVector<f64> {
        &self.knots[0]
    }

    pub fn end(&self) -> &DVector<f64> {
        &self.knots[self.knots.len() - 1]
    }

    /// Parameter of knot `i`.
    pub fn knot_parameter(&self, i: usize) -> f64 {
        i as f64 / (self.knots.len() - 1) as f64
    }

    fn locate(&self, t: f64) -> (usize, f64, f64) {
        let segs = self.knots.len() - 1;
        let h = 1.0 / segs as f64;
        let s = t.clamp(0.0, 1.0) * segs as f64;
        let i = (s.floor() as usize).min(segs - 1);
        (i, s - i as f64, h)
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        let (i, u, h) = self.locate(t);
        let w = 1.0 - u;
        let c = h * h / 6.0;
        &self.knots[i] * w
            + &self.knots[i + 1] * u
            + &self.second[i] * (c * (w * w * w - w))
            + &self.second[i + 1] * (c * (u * u * u - u))
    }

    pub fn velocity(&self, t: f64) -> DVector<f64> {
        let (i, u, h) = self.locate(t);
        let w = 1.0 - u;
        (&self.knots[i + 1] - &self.knots[i]) / h
            + &self.second[i] * (-(3.0 * w * w - 1.0) * h / 6.0)
            + &self.second[i + 1] * ((3.0 * u * u - 1.0) * h / 6.0)
    }

    pub fn acceleration(&self, t: f64) -> DVector<f64> {
        let (i, u, _) = self.locate(t);
        &self.second[i] * (1.0 - u) + &self.second[i + 1] * u
    }

    /// A new curve with `n` knots sampled uniformly in `t` from this one.
    pub fn resample(&self, n: usize) -> Result<Curve> {
        let n = n.max(2);
        let knots = (0..n)
            .map(|i| {
                if i == 0 {
                    self.start().clone()
                } else if i == n - 1 {
                    self.end().clone()
                } else {
                    self.eval(i as f64 / (n - 1) as f64)
                }
            })
            .collect();
        Curve::new(knots)
    }

    /// Same endpoints with new interior knots.
    pub fn with_interior(&self, interior: &[DVector<f64>]) -> Result<Curve> {
        let mut knots = Vec::with_capacity(interior.len() + 2);
        knots.push(self.start().clone());
        knots.extend_from_slice(interior);
        knots.push(self.end().clone());
        Curve::new(knots)
    }

    pub fn to_json(&self) -> String {
        let json = CurveJson {
            knots: self.knots.iter().map(|k| k.iter().copied().collect()).collect(),
            dim: self.dim(),
        };
        serde_json::to_string_pretty(&json).expect("curve serializes")
    }

    pub fn from_json(text: &str) -> Result<Curve> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let json: CurveJson = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        if let Some(i) = json.knots.iter().position(|k| k.len() != json.dim) {
            return Err(Error::Parse {
                path: format!("knots[{i}]"),
                message: format!("expected {} coordinates", json.dim),
            });
        }
        Curve::new(json.knots.iter().map(|k| DVector::from_column_slice(k)).collect())
    }

    /// Rows `(t, z_1..z_d, sqrt_det_M)` at `samples` uniform parameters.
    pub fn sample_rows<M: MetricField + ?Sized>(
        &self,
        metric: &M,
        samples: usize,
    ) -> Result<Vec<Vec<f64>>> {
        let samples = samples.max(2);
        (0..samples)
            .map(|i| {
                let t = i as f64 / (samples - 1) as f64;
                let z = self.eval(t);
                let sd = sqrt_det_spd(&metric.eval(&z)?).map_err(|e| e.at_t(t))?;
                let mut row = Vec::with_capacity(z.len() + 2);
                row.push(t);
                row.extend(z.iter().copied());
                row.push(sd);
                Ok(row)
            })
            .collect()
    }

    pub fn write_csv<M: MetricField + ?Sized, W: Write>(
        &self,
        metric: &M,
        samples: usize,
        out: W,
    ) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim()).map(|i| format!("z_{i}")));
        header.push("sqrt_det_M".into());
        w.write_record(&header)?;
        for row in self.sample_rows(metric, samples)? {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv<M: MetricField + ?Sized>(
        &self,
        metric: &M,
        samples: usize,
        path: impl AsRef<Path>,
    ) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(metric, samples, std::io::BufWriter::new(file))
    }
}

/// Spline evaluation weights on a fixed parameter grid: position and velocity
/// at every grid point are linear in the knots,
/// `c(t_q) = sum_i value[q,i] k_i` and `c'(t_q) = sum_i deriv[q,i] k_i`.
#[derive(Debug, Clone)]
pub(crate) struct SplineBasis {
    pub value: DMatrix<f64>,
    pub deriv: DMatrix<f64>,
}

impl SplineBasis {
    pub fn new(num_knots: usize, grid: &[f64]) -> Self {
        let n = num_knots;
        let q = grid.len();
        let mut value = DMatrix::zeros(q, n);
        let mut deriv = DMatrix::zeros(q, n);
        for j in 0..n {
            let knots: Vec<DVector<f64>> = (0..n)
                .map(|i| DVector::from_element(1, if i == j { 1.0 } else { 0.0 }))
                .collect();
            let c = Curve::new(knots).expect("unit knots");
            for (qi, &t) in grid.iter().enumerate() {
                value[(qi, j)] = c.eval(t)[0];
                deriv[(qi, j)] = c.velocity(t)[0];
            }
        }
        SplineBasis { value, deriv }
    }
}
