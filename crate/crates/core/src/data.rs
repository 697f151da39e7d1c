//! Point sets with optional labels, CSV input/output and the synthetic
//! datasets used throughout the tests.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    SyntheticParaboloid,
    SyntheticSine,
    File,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// One point per row.
    pub points: DMatrix<f64>,
    pub labels: Option<Vec<usize>>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(points: DMatrix<f64>, labels: Option<Vec<usize>>, provenance: Provenance) -> Result<Self> {
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("dataset contains non-finite entries"));
        }
        if let Some(l) = &labels {
            if l.len() != points.nrows() {
                return Err(Error::config(format!(
                    "{} labels for {} points",
                    l.len(),
                    points.nrows()
                )));
            }
        }
        Ok(Dataset {
            points,
            labels,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn point(&self, i: usize) -> DVector<f64> {
        self.points.row(i).transpose()
    }

    pub fn point_vec(&self) -> Vec<DVector<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |m| m + 1)
    }

    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::config("dataset has no labels but the operation requires them"))
    }

    /// Reads a CSV with a header row. With `labeled`, the final column holds
    /// nonnegative integer class labels.
    pub fn read_csv<R: Read>(reader: R, labeled: bool) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut labels = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let mut vals: Vec<&str> = rec.iter().collect();
            if labeled {
                let raw = vals.pop().ok_or_else(|| Error::Parse {
                    path: format!("row {}", line + 1),
                    message: "empty row".into(),
                })?;
                let lab: usize = raw.trim().parse().map_err(|_| Error::Parse {
                    path: format!("row {}, label", line + 1),
                    message: format!("'{raw}' is not a nonnegative integer"),
                })?;
                labels.push(lab);
            }
            let parsed = vals
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    s.trim().parse::<f64>().map_err(|_| Error::Parse {
                        path: format!("row {}, column {}", line + 1, c + 1),
                        message: format!("'{s}' is not a number"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(parsed);
        }
        if rows.is_empty() {
            return Err(Error::config("dataset file has no rows"));
        }
        let points = crate::linalg::matrix_from_rows(&rows)?;
        Dataset::new(points, labeled.then_some(labels), Provenance::File)
    }

    pub fn load_csv(path: &Path, labeled: bool) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Dataset::read_csv(file, labeled)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.dim()).map(|i| format!("x_{i}")).collect();
        if self.labels.is_some() {
            header.push("label".into());
        }
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.points.row(i).iter().map(|v| v.to_string()).collect();
            if let Some(l) = &self.labels {
                rec.push(l[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Ground-truth latent codes together with the generated data.
#[derive(Debug, Clone)]
pub struct SyntheticParaboloid {
    pub data: Dataset,
    pub latent: DMatrix<f64>,
}

/// Centers of the paraboloid mixture: six on a circle of radius 3, one at
/// the origin.
pub fn paraboloid_centers() -> Vec<[f64; 2]> {
    let mut c: Vec<[f64; 2]> = (0..6)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / 6.0;
            [3.0 * a.cos(), 3.0 * a.sin()]
        })
        .collect();
    c.push([0.0, 0.0]);
    c
}

/// `x = [z1, z2, 0.3 (z1^2 + z2^2) + e]` with `z` from seven Gaussian blobs of
/// standard deviation 0.2 and `e ~ N(0, noise^2)`. Labels are blob indices.
pub fn make_synthetic_paraboloid_with(n_per_component: usize, noise: f64, seed: u64) -> Result<SyntheticParaboloid> {
    if n_per_component == 0 {
        return Err(Error::config("need at least one point per component"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blob = Normal::new(0.0, 0.2).expect("valid");
    let eps = Normal::new(0.0, noise.max(0.0)).map_err(|e| Error::config(e.to_string()))?;
    let centers = paraboloid_centers();
    let n = n_per_component * centers.len();
    let mut x = DMatrix::zeros(n, 3);
    let mut z = DMatrix::zeros(n, 2);
    let mut labels = Vec::with_capacity(n);
    for (k, c) in centers.iter().enumerate() {
        for i in 0..n_per_component {
            let r = k * n_per_component + i;
            let z1 = c[0] + blob.sample(&mut rng);
            let z2 = c[1] + blob.sample(&mut rng);
            let e = if noise > 0.0 { eps.sample(&mut rng) } else { 0.0 };
            z[(r, 0)] = z1;
            z[(r, 1)] = z2;
            x[(r, 0)] = z1;
            x[(r, 1)] = z2;
            x[(r, 2)] = 0.3 * (z1 * z1 + z2 * z2) + e;
            labels.push(k);
        }
    }
    Ok(SyntheticParaboloid {
        data: Dataset::new(x, Some(labels), Provenance::SyntheticParaboloid)?,
        latent: z,
    })
}

pub fn make_synthetic_paraboloid(n_per_component: usize, seed: u64) -> Result<SyntheticParaboloid> {
    make_synthetic_paraboloid_with(n_per_component, 0.1, seed)
}

/// Rectangle for the `(x1, x2)` coordinates of the sine sheet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x1: [f64; 2],
    pub x2: [f64; 2],
}

impl Default for Rect {
    fn default() -> Self {
        Rect {
            x1: [-PI, PI],
            x2: [-1.0, 1.0],
        }
    }
}

/// `x = [x1, x2, sin(x1) + e]`, `(x1, x2)` uniform over `rect`,
/// `e ~ N(0, noise^2)`.
pub fn make_synthetic_sine(n: usize, noise: f64, rect: Rect, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::config("need at least one point"));
    }
    if !(noise >= 0.0) {
        return Err(Error::config("noise must be nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = Normal::new(0.0, noise).map_err(|e| Error::config(e.to_string()))?;
    let mut x = DMatrix::zeros(n, 3);
    for i in 0..n {
        let x1 = rng.random_range(rect.x1[0]..=rect.x1[1]);
        let x2 = rng.random_range(rect.x2[0]..=rect.x2[1]);
        let e = if noise > 0.0 { eps.sample(&mut rng) } else { 0.0 };
        x[(i, 0)] = x1;
        x[(i, 1)] = x2;
        x[(i, 2)] = x1.sin() + e;
    }
    Dataset::new(x, None, Provenance::SyntheticSine)
}
