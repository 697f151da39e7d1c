//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative diagonal shift added to every metric evaluation.
pub const SPD_JITTER: f64 = 1e-10;

/// Above this dimension determinants are accumulated in the log domain.
const LOG_DET_DIM: usize = 20;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `(M + M^T)/2 + 1e-10 * trace(M)/d * I`.
pub fn regularize_spd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = symmetrize(m);
    let d = s.nrows();
    if d == 0 {
        return s;
    }
    let shift = SPD_JITTER * s.trace() / d as f64;
    if shift > 0.0 {
        for i in 0..d {
            s[(i, i)] += shift;
        }
    }
    s
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// `sqrt(det M)` of a symmetric positive (semi)definite matrix through its
/// eigenvalues. Negative round-off eigenvalues are clamped at zero.
pub fn sqrt_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    if !all_finite(m) {
        return Err(Error::numerical("metric has non-finite entries"));
    }
    let ev = sym_eigenvalues(m);
    let value = if ev.len() > LOG_DET_DIM {
        if ev.iter().any(|&l| l <= 0.0) {
            0.0
        } else {
            (0.5 * ev.iter().map(|l| l.ln()).sum::<f64>()).exp()
        }
    } else {
        ev.iter().map(|&l| l.max(0.0)).product::<f64>().sqrt()
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::numerical(format!("non-finite determinant ({value})")))
    }
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(Error::config(format!(
            "ragged matrix: row {i} has {} entries, expected {ncols}",
            r.len()
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn points_from_rows(rows: &[Vec<f64>]) -> Vec<DVector<f64>> {
    rows.iter().map(|r| DVector::from_column_slice(r)).collect()
}

pub fn row(m: &DMatrix<f64>, i: usize) -> DVector<f64> {
    m.row(i).transpose()
}

/// `||a - b||_F / ||b||_F`, with the absolute gap when `b` vanishes.
pub fn rel_frobenius_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let denom = b.norm();
    let gap = (a - b).norm();
    if denom > 0.0 {
        gap / denom
    } else {
        gap
    }
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}
