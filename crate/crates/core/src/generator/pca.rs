use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Leading principal directions of a point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    /// `D x d`, orthonormal columns.
    pub components: DMatrix<f64>,
    /// Descending, nonnegative.
    pub eigenvalues: DVector<f64>,
    pub mean: DVector<f64>,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.components.ncols()
    }

    /// The `d' x D` projection onto the first `d'` directions.
    pub fn projection(&self, d: usize) -> Result<DMatrix<f64>> {
        if d == 0 || d > self.dim() {
            return Err(Error::config(format!("projection rank {d} outside 1..={}", self.dim())));
        }
        Ok(self.components.columns(0, d).transpose())
    }

    pub fn encode(&self, x: &DVector<f64>) -> DVector<f64> {
        self.components.transpose() * (x - &self.mean)
    }
}

pub fn fit_pca(data: &Dataset, d: usize) -> Result<PcaModel> {
    fit_pca_points(&data.points, d)
}

/// PCA of the rows of `points` with the `N - 1` normalized covariance.
pub fn fit_pca_points(points: &DMatrix<f64>, d: usize) -> Result<PcaModel> {
    let (n, dim) = points.shape();
    if n < 2 {
        return Err(Error::config("PCA needs at least two points"));
    }
    if d == 0 || d > (n - 1).min(dim) {
        return Err(Error::config(format!(
            "PCA rank {d} must lie in 1..={} for {n} points in dimension {dim}",
            (n - 1).min(dim)
        )));
    }
    let mean = points.row_mean().transpose();
    let mut centered = points.clone();
    for mut r in centered.row_iter_mut() {
        r -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut components = DMatrix::zeros(dim, d);
    let mut eigenvalues = DVector::zeros(d);
    for (j, &i) in order.iter().take(d).enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        // sign convention: largest-magnitude entry positive
        if v[v.iamax()] < 0.0 {
            v = -v;
        }
        components.set_column(j, &v);
        eigenvalues[j] = eig.eigenvalues[i].max(0.0);
    }
    Ok(PcaModel {
        components,
        eigenvalues,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn collinear_data_has_one_direction() {
        let pts = DMatrix::from_fn(20, 3, |i, _| i as f64 * 0.3 - 2.0);
        let p = fit_pca_points(&pts, 3).unwrap();
        let e = 1.0 / 3f64.sqrt();
        for k in 0..3 {
            assert!((p.components[(k, 0)] - e).abs() < 1e-12);
        }
        assert!(p.eigenvalues[1] <= 1e-12 && p.eigenvalues[2] <= 1e-12);
    }

    #[test]
    fn full_rank_reconstructs_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = DMatrix::from_fn(50, 4, |_, j| rng.random_range(-1.0..1.0) * (j + 1) as f64);
        let p = fit_pca_points(&pts, 4).unwrap();
        let mean = pts.row_mean();
        let mut c = pts.clone();
        for mut r in c.row_iter_mut() {
            r -= &mean;
        }
        let cov = c.transpose() * &c / 49.0;
        let rec = &p.components * DMatrix::from_diagonal(&p.eigenvalues) * p.components.transpose();
        assert!((rec - cov).norm() < 1e-10);
        let gram = p.components.transpose() * &p.components;
        assert!((gram - DMatrix::identity(4, 4)).amax() < 1e-10);
        assert!(p.eigenvalues.as_slice().windows(2).all(|w| w[0] >= w[1]));
        for j in 0..4 {
            let m: f64 = pts.column(j).iter().sum::<f64>() / 50.0;
            assert!((p.mean[j] - m).abs() < 1e-14);
        }
    }

    #[test]
    fn rank_too_large() {
        let pts = DMatrix::from_element(3, 5, 1.0);
        assert!(fit_pca_points(&pts, 3).unwrap_err().is_config());
    }
}
