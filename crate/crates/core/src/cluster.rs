//! k-means clustering and nonnegative least squares.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::sym_eigenvalues;

pub const KMEANS_SEED: u64 = 0x5eed;
pub const KMEANS_ITERS: usize = 50;

#[derive(Debug, Clone)]
pub struct KMeans {
    pub centers: Vec<DVector<f64>>,
    /// Cluster index of every input point.
    pub assignment: Vec<usize>,
}

impl KMeans {
    pub fn members(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter(move |(_, a)| **a == k)
            .map(|(i, _)| i)
    }
}

fn nearest(centers: &[DVector<f64>], x: &DVector<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = (x - c).norm_squared();
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Lloyd iterations from a k-means++ start.
///
/// A cluster that loses all its points is re-seeded on the point farthest
/// from its current center.
pub fn kmeans(points: &[DVector<f64>], k: usize, seed: u64, iters: usize) -> Result<KMeans> {
    let n = points.len();
    if k == 0 {
        return Err(Error::config("k-means needs at least one cluster"));
    }
    if k > n {
        return Err(Error::config(format!("k-means with {k} clusters on {n} points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| (p - &centers[0]).norm_squared()).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if u < *w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min((p - &centers[centers.len() - 1]).norm_squared());
        }
    }

    let mut assignment = vec![0; n];
    for _ in 0..iters.max(1) {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let a = nearest(&centers, p).0;
            if a != assignment[i] {
                assignment[i] = a;
                changed = true;
            }
        }
        let dim = points[0].len();
        let mut sums = vec![DVector::zeros(dim); k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            sums[assignment[i]] += p;
            counts[assignment[i]] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = &sums[c] / counts[c] as f64;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = (&points[a] - &centers[assignment[a]]).norm_squared();
                        let db = (&points[b] - &centers[assignment[b]]).norm_squared();
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .unwrap_or(0);
                centers[c] = points[far].clone();
                assignment[far] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    for (i, p) in points.iter().enumerate() {
        assignment[i] = nearest(&centers, p).0;
    }
    Ok(KMeans { centers, assignment })
}

/// `argmin_{w >= 0} |A w - y|^2 / n` by accelerated projected gradient.
pub fn nnls(a: &DMatrix<f64>, y: &DVector<f64>, iters: usize) -> DVector<f64> {
    let k = a.ncols();
    let ata = a.transpose() * a;
    let aty = a.transpose() * y;
    let lip = sym_eigenvalues(&ata).iter().cloned().fold(0.0, f64::max);
    let mut w = DVector::zeros(k);
    if lip <= 0.0 {
        return w;
    }
    let step = 1.0 / lip;
    let mut momentum = w.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let grad = &ata * &momentum - &aty;
        let next = (&momentum - grad * step).map(|v| v.max(0.0));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        momentum = &next + (&next - &w) * ((t - 1.0) / t_next);
        w = next;
        t = t_next;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn separates_well_separated_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let truth = [[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]];
        let mut pts = Vec::new();
        for c in truth.iter() {
            for _ in 0..50 {
                pts.push(DVector::from_vec(vec![c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)]));
            }
        }
        let km = kmeans(&pts, 3, KMEANS_SEED, KMEANS_ITERS).unwrap();
        for c in truth.iter() {
            let t = DVector::from_row_slice(c);
            let best = km.centers.iter().map(|k| (k - &t).norm()).fold(f64::INFINITY, f64::min);
            assert!(best < 0.1);
        }
        for block in 0..3 {
            let a = km.assignment[block * 50];
            assert!(km.assignment[block * 50..(block + 1) * 50].iter().all(|x| *x == a));
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let pts: Vec<_> = (0..40).map(|i| DVector::from_vec(vec![(i as f64).sin(), (i as f64 * 0.7).cos()])).collect();
        let a = kmeans(&pts, 5, 3, 50).unwrap();
        let b = kmeans(&pts, 5, 3, 50).unwrap();
        assert_eq!(a.centers, b.centers);
        assert_eq!(a.assignment, b.assignment);
    }

    #[test]
    fn every_cluster_is_nonempty_even_with_duplicates() {
        let mut pts = vec![DVector::from_vec(vec![0.0]); 10];
        pts.push(DVector::from_vec(vec![1.0]));
        pts.push(DVector::from_vec(vec![2.0]));
        let km = kmeans(&pts, 3, 0, 50).unwrap();
        for c in 0..3 {
            assert!(km.members(c).count() > 0);
        }
    }

    #[test]
    fn too_many_clusters_is_config_error() {
        let pts = vec![DVector::from_vec(vec![0.0]); 2];
        assert!(kmeans(&pts, 3, 0, 50).unwrap_err().is_config());
    }

    #[test]
    fn nnls_recovers_nonnegative_solution() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0]);
        let w = DVector::from_vec(vec![0.5, 2.0]);
        let y = &a * &w;
        let got = nnls(&a, &y, 2000);
        assert!((got - w).norm() < 1e-8);
    }

    #[test]
    fn nnls_clamps_negative_directions() {
        let a = DMatrix::identity(2, 2);
        let y = DVector::from_vec(vec![1.0, -3.0]);
        let got = nnls(&a, &y, 500);
        assert!((got[0] - 1.0).abs() < 1e-12);
        assert_eq!(got[1], 0.0);
    }
}
