//! Local linear discriminant metrics and their smooth convex combination.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::geometry::MetricField;
use crate::linalg::{sym_eigenvalues, symmetrize};

/// Kernel values below this are treated as underflow.
pub const KERNEL_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone)]
pub struct LocalLdaOptions {
    /// Number of base points drawn from the data.
    pub num_base: usize,
    /// Neighbourhood size.
    pub k: usize,
    pub epsilon: f64,
    pub iters: usize,
    /// Bandwidth of the Gaussian kernels blending the base metrics.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for LocalLdaOptions {
    fn default() -> Self {
        LocalLdaOptions {
            num_base: 10,
            k: 50,
            epsilon: 1e-3,
            iters: 20,
            sigma: 1.0,
            seed: 0,
        }
    }
}

/// Everything computed in one update of a base metric.
#[derive(Debug, Clone)]
pub struct LdaStep {
    /// Neighbour indices in increasing distance under the previous metric.
    pub knn: Vec<usize>,
    /// Distances of the neighbours under the previous metric.
    pub distances: Vec<f64>,
    pub sigma: f64,
    /// Tri-cube weight of each neighbour.
    pub weights: Vec<f64>,
    /// Weighted class means, `None` for classes without weight.
    pub class_means: Vec<Option<DVector<f64>>>,
    pub priors: Vec<f64>,
    pub mean: DVector<f64>,
    /// Diagonal of the within-class scatter.
    pub within: DVector<f64>,
    pub between: DMatrix<f64>,
    pub metric: DMatrix<f64>,
}

fn tricube(r: f64) -> f64 {
    if r < 1.0 {
        (1.0 - r * r * r).powi(3)
    } else {
        0.0
    }
}

/// One local LDA update around `base` using the neighbourhood found under
/// `current`.
pub fn local_lda_step(
    points: &[DVector<f64>],
    labels: &[usize],
    base: &DVector<f64>,
    current: &DMatrix<f64>,
    k: usize,
    epsilon: f64,
) -> Result<LdaStep> {
    let n = points.len();
    if n == 0 || labels.len() != n {
        return Err(Error::config("local LDA needs one label per point"));
    }
    if k == 0 || k > n {
        return Err(Error::config(format!("local LDA neighbourhood K = {k} with {n} points")));
    }
    let dim = base.len();
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut order: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let diff = p - base;
            (diff.dot(&(current * &diff)).max(0.0).sqrt(), i)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.truncate(k);
    let knn: Vec<usize> = order.iter().map(|o| o.1).collect();
    let distances: Vec<f64> = order.iter().map(|o| o.0).collect();
    let sigma = distances.iter().copied().fold(0.0, f64::max);
    let weights: Vec<f64> = if sigma > 0.0 {
        distances.iter().map(|d| tricube(d / sigma)).collect()
    } else {
        vec![1.0; k]
    };
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::numerical("local LDA neighbourhood has zero total weight"));
    }

    let mut class_weight = vec![0.0; classes];
    let mut class_sum = vec![DVector::zeros(dim); classes];
    for (&i, &w) in knn.iter().zip(&weights) {
        class_weight[labels[i]] += w;
        class_sum[labels[i]] += &points[i] * w;
    }
    let class_means: Vec<Option<DVector<f64>>> = (0..classes)
        .map(|c| (class_weight[c] > 0.0).then(|| &class_sum[c] / class_weight[c]))
        .collect();
    let priors: Vec<f64> = class_weight.iter().map(|w| w / total).collect();
    let mut mean = DVector::zeros(dim);
    for c in 0..classes {
        if let Some(m) = &class_means[c] {
            mean += m * priors[c];
        }
    }

    let mut within = DVector::zeros(dim);
    for (&i, &w) in knn.iter().zip(&weights) {
        if let Some(m) = &class_means[labels[i]] {
            let diff = &points[i] - m;
            within += diff.map(|v| v * v) * w;
        }
    }
    within /= total;
    let floor = 1e-12 * (within.sum() / dim as f64).max(1.0);
    let within = within.map(|v| v.max(floor));

    let mut between = DMatrix::zeros(dim, dim);
    for c in 0..classes {
        if let Some(m) = &class_means[c] {
            let diff = m - &mean;
            between += &diff * diff.transpose() * priors[c];
        }
    }
    let winv = within.map(|v| 1.0 / v);
    let metric = DMatrix::from_fn(dim, dim, |i, j| {
        let mut v = winv[i] * between[(i, j)] * winv[j];
        if i == j {
            v += epsilon * winv[i];
        }
        v
    });
    Ok(LdaStep {
        knn,
        distances,
        sigma,
        weights,
        class_means,
        priors,
        mean,
        within,
        between,
        metric: symmetrize(&metric),
    })
}

#[derive(Debug, Clone)]
pub struct LocalLdaFit {
    pub set: LocalLdaMetricSet,
    /// Data index of every base point.
    pub base_indices: Vec<usize>,
    /// The last update of every base metric.
    pub steps: Vec<LdaStep>,
    /// Updates actually performed per base point.
    pub iterations: Vec<usize>,
}

/// Local LDA metrics at `opts.num_base` random data points.
///
/// Each base metric starts at the identity and is refined until it stops
/// changing or `opts.iters` updates have been made.
pub fn fit_local_lda(data: &Dataset, opts: &LocalLdaOptions) -> Result<LocalLdaFit> {
    let labels = data.require_labels()?;
    if data.num_classes() < 2 || labels.iter().collect::<std::collections::BTreeSet<_>>().len() < 2 {
        return Err(Error::config("local LDA needs at least two classes"));
    }
    if opts.k > data.len() {
        return Err(Error::config(format!("K = {} exceeds the {} data points", opts.k, data.len())));
    }
    if opts.num_base == 0 || opts.num_base > data.len() {
        return Err(Error::config("number of base points must be in 1..=N"));
    }
    if opts.iters == 0 {
        return Err(Error::config("local LDA needs at least one iteration"));
    }
    let points = data.point_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut base_indices = sample(&mut rng, data.len(), opts.num_base).into_vec();
    base_indices.sort_unstable();
    let dim = data.dim();
    let mut metrics = Vec::new();
    let mut steps = Vec::new();
    let mut iterations = Vec::new();
    for &b in &base_indices {
        let mut current = DMatrix::identity(dim, dim);
        let mut last = None;
        let mut count = 0;
        for _ in 0..opts.iters {
            let step = local_lda_step(&points, labels, &points[b], &current, opts.k, opts.epsilon)?;
            count += 1;
            let change = (&step.metric - &current).amax();
            let fixed = change <= 1e-12 * step.metric.amax();
            current = step.metric.clone();
            last = Some(step);
            if fixed {
                break;
            }
        }
        metrics.push(current);
        steps.push(last.expect("at least one iteration"));
        iterations.push(count);
    }
    let set = LocalLdaMetricSet::new(base_indices.iter().map(|&i| points[i].clone()).collect(), metrics, opts.sigma)?;
    Ok(LocalLdaFit {
        set,
        base_indices,
        steps,
        iterations,
    })
}

/// `M(x) = sum_k w_k(x) M_k` with normalized Gaussian weights around the base
/// points.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalLdaMetricSet {
    pub base_points: Vec<DVector<f64>>,
    pub metrics: Vec<DMatrix<f64>>,
    pub sigma: f64,
}

impl LocalLdaMetricSet {
    pub fn new(base_points: Vec<DVector<f64>>, metrics: Vec<DMatrix<f64>>, sigma: f64) -> Result<Self> {
        if base_points.is_empty() || base_points.len() != metrics.len() {
            return Err(Error::config("need one base metric per base point"));
        }
        if !(sigma > 0.0) {
            return Err(Error::config("kernel bandwidth must be positive"));
        }
        let d = base_points[0].len();
        for (i, (p, m)) in base_points.iter().zip(&metrics).enumerate() {
            if p.len() != d || m.nrows() != d || m.ncols() != d {
                return Err(Error::config(format!("base metric {i} has the wrong shape")));
            }
            if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
                return Err(Error::config(format!("base metric {i} is not symmetric")));
            }
            if !(sym_eigenvalues(m)[0] > 0.0) {
                return Err(Error::config(format!("base metric {i} is not positive definite")));
            }
        }
        Ok(LocalLdaMetricSet {
            base_points,
            metrics,
            sigma,
        })
    }

    /// Normalized kernel weights at `x`. If every kernel underflows, the
    /// nearest base point (lowest index on ties) gets weight one.
    pub fn weights(&self, x: &DVector<f64>) -> Vec<f64> {
        let s2 = 2.0 * self.sigma * self.sigma;
        let raw: Vec<f64> = self
            .base_points
            .iter()
            .map(|c| (-(x - c).norm_squared() / s2).exp())
            .collect();
        let raw: Vec<f64> = raw.into_iter().map(|w| if w < KERNEL_FLOOR { 0.0 } else { w }).collect();
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            raw.into_iter().map(|w| w / total).collect()
        } else {
            let mut best = (0, f64::INFINITY);
            for (i, c) in self.base_points.iter().enumerate() {
                let d = (x - c).norm_squared();
                if d < best.1 {
                    best = (i, d);
                }
            }
            let mut w = vec![0.0; raw.len()];
            w[best.0] = 1.0;
            w
        }
    }
}

pub fn eval_convex_combination_metric(set: &LocalLdaMetricSet, x: &DVector<f64>) -> DMatrix<f64> {
    let d = x.len();
    let mut m = DMatrix::zeros(d, d);
    for (w, mk) in set.weights(x).iter().zip(&set.metrics) {
        if *w != 0.0 {
            m += mk * *w;
        }
    }
    m
}

impl MetricField for LocalLdaMetricSet {
    fn dim(&self) -> usize {
        self.base_points[0].len()
    }
    fn eval_raw(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(eval_convex_combination_metric(self, x))
    }
    fn directional_derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        // dw_k = w_k (g_k - sum_j w_j g_j) with g_k = -(x - c_k)/sigma^2
        let w = self.weights(x);
        let s2 = self.sigma * self.sigma;
        let g: Vec<f64> = self.base_points.iter().map(|c| -(x - c).dot(u) / s2).collect();
        let gbar: f64 = w.iter().zip(&g).map(|(a, b)| a * b).sum();
        let d = x.len();
        let mut out = DMatrix::zeros(d, d);
        for k in 0..w.len() {
            if w[k] != 0.0 {
                out += &self.metrics[k] * (w[k] * (g[k] - gbar));
            }
        }
        Some(Ok(out))
    }
    fn derivative_raw(&self, x: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        let d = x.len();
        let mut out = DMatrix::zeros(d * d, d);
        for l in 0..d {
            let mut e = DVector::zeros(d);
            e[l] = 1.0;
            let dm = match self.directional_derivative(x, &e)? {
                Ok(m) => m,
                Err(err) => return Some(Err(err)),
            };
            out.set_column(l, &DVector::from_column_slice(dm.as_slice()));
        }
        Some(Ok(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Provenance;
    use crate::geometry::{metric_derivative, metric_derivative_with, DerivativeMode};
    use rand_distr::{Distribution, Normal};

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn spd(a: f64, b: f64, c: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[a, b, b, c])
    }

    #[test]
    fn single_base_metric_everywhere() {
        let m = spd(2.0, 0.3, 1.0);
        let set = LocalLdaMetricSet::new(vec![v(&[0.0, 0.0])], vec![m.clone()], 1.0).unwrap();
        for x in [v(&[0.0, 0.0]), v(&[3.0, -1.0]), v(&[1e3, 0.0])] {
            assert_eq!(eval_convex_combination_metric(&set, &x), m);
        }
    }

    #[test]
    fn equidistant_query_averages() {
        let a = spd(2.0, 0.3, 1.0);
        let b = spd(1.0, -0.2, 4.0);
        let set = LocalLdaMetricSet::new(vec![v(&[-1.0, 0.0]), v(&[1.0, 0.0])], vec![a.clone(), b.clone()], 0.7).unwrap();
        let m = eval_convex_combination_metric(&set, &v(&[0.0, 2.0]));
        assert!((m - (a + b) * 0.5).amax() < 1e-15);
    }

    #[test]
    fn matches_direct_weighted_sum() {
        let ms = vec![spd(2.0, 0.3, 1.0), spd(1.0, -0.2, 4.0), spd(3.0, 0.0, 0.5)];
        let cs = vec![v(&[0.0, 0.0]), v(&[1.0, 1.0]), v(&[-1.0, 2.0])];
        let set = LocalLdaMetricSet::new(cs.clone(), ms.clone(), 0.8).unwrap();
        let x = v(&[0.3, 0.9]);
        let raw: Vec<f64> = cs.iter().map(|c| (-(&x - c).norm_squared() / (2.0 * 0.64)).exp()).collect();
        let tot: f64 = raw.iter().sum();
        let mut oracle = DMatrix::zeros(2, 2);
        for k in 0..3 {
            oracle += &ms[k] * (raw[k] / tot);
        }
        assert!((eval_convex_combination_metric(&set, &x) - oracle).amax() < 1e-12);
        assert!((set.weights(&x).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn underflow_falls_back_to_nearest() {
        let a = spd(2.0, 0.0, 1.0);
        let b = spd(1.0, 0.0, 4.0);
        let set = LocalLdaMetricSet::new(vec![v(&[0.0, 0.0]), v(&[10.0, 0.0])], vec![a, b.clone()], 0.01).unwrap();
        assert_eq!(eval_convex_combination_metric(&set, &v(&[100.0, 0.0])), b);
        assert_eq!(set.weights(&v(&[1e4, 0.0])), vec![0.0, 1.0]);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let set = LocalLdaMetricSet::new(
            vec![v(&[0.0, 0.0]), v(&[1.0, 1.0])],
            vec![spd(2.0, 0.3, 1.0), spd(1.0, -0.2, 4.0)],
            0.9,
        )
        .unwrap();
        let x = v(&[0.2, 0.4]);
        let a = metric_derivative(&set, &x).unwrap();
        let f = metric_derivative_with(&set, &x, DerivativeMode::CentralDifference { step: 1e-5 }).unwrap();
        assert!((a - f).amax() < 1e-7);
    }

    #[test]
    fn separated_classes_favour_the_separating_axis() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let n = 200;
        let mut x = DMatrix::zeros(2 * n, 3);
        let mut labels = Vec::new();
        for c in 0..2 {
            for i in 0..n {
                let r = c * n + i;
                x[(r, 0)] = if c == 0 { -1.5 } else { 1.5 } + noise.sample(&mut rng);
                x[(r, 1)] = noise.sample(&mut rng);
                x[(r, 2)] = noise.sample(&mut rng);
                labels.push(c);
            }
        }
        let data = Dataset::new(x, Some(labels), Provenance::File).unwrap();
        let fit = fit_local_lda(
            &data,
            &LocalLdaOptions {
                num_base: 8,
                k: 2 * n,
                ..LocalLdaOptions::default()
            },
        )
        .unwrap();
        for (s, m) in fit.set.metrics.iter().enumerate() {
            let diag = m.diagonal();
            assert!(diag[0] > diag[1] && diag[0] > diag[2], "base {s}: {diag:?}");
        }
    }

    #[test]
    fn single_class_neighbourhood_has_zero_between() {
        let pts = vec![v(&[0.0, 0.0]), v(&[0.1, 0.0]), v(&[0.0, 0.1]), v(&[5.0, 5.0])];
        let labels = vec![0, 0, 0, 1];
        let step = local_lda_step(&pts, &labels, &pts[0], &DMatrix::identity(2, 2), 3, 1e-3).unwrap();
        assert_eq!(step.between, DMatrix::zeros(2, 2));
        let expect = step.within.map(|w| 1e-3 / w);
        assert!((step.metric.diagonal() - expect).amax() < 1e-12);
    }

    #[test]
    fn one_class_dataset_is_rejected() {
        let data = Dataset::new(DMatrix::zeros(4, 2), Some(vec![0; 4]), Provenance::File).unwrap();
        assert!(fit_local_lda(&data, &LocalLdaOptions { k: 2, num_base: 1, ..Default::default() })
            .unwrap_err()
            .is_config());
    }
}
