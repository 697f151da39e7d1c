//! Small autoencoders trained by hand-written backpropagation, and post-hoc
//! precision networks fitted to their residuals.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::{kmeans, nnls, KMEANS_ITERS, KMEANS_SEED};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::generator::{fit_pca, Activation, FeedforwardNet, Generator, LinearPart, PositiveRbf};
use crate::metrics::rbf_bandwidths;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub l2: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Independent initializations; the run with the lowest final loss wins.
    pub restarts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 2000,
            batch_size: 64,
            step_size: 1e-2,
            l2: 1e-6,
            seed: 0,
            optimizer: Optimizer::Adam,
            restarts: 4,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::config("restarts must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::config("step_size must be positive"));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::config("l2 must be nonnegative"));
        }
        Ok(())
    }
}

/// Hidden widths of the decoder `d -> hidden... -> D` and of the encoder
/// `D -> encoder_hidden... -> d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub encoder_hidden: Vec<usize>,
    pub activation: Activation,
    /// Add the PCA term `A z + b` to the decoder output.
    pub linear_part: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            latent_dim: 2,
            hidden: vec![2, 3],
            encoder_hidden: vec![8],
            activation: Activation::Tanh,
            linear_part: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedAutoencoder {
    pub generator: Generator,
    pub encoder: FeedforwardNet,
    /// Mean training loss per epoch (scaled units).
    pub losses: Vec<f64>,
    pub config: TrainConfig,
}

impl TrainedAutoencoder {
    pub fn encode(&self, x: &DVector<f64>) -> DVector<f64> {
        self.encoder.forward(x)
    }

    /// Latent codes of every data point, one per row.
    pub fn codes(&self, data: &Dataset) -> DMatrix<f64> {
        self.encoder.forward_batch(&data.points)
    }

    pub fn reconstruct(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        self.generator.forward_batch(&self.codes(data))
    }

    /// `x - g(e(x))`, one row per point.
    pub fn residuals(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        Ok(&data.points - self.reconstruct(data)?)
    }

    /// `sqrt(mean |x - g(e(x))|^2 / D)` in data units.
    pub fn rmse(&self, data: &Dataset) -> Result<f64> {
        let r = self.residuals(data)?;
        Ok((r.norm_squared() / r.len() as f64).sqrt())
    }
}

/// Per-coordinate affine map onto `[-1, 1]`.
struct Scaling {
    scale: DVector<f64>,
    offset: DVector<f64>,
}

impl Scaling {
    fn fit(points: &DMatrix<f64>) -> Self {
        let dim = points.ncols();
        let mut scale = DVector::from_element(dim, 1.0);
        let mut offset = DVector::zeros(dim);
        for j in 0..dim {
            let c = points.column(j);
            let (lo, hi) = (c.min(), c.max());
            if hi > lo {
                scale[j] = 2.0 / (hi - lo);
                offset[j] = -1.0 - lo * scale[j];
            } else {
                offset[j] = -lo;
            }
        }
        Scaling { scale, offset }
    }

    fn apply(&self, points: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = points.clone();
        for (j, mut c) in out.column_iter_mut().enumerate() {
            c.apply(|v| *v = *v * self.scale[j] + self.offset[j]);
        }
        out
    }
}

/// Activations of every layer, input first.
struct Cache {
    post: Vec<DMatrix<f64>>,
}

/// Forward pass on columns.
fn forward_cols(net: &FeedforwardNet, x: &DMatrix<f64>) -> Cache {
    let mut post = vec![x.clone()];
    for l in &net.layers {
        let mut a = &l.w * post.last().expect("input present");
        for mut c in a.column_iter_mut() {
            c += &l.b;
        }
        a.apply(|v| *v = l.act.apply(*v));
        post.push(a);
    }
    Cache { post }
}

/// Activation slope recovered from the activation value.
fn slope_from_output(act: Activation, y: f64) -> f64 {
    match act {
        Activation::Tanh => 1.0 - y * y,
        // softplus' = sigmoid = 1 - exp(-softplus)
        Activation::Softplus => -(-y).exp_m1(),
        Activation::Linear => 1.0,
    }
}

/// Gradients of every layer and of the input given `dL/d output`.
fn backward_cols(net: &FeedforwardNet, cache: &Cache, g_out: DMatrix<f64>) -> (Vec<(DMatrix<f64>, DVector<f64>)>, DMatrix<f64>) {
    let mut g = g_out;
    let mut grads = Vec::with_capacity(net.layers.len());
    for (i, l) in net.layers.iter().enumerate().rev() {
        let ga = g.zip_map(&cache.post[i + 1], |gv, y| gv * slope_from_output(l.act, y));
        let dw = &ga * cache.post[i].transpose();
        let db = ga.column_sum();
        g = l.w.transpose() * &ga;
        grads.push((dw, db));
    }
    grads.reverse();
    (grads, g)
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

fn for_each_param(nets: [&mut FeedforwardNet; 2], mut f: impl FnMut(usize, &mut f64)) {
    let mut i = 0;
    for n in nets {
        for l in n.layers.iter_mut() {
            for p in l.w.iter_mut().chain(l.b.iter_mut()) {
                f(i, p);
                i += 1;
            }
        }
    }
}

fn flatten(grads: &[(DMatrix<f64>, DVector<f64>)]) -> impl Iterator<Item = f64> + '_ {
    grads.iter().flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
}

/// Trains `x -> encoder -> decoder (+ A z + b)` on the mean squared
/// reconstruction error plus `l2 * sum |W|^2`.
///
/// Restart `r` is seeded with `seed + r`; restarts run in parallel.
pub fn train_autoencoder(data: &Dataset, arch: &Architecture, cfg: &TrainConfig) -> Result<TrainedAutoencoder> {
    cfg.validate()?;
    let runs: Vec<Result<TrainedAutoencoder>> = (0..cfg.restarts as u64)
        .into_par_iter()
        .map(|r| train_once(data, arch, cfg, cfg.seed.wrapping_add(r)))
        .collect();
    let mut best: Option<TrainedAutoencoder> = None;
    for run in runs {
        let run = run?;
        let loss = run.losses.last().copied().unwrap_or(f64::INFINITY);
        if best
            .as_ref()
            .is_none_or(|b| loss < b.losses.last().copied().unwrap_or(f64::INFINITY))
        {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn train_once(data: &Dataset, arch: &Architecture, cfg: &TrainConfig, seed: u64) -> Result<TrainedAutoencoder> {
    let n = data.len();
    let dim = data.dim();
    let d = arch.latent_dim;
    if d == 0 || n < 2 {
        return Err(Error::config("training needs a positive latent dimension and at least two points"));
    }
    if arch.linear_part && d > dim.min(n - 1) {
        return Err(Error::config(format!("latent dimension {d} too large for a PCA linear part")));
    }
    let mut dec_sizes = vec![d];
    dec_sizes.extend(&arch.hidden);
    dec_sizes.push(dim);
    let mut enc_sizes = vec![dim];
    enc_sizes.extend(&arch.encoder_hidden);
    enc_sizes.push(d);
    let mut decoder = FeedforwardNet::random(&dec_sizes, arch.activation, seed)?;
    let mut encoder = FeedforwardNet::random(&enc_sizes, arch.activation, seed.wrapping_add(1 << 32))?;

    let scaling = Scaling::fit(&data.points);
    let xs = scaling.apply(&data.points).transpose();
    let linear = if arch.linear_part {
        Some(LinearPart::from_pca(&fit_pca(data, d)?)?)
    } else {
        None
    };
    // linear part expressed in scaled coordinates
    let (a_s, b_s) = match &linear {
        Some(l) => {
            let mut a = l.matrix().clone();
            for (i, mut r) in a.row_iter_mut().enumerate() {
                r *= scaling.scale[i];
            }
            (a, l.b.component_mul(&scaling.scale) + &scaling.offset)
        }
        None => (DMatrix::zeros(dim, d), DVector::zeros(dim)),
    };

    let nparams: usize = [&encoder, &decoder]
        .iter()
        .flat_map(|net| net.layers.iter())
        .map(|l| l.w.len() + l.b.len())
        .sum();
    let mut adam = AdamState {
        m: vec![0.0; nparams],
        v: vec![0.0; nparams],
        t: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut last_finite = f64::NAN;
    let bs = cfg.batch_size.min(n);

    for epoch in 0..cfg.epochs {
        if bs < n {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(bs) {
            let x = DMatrix::from_fn(dim, chunk.len(), |i, j| xs[(i, chunk[j])]);
            let enc = forward_cols(&encoder, &x);
            let z = enc.post.last().expect("encoder output").clone();
            let dec = forward_cols(&decoder, &z);
            let mut xhat = dec.post.last().expect("decoder output") + &a_s * &z;
            for mut c in xhat.column_iter_mut() {
                c += &b_s;
            }
            let diff = &xhat - &x;
            let m = chunk.len() as f64;
            let mut loss = diff.norm_squared() / (m * dim as f64);
            let wsum: f64 = encoder
                .layers
                .iter()
                .chain(&decoder.layers)
                .map(|l| l.w.norm_squared())
                .sum();
            loss += cfg.l2 * wsum;
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    last_finite_loss: last_finite,
                });
            }
            last_finite = loss;
            epoch_loss += loss * m;

            let g_out = diff * (2.0 / (m * dim as f64));
            let (dgrads, gz) = backward_cols(&decoder, &dec, g_out.clone());
            let gz = gz + a_s.transpose() * &g_out;
            let (egrads, _) = backward_cols(&encoder, &enc, gz);
            let mut grad: Vec<f64> = flatten(&egrads).chain(flatten(&dgrads)).collect();
            // weight decay on matrices only
            let mut k = 0;
            for l in encoder.layers.iter().chain(&decoder.layers) {
                for w in l.w.iter() {
                    grad[k] += 2.0 * cfg.l2 * w;
                    k += 1;
                }
                k += l.b.len();
            }
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for_each_param([&mut encoder, &mut decoder], |i, p| *p -= cfg.step_size * grad[i]);
                }
                Optimizer::Adam => {
                    adam.t += 1;
                    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
                    let c1 = 1.0 - b1.powi(adam.t);
                    let c2 = 1.0 - b2.powi(adam.t);
                    for_each_param([&mut encoder, &mut decoder], |i, p| {
                        let g = grad[i];
                        adam.m[i] = b1 * adam.m[i] + (1.0 - b1) * g;
                        adam.v[i] = b2 * adam.v[i] + (1.0 - b2) * g * g;
                        *p -= cfg.step_size * (adam.m[i] / c1) / ((adam.v[i] / c2).sqrt() + eps);
                    });
                }
            }
        }
        losses.push(epoch_loss / n as f64);
        if epoch % 100 == 0 {
            log::debug!("epoch {epoch}: loss {}", epoch_loss / n as f64);
        }
    }

    // fold the [-1, 1] scaling into the first encoder and last decoder layers
    let first = &mut encoder.layers[0];
    first.b += &first.w * &scaling.offset;
    for (j, mut c) in first.w.column_iter_mut().enumerate() {
        c *= scaling.scale[j];
    }
    let last = decoder.layers.last_mut().expect("decoder has layers");
    for i in 0..dim {
        let s = scaling.scale[i];
        last.w.row_mut(i).unscale_mut(s);
        last.b[i] /= s;
    }
    if linear.is_none() {
        for i in 0..dim {
            last.b[i] -= scaling.offset[i] / scaling.scale[i];
        }
    }
    let generator = Generator::new(Some(decoder), linear, None, None)?;
    Ok(TrainedAutoencoder {
        generator,
        encoder,
        losses,
        config: cfg.clone(),
    })
}

/// Bandwidth scale for precision networks; wider than the support default so
/// that sums of kernels stay flat across a cluster.
pub const PRECISION_KAPPA: f64 = 5.0;

/// FISTA iterations for the precision weights.
pub const PRECISION_NNLS_ITERS: usize = 5000;

/// Cap on fitted precisions, reached when residuals vanish.
pub const BETA_MAX: f64 = 1e8;

/// Mean of `r^2` over each code's `k` nearest codes (itself included), a
/// per-code variance estimate from single residuals.
pub fn local_residual_variances(codes: &[DVector<f64>], residuals: &[DVector<f64>], k: usize) -> Result<Vec<DVector<f64>>> {
    if codes.len() != residuals.len() || codes.is_empty() {
        return Err(Error::config("codes and residuals must be nonempty and of equal length"));
    }
    let k = k.clamp(1, codes.len());
    let dim = residuals[0].len();
    Ok(codes
        .iter()
        .map(|c| {
            let mut idx: Vec<(f64, usize)> = codes.iter().enumerate().map(|(j, o)| ((o - c).norm_squared(), j)).collect();
            idx.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut acc = DVector::zeros(dim);
            for &(_, j) in &idx[..k] {
                acc += residuals[j].component_mul(&residuals[j]);
            }
            acc / k as f64
        })
        .collect())
}

/// Fits `beta(z) = W phi(z)` so that `1/(beta + zeta)` tracks the given
/// variances: k-means centers, cluster-spread bandwidths, and per-output
/// nonnegative least squares on `1/v - zeta`.
pub fn fit_precision_rbf(codes: &[DVector<f64>], variances: &[DVector<f64>], k: usize, zeta: f64) -> Result<PositiveRbf> {
    fit_precision_rbf_with(codes, variances, k, zeta, PRECISION_KAPPA)
}

/// [`fit_precision_rbf`] with an explicit bandwidth scale `kappa`.
pub fn fit_precision_rbf_with(
    codes: &[DVector<f64>],
    variances: &[DVector<f64>],
    k: usize,
    zeta: f64,
    kappa: f64,
) -> Result<PositiveRbf> {
    if !(kappa > 0.0) {
        return Err(Error::config("kappa must be positive"));
    }
    if codes.len() != variances.len() {
        return Err(Error::config("one variance vector is needed per code"));
    }
    if k == 0 || k > codes.len() {
        return Err(Error::config(format!("K = {k} must lie in 1..={}", codes.len())));
    }
    if !(zeta > 0.0) {
        return Err(Error::config("zeta must be positive"));
    }
    let dim = variances[0].len();
    if variances.iter().any(|v| v.len() != dim || v.iter().any(|x| !(*x >= 0.0))) {
        return Err(Error::config("variances must be nonnegative vectors of equal length"));
    }
    let km = kmeans(codes, k, KMEANS_SEED, KMEANS_ITERS)?;
    let gamma = rbf_bandwidths(codes, &km.centers, &km.assignment, kappa);
    let n = codes.len();
    let phi = DMatrix::from_fn(n, k, |i, j| (-0.5 * gamma[j] * (&codes[i] - &km.centers[j]).norm_squared()).exp());
    let mut w = DMatrix::zeros(dim, k);
    for out in 0..dim {
        let t = DVector::from_fn(n, |i, _| {
            let v = variances[i][out];
            let beta = if v > 0.0 { 1.0 / v - zeta } else { BETA_MAX };
            beta.clamp(0.0, BETA_MAX)
        });
        let sol = nnls(&phi, &t, PRECISION_NNLS_ITERS);
        w.set_row(out, &sol.transpose());
    }
    PositiveRbf::new(km.centers, gamma, w, zeta)
}

/// Precision network for a trained autoencoder from its residuals on `data`,
/// with variances averaged over `neighbors` nearest codes.
pub fn fit_precision_for(
    ae: &TrainedAutoencoder,
    data: &Dataset,
    k: usize,
    neighbors: usize,
    zeta: f64,
) -> Result<Generator> {
    let codes_m = ae.codes(data);
    let res_m = ae.residuals(data)?;
    let codes: Vec<DVector<f64>> = codes_m.row_iter().map(|r| r.transpose()).collect();
    let res: Vec<DVector<f64>> = res_m.row_iter().map(|r| r.transpose()).collect();
    let var = local_residual_variances(&codes, &res, neighbors)?;
    let rbf = fit_precision_rbf(&codes, &var, k, zeta)?;
    ae.generator.clone().with_precision(rbf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic_paraboloid, Provenance};
    use crate::linalg::spearman;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn small_data() -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pts = DMatrix::from_fn(60, 3, |_, j| rng.random_range(-1.0..1.0) * (j as f64 + 1.0) + 5.0);
        Dataset::new(pts, None, Provenance::File).unwrap()
    }

    #[test]
    fn restarts_keep_the_lowest_final_loss() {
        let data = small_data();
        let single = |seed| {
            let cfg = TrainConfig {
                epochs: 30,
                seed,
                restarts: 1,
                ..TrainConfig::default()
            };
            *train_autoencoder(&data, &Architecture::default(), &cfg).unwrap().losses.last().unwrap()
        };
        let cfg = TrainConfig {
            epochs: 30,
            seed: 5,
            restarts: 3,
            ..TrainConfig::default()
        };
        let best = *train_autoencoder(&data, &Architecture::default(), &cfg).unwrap().losses.last().unwrap();
        let expect = [single(5), single(6), single(7)].into_iter().fold(f64::INFINITY, f64::min);
        assert_eq!(best, expect);
        let bad = TrainConfig { restarts: 0, ..cfg };
        assert!(train_autoencoder(&data, &Architecture::default(), &bad).unwrap_err().is_config());
    }

    #[test]
    fn zero_epochs_keep_initialization() {
        let data = small_data();
        let arch = Architecture {
            linear_part: false,
            ..Architecture::default()
        };
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let ae = train_autoencoder(&data, &arch, &cfg).unwrap();
        let init = FeedforwardNet::random(&[2, 2, 3, 3], Activation::Tanh, 0).unwrap();
        // hidden layers are untouched by the output rescaling
        let net = ae.generator.net.as_ref().unwrap();
        assert_eq!(net.layers[0], init.layers[0]);
        assert_eq!(net.layers[1], init.layers[1]);
        assert!(ae.losses.is_empty());
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let net = FeedforwardNet::random(&[3, 4, 2], Activation::Softplus, 1).unwrap();
        let x = DMatrix::from_row_slice(3, 2, &[0.1, -0.3, 0.5, 0.2, -0.7, 0.9]);
        let target = DMatrix::from_row_slice(2, 2, &[0.3, 0.1, -0.2, 0.4]);
        let loss = |n: &FeedforwardNet| (forward_cols(n, &x).post.last().unwrap() - &target).norm_squared();
        let cache = forward_cols(&net, &x);
        let g = (cache.post.last().unwrap() - &target) * 2.0;
        let (grads, gin) = backward_cols(&net, &cache, g);
        let h = 1e-6;
        for (li, (dw, _)) in grads.iter().enumerate() {
            for idx in 0..dw.len() {
                let mut p = net.clone();
                let mut m = net.clone();
                p.layers[li].w.as_mut_slice()[idx] += h;
                m.layers[li].w.as_mut_slice()[idx] -= h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                assert!((fd - dw.as_slice()[idx]).abs() < 1e-7);
            }
        }
        let mut xp = x.clone();
        xp[(1, 0)] += h;
        let mut xm = x.clone();
        xm[(1, 0)] -= h;
        let lf = |xx: &DMatrix<f64>| (forward_cols(&net, xx).post.last().unwrap() - &target).norm_squared();
        assert!(((lf(&xp) - lf(&xm)) / (2.0 * h) - gin[(1, 0)]).abs() < 1e-7);
    }

    #[test]
    fn full_batch_sgd_loss_is_nonincreasing() {
        let data = small_data();
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 1000,
            step_size: 0.05,
            optimizer: Optimizer::Sgd,
            ..TrainConfig::default()
        };
        let ae = train_autoencoder(&data, &Architecture::default(), &cfg).unwrap();
        for w in ae.losses.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9));
        }
        assert!(ae.losses.last().unwrap() < ae.losses.first().unwrap());
    }

    #[test]
    fn scaling_is_folded_into_the_weights() {
        let data = small_data();
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        for lin in [true, false] {
            let arch = Architecture {
                linear_part: lin,
                ..Architecture::default()
            };
            let ae = train_autoencoder(&data, &arch, &cfg).unwrap();
            // training loss is measured in scaled units; recompute it from the
            // folded model and compare against a direct evaluation
            let s = Scaling::fit(&data.points);
            let rec = ae.reconstruct(&data).unwrap();
            let diff = s.apply(&rec) - s.apply(&data.points);
            let scaled_mse = diff.norm_squared() / diff.len() as f64;
            assert!(scaled_mse.is_finite() && scaled_mse < 10.0);
            let z = ae.encode(&data.point(0));
            assert_eq!(z.len(), 2);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let data = small_data();
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 1000,
            step_size: 1e6,
            optimizer: Optimizer::Sgd,
            ..TrainConfig::default()
        };
        match train_autoencoder(&data, &Architecture::default(), &cfg) {
            Err(Error::Training { last_finite_loss, .. }) => assert!(last_finite_loss.is_finite()),
            other => panic!("expected a training error, got {:?}", other.map(|a| a.losses.len())),
        }
    }

    #[test]
    fn homoscedastic_precision_reads_back() {
        let data = make_synthetic_paraboloid(50, 3).unwrap();
        let codes: Vec<DVector<f64>> = data.latent.row_iter().map(|r| r.transpose()).collect();
        let var = vec![DVector::from_element(3, 0.01); codes.len()];
        let rbf = fit_precision_rbf(&codes, &var, 20, 1e-6).unwrap();
        for c in &codes {
            for v in rbf.variance(c).iter() {
                assert!((v / 0.01 - 1.0).abs() < 0.2, "{v}");
            }
        }
        let far = rbf.variance(&DVector::from_vec(vec![100.0, 100.0]));
        assert!((far[0] - 1e6).abs() < 1e-3);
    }

    #[test]
    fn zero_residuals_are_capped() {
        let codes: Vec<DVector<f64>> = (0..10).map(|i| DVector::from_vec(vec![i as f64 * 0.1])).collect();
        let var = vec![DVector::zeros(1); 10];
        let rbf = fit_precision_rbf(&codes, &var, 3, 1e-6).unwrap();
        let v = rbf.variance(&codes[4])[0];
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn heteroscedastic_noise_is_ranked() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let codes: Vec<DVector<f64>> = (0..600)
            .map(|_| DVector::from_vec(vec![rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0)]))
            .collect();
        let truth: Vec<f64> = codes.iter().map(|c| 0.05 * c[0].abs()).collect();
        let res: Vec<DVector<f64>> = truth
            .iter()
            .map(|s| {
                let n = Normal::new(0.0, *s).unwrap();
                DVector::from_fn(2, |_, _| n.sample(&mut rng))
            })
            .collect();
        let var = local_residual_variances(&codes, &res, 15).unwrap();
        let rbf = fit_precision_rbf(&codes, &var, 30, 1e-6).unwrap();
        let fitted: Vec<f64> = codes.iter().map(|c| rbf.sigma(c)[0]).collect();
        assert!(spearman(&fitted, &truth) > 0.8);
    }

    #[test]
    fn precision_fit_validation() {
        let codes = vec![DVector::zeros(1)];
        assert!(fit_precision_rbf(&codes, &[DVector::zeros(1)], 2, 1e-6).is_err());
        assert!(fit_precision_rbf(&codes, &[], 1, 1e-6).is_err());
    }
}
