//! The metric-aware latent density `q(z) ~ 1[|z - c| <= r] / (1 + sqrt det M(z))`
//! and samplers for it.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::MetricField;
use crate::graph::uniform_in_ball;
use crate::linalg::sqrt_det_spd;

/// Starting points tried before giving up on a chain.
pub const MAX_START_ATTEMPTS: usize = 100;

/// Default margin around the latent codes when the radius is derived from them.
pub const RADIUS_MARGIN: f64 = 0.1;

#[derive(Clone)]
pub struct LatentDensity {
    pub metric: Arc<dyn MetricField>,
    pub radius: f64,
    pub center: DVector<f64>,
}

impl std::fmt::Debug for LatentDensity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LatentDensity")
            .field("dim", &self.metric.dim())
            .field("radius", &self.radius)
            .field("center", &self.center.as_slice())
            .finish()
    }
}

impl LatentDensity {
    /// Ball centered at the origin.
    pub fn new(metric: Arc<dyn MetricField>, radius: f64) -> Result<Self> {
        let d = metric.dim();
        LatentDensity::with_center(metric, radius, DVector::zeros(d))
    }

    pub fn with_center(metric: Arc<dyn MetricField>, radius: f64, center: DVector<f64>) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::config(format!("ball radius must be positive, got {radius}")));
        }
        if center.len() != metric.dim() {
            return Err(Error::config(format!(
                "ball center has dimension {}, metric has {}",
                center.len(),
                metric.dim()
            )));
        }
        Ok(LatentDensity { metric, radius, center })
    }

    /// Ball around the mean of `codes` reaching every code, widened by 10%.
    pub fn covering(metric: Arc<dyn MetricField>, codes: &[DVector<f64>]) -> Result<Self> {
        if codes.is_empty() {
            return Err(Error::config("no latent codes to cover"));
        }
        let d = metric.dim();
        let mut center = DVector::zeros(d);
        for c in codes {
            if c.len() != d {
                return Err(Error::config("latent code dimension does not match the metric"));
            }
            center += c;
        }
        center /= codes.len() as f64;
        let reach = codes.iter().map(|c| (c - &center).norm()).fold(0.0, f64::max);
        let radius = if reach > 0.0 { reach * (1.0 + RADIUS_MARGIN) } else { 1.0 };
        LatentDensity::with_center(metric, radius, center)
    }

    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    pub fn contains(&self, z: &DVector<f64>) -> bool {
        (z - &self.center).norm() <= self.radius
    }

    pub fn unnormalized(&self, z: &DVector<f64>) -> Result<f64> {
        if !self.contains(z) {
            return Ok(0.0);
        }
        let m = self.metric.eval(z)?;
        Ok(1.0 / (1.0 + sqrt_det_spd(&m)?))
    }

    fn uniform(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        uniform_in_ball(1, self.dim(), self.radius, rng).remove(0) + &self.center
    }
}

pub fn q_density_unnorm(density: &LatentDensity, z: &DVector<f64>) -> Result<f64> {
    density.unnormalized(z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcOptions {
    /// Proposal standard deviation; `None` picks `0.5 r / sqrt(d)`.
    pub step: Option<f64>,
    pub burn: usize,
    pub thin: usize,
    pub seed: u64,
    /// Independent chains run in parallel, each on its own stream.
    pub chains: usize,
}

impl Default for McmcOptions {
    fn default() -> Self {
        McmcOptions {
            step: None,
            burn: 1000,
            thin: 5,
            seed: 0,
            chains: 1,
        }
    }
}

impl McmcOptions {
    pub fn step_for(&self, density: &LatentDensity) -> f64 {
        self.step
            .unwrap_or(0.5 * density.radius / (density.dim() as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingDiagnostics {
    pub method: String,
    pub seed: u64,
    pub n: usize,
    pub acceptance_rate: f64,
    pub proposals: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thin: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chains: Option<usize>,
}

impl SamplingDiagnostics {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("diagnostics serialize");
        std::fs::write(path, text)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Samples {
    pub points: Vec<DVector<f64>>,
    pub diagnostics: SamplingDiagnostics,
}

impl Samples {
    pub fn acceptance_rate(&self) -> f64 {
        self.diagnostics.acceptance_rate
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        write_points_csv(&self.points, writer)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<&[f64]> = self.points.iter().map(|p| p.as_slice()).collect();
        serde_json::to_string(&rows).expect("samples serialize")
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

/// CSV with header `z_1..z_d`.
pub fn write_points_csv<W: std::io::Write>(points: &[DVector<f64>], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let d = points.first().map_or(0, |p| p.len());
    w.write_record((1..=d).map(|i| format!("z_{i}")))?;
    for p in points {
        w.write_record(p.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

struct Chain {
    points: Vec<DVector<f64>>,
    accepted: u64,
    proposals: u64,
}

fn run_chain(density: &LatentDensity, n: usize, opts: &McmcOptions, step: f64, stream: u64) -> Result<Chain> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(stream);
    let mut z = density.center.clone();
    let mut q = density.unnormalized(&z)?;
    let mut attempts = 0;
    while q <= 0.0 {
        if attempts == MAX_START_ATTEMPTS {
            return Err(Error::Sampling(format!(
                "density is zero at {MAX_START_ATTEMPTS} uniform starting points"
            )));
        }
        z = density.uniform(&mut rng);
        q = density.unnormalized(&z)?;
        attempts += 1;
    }
    let thin = opts.thin.max(1);
    let total = opts.burn + n * thin;
    let mut points = Vec::with_capacity(n);
    let (mut accepted, mut proposals) = (0u64, 0u64);
    for it in 0..total {
        let prop = &z + DVector::from_fn(z.len(), |_, _| step * Distribution::<f64>::sample(&StandardNormal, &mut rng));
        let qp = density.unnormalized(&prop)?;
        proposals += 1;
        let u: f64 = rng.random();
        if qp > 0.0 && u * q < qp {
            z = prop;
            q = qp;
            accepted += 1;
        }
        if it >= opts.burn && (it - opts.burn + 1) % thin == 0 {
            points.push(z.clone());
        }
    }
    Ok(Chain {
        points,
        accepted,
        proposals,
    })
}

/// Random-walk Metropolis with Gaussian proposals.
pub fn mcmc_sample(density: &LatentDensity, n: usize, opts: &McmcOptions) -> Result<Samples> {
    if n == 0 {
        return Err(Error::config("number of samples must be at least 1"));
    }
    let step = opts.step_for(density);
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::config(format!("MCMC step must be positive, got {step}")));
    }
    let chains = opts.chains.clamp(1, n);
    let per: Vec<usize> = (0..chains).map(|c| n / chains + usize::from(c < n % chains)).collect();
    log::info!("mcmc: seed {} step {step} chains {chains}", opts.seed);
    let runs: Vec<Result<Chain>> = per
        .par_iter()
        .enumerate()
        .map(|(c, &m)| run_chain(density, m, opts, step, c as u64))
        .collect();
    let mut points = Vec::with_capacity(n);
    let (mut accepted, mut proposals) = (0u64, 0u64);
    for r in runs {
        let c = r?;
        points.extend(c.points);
        accepted += c.accepted;
        proposals += c.proposals;
    }
    Ok(Samples {
        points,
        diagnostics: SamplingDiagnostics {
            method: "mcmc".into(),
            seed: opts.seed,
            n,
            acceptance_rate: accepted as f64 / proposals as f64,
            proposals,
            step: Some(step),
            burn: Some(opts.burn),
            thin: Some(opts.thin.max(1)),
            chains: Some(chains),
        },
    })
}

/// Exact sampling with a uniform proposal on the ball and envelope 1.
///
/// Gives up with a sampling error after `max_proposals`, which defaults to
/// `10^4 n + 10^6` when `None`.
pub fn rejection_sample(density: &LatentDensity, n: usize, seed: u64) -> Result<Samples> {
    rejection_sample_with(density, n, seed, None)
}

pub fn rejection_sample_with(
    density: &LatentDensity,
    n: usize,
    seed: u64,
    max_proposals: Option<u64>,
) -> Result<Samples> {
    if n == 0 {
        return Err(Error::config("number of samples must be at least 1"));
    }
    let cap = max_proposals.unwrap_or(10_000 * n as u64 + 1_000_000);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    log::info!("rejection sampling: seed {seed}");
    let mut points = Vec::with_capacity(n);
    let mut proposals = 0u64;
    while points.len() < n {
        if proposals >= cap {
            return Err(Error::Sampling(format!(
                "only {} of {n} samples accepted after {proposals} proposals",
                points.len()
            )));
        }
        let z = density.uniform(&mut rng);
        proposals += 1;
        let q = density.unnormalized(&z)?;
        if rng.random::<f64>() < q {
            points.push(z);
        }
    }
    Ok(Samples {
        points,
        diagnostics: SamplingDiagnostics {
            method: "rejection".into(),
            seed,
            n,
            acceptance_rate: n as f64 / proposals as f64,
            proposals,
            step: None,
            burn: None,
            thin: None,
            chains: None,
        },
    })
}
