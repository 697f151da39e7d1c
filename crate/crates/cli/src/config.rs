//! TOML run configurations. Unknown keys are rejected everywhere; relative
//! paths are taken relative to the config file.

use std::path::{Path, PathBuf};

use latent_geometry::data::Rect;
use latent_geometry::metrics::{MetricSpec, SupportMetricParams, SupportMode};
use latent_geometry::train::{Architecture, Optimizer, TrainConfig};
use latent_geometry::BvpOptions;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

pub trait RunConfig: Serialize + DeserializeOwned {
    fn seed_mut(&mut self) -> &mut u64;
    /// Make every path absolute against `base`.
    fn resolve_paths(&mut self, base: &Path);
}

/// Reads `path`, applies the seed override and resolves relative paths.
pub fn load<C: RunConfig>(path: &Path, seed: Option<u64>) -> Result<C, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg: C =
        toml::from_str(&text).map_err(|e| Failure::config(format!("invalid config {}: {e}", path.display())))?;
    if let Some(s) = seed {
        *cfg.seed_mut() = s;
    }
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let base = std::path::absolute(base).map_err(|e| Failure::config(e.to_string()))?;
    cfg.resolve_paths(&base);
    Ok(cfg)
}

/// Writes `resolved_config.toml` into `out`.
pub fn write_resolved<C: RunConfig>(cfg: &C, out: &Path) -> Result<(), Failure> {
    let text = toml::to_string_pretty(cfg).map_err(|e| Failure::config(format!("cannot serialize config: {e}")))?;
    std::fs::write(out.join("resolved_config.toml"), text)
        .map_err(|e| Failure::config(format!("cannot write resolved config: {e}")))
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn default_noise() -> f64 {
    0.1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    Csv {
        path: PathBuf,
        #[serde(default)]
        labeled: bool,
    },
    Paraboloid {
        n_per_component: usize,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    Sine {
        n: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default)]
        rect: Rect,
    },
}

impl DataSource {
    fn resolve(&mut self, base: &Path) {
        if let DataSource::Csv { path, .. } = self {
            resolve(base, path);
        }
    }
}

fn default_paraboloid_a() -> f64 {
    0.3
}

/// What maps latent codes to the ambient space.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GeneratorSource {
    /// The metric lives on the latent space itself.
    #[default]
    None,
    Paraboloid {
        #[serde(default = "default_paraboloid_a")]
        a: f64,
    },
    Model {
        path: PathBuf,
        /// Use the expected metric (needs a precision network).
        #[serde(default)]
        expected: bool,
        /// Forward-difference step; analytic Jacobians when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        finite_difference: Option<f64>,
    },
}

impl GeneratorSource {
    fn resolve(&mut self, base: &Path) {
        if let GeneratorSource::Model { path, .. } = self {
            resolve(base, path);
        }
    }
}

/// Ambient metric: a JSON file or an inline spec. Identity when absent.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<MetricSpec>,
}

impl MetricSource {
    fn resolve(&mut self, base: &Path) {
        if let Some(p) = &mut self.path {
            resolve(base, p);
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub knots: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segments: Option<usize>,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = BvpOptions::default();
        SolverConfig {
            knots: d.knots,
            segments: d.segments,
            tol: d.tol,
            max_iters: d.max_iters,
        }
    }
}

impl SolverConfig {
    pub fn options(&self) -> BvpOptions {
        BvpOptions {
            knots: self.knots,
            segments: self.segments,
            tol: self.tol,
            max_iters: self.max_iters,
            ..BvpOptions::default()
        }
    }
}

/// Prototype graph used to initialize the solver.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub enabled: bool,
    /// Uniform draws in the ball before k-means.
    pub samples: usize,
    pub radius: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    pub prototypes: usize,
    pub k: usize,
    pub segments: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            enabled: true,
            samples: 10_000,
            radius: 4.0,
            center: None,
            prototypes: 100,
            k: 7,
            segments: 20,
        }
    }
}

fn default_curve_samples() -> usize {
    200
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeodesicConfig {
    #[serde(default)]
    pub seed: u64,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    /// Rows written to `curve.csv`.
    #[serde(default = "default_curve_samples")]
    pub curve_samples: usize,
    #[serde(default)]
    pub generator: GeneratorSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<MetricSource>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub graph: GraphConfig,
}

impl RunConfig for GeodesicConfig {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
    fn resolve_paths(&mut self, base: &Path) {
        self.generator.resolve(base);
        if let Some(m) = &mut self.metric {
            m.resolve(base);
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleMethod {
    #[default]
    Mcmc,
    Rejection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    pub burn: usize,
    pub thin: usize,
    pub chains: usize,
}

impl Default for McmcSection {
    fn default() -> Self {
        let d = latent_geometry::sampling::McmcOptions::default();
        McmcSection {
            step: d.step,
            burn: d.burn,
            thin: d.thin,
            chains: d.chains,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    #[serde(default)]
    pub seed: u64,
    pub n: usize,
    #[serde(default)]
    pub method: SampleMethod,
    /// Ball radius; derived from `codes` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    /// CSV of latent codes whose covering ball bounds the support.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codes: Option<PathBuf>,
    /// Also write the generator outputs of the samples.
    #[serde(default)]
    pub decode: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_proposals: Option<u64>,
    #[serde(default)]
    pub generator: GeneratorSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<MetricSource>,
    #[serde(default)]
    pub mcmc: McmcSection,
}

impl RunConfig for SampleConfig {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
    fn resolve_paths(&mut self, base: &Path) {
        self.generator.resolve(base);
        if let Some(m) = &mut self.metric {
            m.resolve(base);
        }
        if let Some(c) = &mut self.codes {
            resolve(base, c);
        }
    }
}

fn default_alpha() -> f64 {
    SupportMetricParams::default().alpha
}
fn default_epsilon() -> f64 {
    SupportMetricParams::default().epsilon
}
fn default_support_mode() -> SupportMode {
    SupportMode::Support
}
fn default_rbf_centers() -> usize {
    20
}
fn default_kappa() -> f64 {
    1.0
}
fn default_lda_base() -> usize {
    latent_geometry::metrics::LocalLdaOptions::default().num_base
}
fn default_lda_k() -> usize {
    latent_geometry::metrics::LocalLdaOptions::default().k
}
fn default_lda_epsilon() -> f64 {
    latent_geometry::metrics::LocalLdaOptions::default().epsilon
}
fn default_lda_iters() -> usize {
    latent_geometry::metrics::LocalLdaOptions::default().iters
}
fn default_sigma() -> f64 {
    1.0
}
fn default_diag_epsilon() -> f64 {
    1e-2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FitSpec {
    RbfSupport {
        #[serde(default = "default_rbf_centers")]
        centers: usize,
        #[serde(default = "default_kappa")]
        kappa: f64,
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default = "default_support_mode")]
        mode: SupportMode,
    },
    LocalLda {
        #[serde(default = "default_lda_base")]
        base_points: usize,
        #[serde(default = "default_lda_k")]
        neighbors: usize,
        #[serde(default = "default_lda_epsilon")]
        epsilon: f64,
        #[serde(default = "default_lda_iters")]
        iters: usize,
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
    LocalDiag {
        #[serde(default = "default_sigma")]
        sigma: f64,
        #[serde(default = "default_diag_epsilon")]
        epsilon: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitMetricConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataSource,
    pub fit: FitSpec,
}

impl RunConfig for FitMetricConfig {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
    fn resolve_paths(&mut self, base: &Path) {
        self.data.resolve(base);
    }
}

/// Training options without the seed, which lives at the top level.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub l2: f64,
    pub optimizer: Optimizer,
    pub restarts: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainingSection {
            epochs: d.epochs,
            batch_size: d.batch_size,
            step_size: d.step_size,
            l2: d.l2,
            optimizer: d.optimizer,
            restarts: d.restarts,
        }
    }
}

impl TrainingSection {
    pub fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            step_size: self.step_size,
            l2: self.l2,
            seed,
            optimizer: self.optimizer,
            restarts: self.restarts,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrecisionSection {
    pub centers: usize,
    /// Codes averaged for each local residual variance.
    pub neighbors: usize,
    pub zeta: f64,
}

impl Default for PrecisionSection {
    fn default() -> Self {
        PrecisionSection {
            centers: 30,
            neighbors: 10,
            zeta: latent_geometry::generator::DEFAULT_ZETA,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataSource,
    #[serde(default)]
    pub architecture: Architecture,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<PrecisionSection>,
}

impl RunConfig for TrainRunConfig {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
    fn resolve_paths(&mut self, base: &Path) {
        self.data.resolve(base);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MakeDataConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataSource,
}

impl RunConfig for MakeDataConfig {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
    fn resolve_paths(&mut self, base: &Path) {
        self.data.resolve(base);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "start = [0.0, 0.0]\nend = [1.0, 1.0]\nstrat = 3\n";
        let err = toml::from_str::<GeodesicConfig>(text).unwrap_err().to_string();
        assert!(err.contains("strat"), "{err}");
        let nested = "start = [0.0]\nend = [1.0]\n[solver]\nknotz = 3\n";
        assert!(toml::from_str::<GeodesicConfig>(nested).is_err());
        let tagged = "seed = 1\n[data]\nkind = \"sine\"\nn = 10\nwidth = 2\n";
        assert!(toml::from_str::<MakeDataConfig>(tagged).is_err());
    }

    #[test]
    fn resolved_config_parses_back() {
        let text = "start = [0.0, 0.0]\nend = [1.0, 1.0]\n[generator]\nkind = \"model\"\npath = \"m.json\"\n[metric.spec]\nkind = \"identity\"\ndim = 3\n";
        let mut cfg: GeodesicConfig = toml::from_str(text).unwrap();
        cfg.resolve_paths(Path::new("/base"));
        let back: GeodesicConfig = toml::from_str(&toml::to_string_pretty(&cfg).unwrap()).unwrap();
        match back.generator {
            GeneratorSource::Model { path, .. } => assert_eq!(path, Path::new("/base/m.json")),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(back.solver.knots, BvpOptions::default().knots);
    }

    #[test]
    fn missing_model_path_names_the_key() {
        let text = "start = [0.0]\nend = [1.0]\n[generator]\nkind = \"model\"\n";
        let err = toml::from_str::<GeodesicConfig>(text).unwrap_err().to_string();
        assert!(err.contains("path"), "{err}");
    }
}
