//! Turns config sections into datasets, metrics and decoders.

use std::path::Path;
use std::sync::Arc;

use latent_geometry::data::{make_synthetic_paraboloid_with, make_synthetic_sine, Dataset};
use latent_geometry::generator::{
    load_model, ExpectedPullbackMetric, FiniteDiffPullbackMetric, Generator, ParaboloidMap, PullbackMetric, SmoothMap,
};
use latent_geometry::metrics::MetricSpec;
use latent_geometry::{DMatrix, DVector, IdentityMetric, MetricField};

use crate::config::{DataSource, GeneratorSource, MetricSource};
use crate::failure::Failure;

/// Config error naming `key` unless `path` is an existing file.
pub fn require_file(path: &Path, key: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::config(format!("{key}: file {} not found", path.display())))
    }
}

pub struct LoadedData {
    pub data: Dataset,
    /// Ground-truth codes of synthetic paraboloid data.
    pub latent: Option<DMatrix<f64>>,
}

pub fn load_data(src: &DataSource, seed: u64) -> Result<LoadedData, Failure> {
    match src {
        DataSource::Csv { path, labeled } => Ok(LoadedData {
            data: {
                require_file(path, "data.path")?;
                Dataset::load_csv(path, *labeled).map_err(|e| Failure::from(e).at("data.path"))?
            },
            latent: None,
        }),
        DataSource::Paraboloid { n_per_component, noise } => {
            let s = make_synthetic_paraboloid_with(*n_per_component, *noise, seed).map_err(|e| Failure::from(e).at("data"))?;
            Ok(LoadedData {
                data: s.data,
                latent: Some(s.latent),
            })
        }
        DataSource::Sine { n, noise, rect } => Ok(LoadedData {
            data: make_synthetic_sine(*n, *noise, *rect, seed).map_err(|e| Failure::from(e).at("data"))?,
            latent: None,
        }),
    }
}

pub enum Decoder {
    Identity,
    Paraboloid(ParaboloidMap),
    Model(Arc<Generator>),
}

impl Decoder {
    pub fn decode(&self, z: &DVector<f64>) -> Result<DVector<f64>, Failure> {
        Ok(match self {
            Decoder::Identity => z.clone(),
            Decoder::Paraboloid(m) => m.value(z)?,
            Decoder::Model(g) => g.forward(z)?,
        })
    }
}

pub struct Latent {
    pub metric: Arc<dyn MetricField>,
    pub decoder: Decoder,
}

fn load_metric(src: &MetricSource) -> Result<Arc<dyn MetricField>, Failure> {
    match (&src.path, &src.spec) {
        (Some(p), None) => {
            require_file(p, "metric.path")?;
            Ok(MetricSpec::load(p)
                .and_then(|s| s.build())
                .map_err(|e| Failure::from(e).at("metric.path"))?)
        }
        (None, Some(s)) => Ok(s.build().map_err(|e| Failure::from(e).at("metric.spec"))?),
        _ => Err(Failure::config("metric: give exactly one of `path` or `spec`")),
    }
}

/// The configured ambient metric, identity when absent.
fn ambient_metric(src: Option<&MetricSource>, dim: usize) -> Result<Arc<dyn MetricField>, Failure> {
    let Some(src) = src else {
        return Ok(Arc::new(IdentityMetric::new(dim)));
    };
    let metric = load_metric(src)?;
    if metric.dim() != dim {
        return Err(Failure::config(format!(
            "metric: dimension {} does not match the ambient dimension {dim}",
            metric.dim()
        )));
    }
    Ok(metric)
}

/// The latent metric and decoder. `latent_dim` fixes the dimension when
/// there is no generator and no metric to read it from.
pub fn build_latent(
    generator: &GeneratorSource,
    metric: Option<&MetricSource>,
    latent_dim: Option<usize>,
) -> Result<Latent, Failure> {
    match generator {
        GeneratorSource::None => {
            let metric = match (metric, latent_dim) {
                (Some(src), _) => load_metric(src)?,
                (None, Some(d)) => Arc::new(IdentityMetric::new(d)),
                (None, None) => return Err(Failure::config("metric: required to fix the latent dimension")),
            };
            Ok(Latent {
                metric,
                decoder: Decoder::Identity,
            })
        }
        GeneratorSource::Paraboloid { a } => {
            let map = ParaboloidMap { a: *a };
            let amb = ambient_metric(metric, 3)?;
            Ok(Latent {
                metric: Arc::new(PullbackMetric::new(map.clone(), amb)?),
                decoder: Decoder::Paraboloid(map),
            })
        }
        GeneratorSource::Model {
            path,
            expected,
            finite_difference,
        } => {
            require_file(path, "generator.path")?;
            let g = Arc::new(load_model(path).map_err(|e| Failure::from(e).at("generator.path"))?);
            let amb = ambient_metric(metric, g.ambient_dim())?;
            let latent: Arc<dyn MetricField> = match (expected, finite_difference) {
                (true, Some(_)) => {
                    return Err(Failure::config(
                        "generator: `expected` and `finite_difference` cannot be combined",
                    ))
                }
                (true, None) => Arc::new(
                    ExpectedPullbackMetric::new(g.clone(), amb).map_err(|e| Failure::from(e).at("generator.expected"))?,
                ),
                (false, Some(h)) => Arc::new(FiniteDiffPullbackMetric::new(g.clone(), amb, *h)?),
                (false, None) => Arc::new(PullbackMetric::new(g.clone(), amb)?),
            };
            Ok(Latent {
                metric: latent,
                decoder: Decoder::Model(g),
            })
        }
    }
}
