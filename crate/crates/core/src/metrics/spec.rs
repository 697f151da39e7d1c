//! JSON descriptions of ambient metrics, discriminated by `"kind"`.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::combine::combine_metrics;
use super::lda::LocalLdaMetricSet;
use super::local_diag::LocalDiagonalMetric;
use super::projected::ProjectedMetric;
use super::support::{SupportFunction, SupportMetric, SupportMetricParams, SupportMode};
use crate::error::{Error, Result};
use crate::geometry::{ConstantMetric, IdentityMetric, MetricField};
use crate::linalg::{matrix_from_rows, matrix_to_rows, points_from_rows};

fn default_mode() -> SupportMode {
    SupportMode::Support
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MetricSpec {
    Identity {
        dim: usize,
    },
    Constant {
        matrix: Vec<Vec<f64>>,
    },
    SupportRbf {
        centers: Vec<Vec<f64>>,
        lambdas: Vec<f64>,
        weights: Vec<f64>,
        alpha: f64,
        epsilon: f64,
        #[serde(default = "default_mode")]
        mode: SupportMode,
    },
    SupportGmm {
        centers: Vec<Vec<f64>>,
        variances: Vec<f64>,
        weights: Vec<f64>,
        alpha: f64,
        epsilon: f64,
        #[serde(default = "default_mode")]
        mode: SupportMode,
    },
    LocalDiag {
        points: Vec<Vec<f64>>,
        sigma: f64,
        epsilon: f64,
    },
    LocalLda {
        base_points: Vec<Vec<f64>>,
        metrics: Vec<Vec<Vec<f64>>>,
        sigma: f64,
    },
    Combination {
        components: Vec<MetricSpec>,
        weights: Vec<f64>,
    },
    Projected {
        projection: Vec<Vec<f64>>,
        center: Vec<f64>,
        inner: Box<MetricSpec>,
    },
}

impl MetricSpec {
    pub fn build(&self) -> Result<Arc<dyn MetricField>> {
        Ok(match self {
            MetricSpec::Identity { dim } => {
                if *dim == 0 {
                    return Err(Error::config("identity metric needs a positive dimension"));
                }
                Arc::new(IdentityMetric::new(*dim))
            }
            MetricSpec::Constant { matrix } => Arc::new(ConstantMetric::new(matrix_from_rows(matrix)?)?),
            MetricSpec::SupportRbf {
                centers,
                lambdas,
                weights,
                alpha,
                epsilon,
                mode,
            } => {
                let h = SupportFunction::PositiveRbf {
                    centers: centers.clone(),
                    lambdas: lambdas.clone(),
                    weights: weights.clone(),
                };
                Arc::new(SupportMetric::new(
                    h,
                    SupportMetricParams {
                        alpha: *alpha,
                        epsilon: *epsilon,
                        mode: *mode,
                    },
                )?)
            }
            MetricSpec::SupportGmm {
                centers,
                variances,
                weights,
                alpha,
                epsilon,
                mode,
            } => {
                let h = SupportFunction::UnnormalizedGmm {
                    centers: centers.clone(),
                    variances: variances.clone(),
                    weights: weights.clone(),
                };
                Arc::new(SupportMetric::new(
                    h,
                    SupportMetricParams {
                        alpha: *alpha,
                        epsilon: *epsilon,
                        mode: *mode,
                    },
                )?)
            }
            MetricSpec::LocalDiag {
                points,
                sigma,
                epsilon,
            } => Arc::new(LocalDiagonalMetric::new(points_from_rows(points), *sigma, *epsilon)?),
            MetricSpec::LocalLda {
                base_points,
                metrics,
                sigma,
            } => Arc::new(LocalLdaMetricSet::new(
                points_from_rows(base_points),
                metrics.iter().map(|m| matrix_from_rows(m)).collect::<Result<_>>()?,
                *sigma,
            )?),
            MetricSpec::Combination { components, weights } => Arc::new(combine_metrics(
                components.iter().map(|c| c.build()).collect::<Result<_>>()?,
                weights.clone(),
            )?),
            MetricSpec::Projected {
                projection,
                center,
                inner,
            } => Arc::new(ProjectedMetric::new(
                matrix_from_rows(projection)?,
                DVector::from_column_slice(center),
                inner.build()?,
            )?),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metric serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        MetricSpec::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

impl From<&SupportMetric> for MetricSpec {
    fn from(m: &SupportMetric) -> Self {
        let SupportMetricParams { alpha, epsilon, mode } = m.params;
        match &m.h {
            SupportFunction::PositiveRbf {
                centers,
                lambdas,
                weights,
            } => MetricSpec::SupportRbf {
                centers: centers.clone(),
                lambdas: lambdas.clone(),
                weights: weights.clone(),
                alpha,
                epsilon,
                mode,
            },
            SupportFunction::UnnormalizedGmm {
                centers,
                variances,
                weights,
            } => MetricSpec::SupportGmm {
                centers: centers.clone(),
                variances: variances.clone(),
                weights: weights.clone(),
                alpha,
                epsilon,
                mode,
            },
        }
    }
}

impl From<&LocalLdaMetricSet> for MetricSpec {
    fn from(s: &LocalLdaMetricSet) -> Self {
        MetricSpec::LocalLda {
            base_points: s.base_points.iter().map(|p| p.iter().copied().collect()).collect(),
            metrics: s.metrics.iter().map(matrix_to_rows).collect(),
            sigma: s.sigma,
        }
    }
}

impl From<&LocalDiagonalMetric> for MetricSpec {
    fn from(m: &LocalDiagonalMetric) -> Self {
        MetricSpec::LocalDiag {
            points: m.points.iter().map(|p| p.iter().copied().collect()).collect(),
            sigma: m.sigma,
            epsilon: m.epsilon,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_nested() {
        let spec = MetricSpec::Combination {
            components: vec![
                MetricSpec::SupportRbf {
                    centers: vec![vec![0.0, 0.1]],
                    lambdas: vec![2.0],
                    weights: vec![0.3],
                    alpha: 1e3,
                    epsilon: 1e-2,
                    mode: SupportMode::Cost,
                },
                MetricSpec::Projected {
                    projection: vec![vec![1.0, 0.0]],
                    center: vec![0.5, 0.5],
                    inner: Box::new(MetricSpec::Identity { dim: 1 }),
                },
            ],
            weights: vec![1.0, 0.1],
        };
        let text = spec.to_json();
        assert!(text.contains("\"kind\": \"combination\""));
        assert_eq!(MetricSpec::from_json(&text).unwrap(), spec);
        let m = spec.build().unwrap();
        assert_eq!(m.dim(), 2);
        assert!(m.eval(&DVector::from_vec(vec![0.2, 0.3])).is_ok());
    }

    #[test]
    fn parse_error_is_reported() {
        let text = r#"{"kind":"combination","components":[{"kind":"identity","dim":"x"}],"weights":[1.0]}"#;
        match MetricSpec::from_json(text) {
            Err(Error::Parse { message, .. }) => assert!(message.contains("invalid type"), "{message}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_contents_are_config_errors() {
        let spec = MetricSpec::SupportRbf {
            centers: vec![vec![0.0]],
            lambdas: vec![-1.0],
            weights: vec![1.0],
            alpha: 1.0,
            epsilon: 1.0,
            mode: SupportMode::Support,
        };
        assert!(spec.build().err().unwrap().is_config());
    }
}
