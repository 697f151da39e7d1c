//! JSON weight files.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matrix_from_rows, matrix_to_rows, points_from_rows};

use super::model::{Generator, LinearPart};
use super::net::{Activation, FeedforwardNet, Layer};
use super::rbf::PositiveRbf;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
    act: Activation,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearFile {
    #[serde(rename = "U")]
    u: Vec<Vec<f64>>,
    lambda: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PrecisionFile {
    centers: Vec<Vec<f64>>,
    gamma: Vec<f64>,
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    zeta: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    layers: Vec<LayerFile>,
    #[serde(default)]
    linear: Option<LinearFile>,
    #[serde(default)]
    precision: Option<PrecisionFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subspace: Option<Vec<Vec<f64>>>,
}

fn parse_err(path: impl Into<String>, e: Error) -> Error {
    let message = match e {
        Error::Config(m) => m,
        other => other.to_string(),
    };
    Error::Parse {
        path: path.into(),
        message,
    }
}

fn to_file(g: &Generator) -> ModelFile {
    ModelFile {
        layers: g
            .net
            .as_ref()
            .map(|n| {
                n.layers
                    .iter()
                    .map(|l| LayerFile {
                        w: matrix_to_rows(&l.w),
                        b: l.b.iter().copied().collect(),
                        act: l.act,
                    })
                    .collect()
            })
            .unwrap_or_default(),
        linear: g.linear.as_ref().map(|l| LinearFile {
            u: matrix_to_rows(&l.u),
            lambda: l.lambda.iter().copied().collect(),
            b: l.b.iter().copied().collect(),
        }),
        precision: g.precision.as_ref().map(|p| PrecisionFile {
            centers: p.centers.iter().map(|c| c.iter().copied().collect()).collect(),
            gamma: p.gamma.clone(),
            w: matrix_to_rows(&p.weights),
            zeta: p.zeta,
        }),
        subspace: g.subspace.as_ref().map(matrix_to_rows),
    }
}

fn from_file(f: ModelFile) -> Result<Generator> {
    let mut layers = Vec::with_capacity(f.layers.len());
    for (i, l) in f.layers.into_iter().enumerate() {
        let w = matrix_from_rows(&l.w).map_err(|e| parse_err(format!("layers[{i}].w"), e))?;
        layers.push(Layer {
            w,
            b: DVector::from_vec(l.b),
            act: l.act,
        });
    }
    let net = if layers.is_empty() {
        None
    } else {
        Some(FeedforwardNet::new(layers).map_err(|e| parse_err("layers", e))?)
    };
    let linear = match f.linear {
        None => None,
        Some(l) => {
            let u = matrix_from_rows(&l.u).map_err(|e| parse_err("linear.U", e))?;
            Some(
                LinearPart::new(u, DVector::from_vec(l.lambda), DVector::from_vec(l.b))
                    .map_err(|e| parse_err("linear", e))?,
            )
        }
    };
    let precision = match f.precision {
        None => None,
        Some(p) => {
            let w = matrix_from_rows(&p.w).map_err(|e| parse_err("precision.W", e))?;
            matrix_from_rows(&p.centers).map_err(|e| parse_err("precision.centers", e))?;
            Some(
                PositiveRbf::new(points_from_rows(&p.centers), p.gamma, w, p.zeta)
                    .map_err(|e| parse_err("precision", e))?,
            )
        }
    };
    let subspace = match f.subspace {
        None => None,
        Some(s) => Some(matrix_from_rows(&s).map_err(|e| parse_err("subspace", e))?),
    };
    Generator::new(net, linear, precision, subspace).map_err(|e| parse_err(".", e))
}

impl Generator {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&to_file(self)).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let f: ModelFile = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        from_file(f)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Generator::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn save_model(generator: &Generator, path: &Path) -> Result<()> {
    generator.save(path)
}

pub fn load_model(path: &Path) -> Result<Generator> {
    Generator::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn full_generator() -> Generator {
        let net = FeedforwardNet::random(&[2, 3, 3], Activation::Tanh, 11).unwrap();
        let lin = LinearPart::new(
            DMatrix::from_row_slice(3, 2, &[0.6, 0.0, 0.8, 0.0, 0.0, 1.0]),
            DVector::from_vec(vec![2.5, 0.1]),
            DVector::from_vec(vec![0.1, 1.0 / 3.0, -2.0]),
        )
        .unwrap();
        let rbf = PositiveRbf::new(
            vec![DVector::from_vec(vec![0.1, 0.2]), DVector::from_vec(vec![-1.0, 1.0 / 7.0])],
            vec![0.3, 1.7],
            DMatrix::from_fn(3, 2, |i, j| 0.1 + (i * 2 + j) as f64 / 3.0),
            1e-6,
        )
        .unwrap();
        Generator::new(Some(net), Some(lin), Some(rbf), None).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let g = full_generator();
        let back = Generator::from_json(&g.to_json()).unwrap();
        assert_eq!(back, g);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let z = DVector::from_fn(2, |_, _| rng.random_range(-5.0..5.0));
            let a = g.forward(&z).unwrap();
            let b = back.forward(&z).unwrap();
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.json");
        let g = full_generator();
        save_model(&g, &p).unwrap();
        assert_eq!(load_model(&p).unwrap(), g);
    }

    #[test]
    fn missing_linear_key_means_no_linear_part() {
        let text = r#"{"layers":[{"w":[[1.0,0.0],[0.0,1.0]],"b":[0.0,0.0],"act":"linear"}]}"#;
        let g = Generator::from_json(text).unwrap();
        assert!(g.linear.is_none());
        assert!(g.precision.is_none());
        let z = DVector::from_vec(vec![0.5, -0.5]);
        assert_eq!(g.forward(&z).unwrap(), z);
    }

    #[test]
    fn null_sections_are_accepted() {
        let text = r#"{"layers":[{"w":[[2.0]],"b":[1.0],"act":"linear"}],"linear":null,"precision":null}"#;
        assert!(Generator::from_json(text).is_ok());
    }

    #[test]
    fn ragged_matrix_names_the_layer() {
        let text = r#"{"layers":[
            {"w":[[1.0,0.0],[0.0,1.0],[1.0,1.0]],"b":[0,0,0],"act":"tanh"},
            {"w":[[1.0,0.0,0.0],[0.0,1.0]],"b":[0,0],"act":"linear"}]}"#;
        match Generator::from_json(text).unwrap_err() {
            Error::Parse { path, .. } => assert_eq!(path, "layers[1].w"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn schema_violations_report_a_path() {
        let text = r#"{"layers":[{"w":[[1.0]],"b":[0.0],"act":"relu"}]}"#;
        match Generator::from_json(text).unwrap_err() {
            Error::Parse { path, .. } => assert!(path.starts_with("layers[0]")),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn empty_layers_with_linear_part() {
        let g = Generator::linear(DMatrix::from_row_slice(2, 1, &[1.0, 2.0]), DVector::from_vec(vec![0.0, 1.0])).unwrap();
        let back = Generator::from_json(&g.to_json()).unwrap();
        assert!(back.net.is_none());
        assert_eq!(back, g);
    }
}
