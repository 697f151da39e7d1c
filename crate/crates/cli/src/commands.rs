use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use latent_geometry::generator::save_model;
use latent_geometry::graph::{build_latent_graph, graph_shortest_path, sample_prototypes};
use latent_geometry::metrics::{
    fit_local_lda, fit_rbf_support, LocalDiagonalMetric, LocalLdaOptions, MetricSpec, SupportMetric,
    SupportMetricParams,
};
use latent_geometry::sampling::{mcmc_sample, rejection_sample_with, write_points_csv, LatentDensity, McmcOptions};
use latent_geometry::train::{fit_precision_for, train_autoencoder};
use latent_geometry::data::Dataset;
use latent_geometry::{curve_length, solve_geodesic_bvp, Curve, DMatrix, DVector};
use serde_json::json;

use crate::config::{
    FitMetricConfig, FitSpec, GeodesicConfig, MakeDataConfig, SampleConfig, SampleMethod, TrainRunConfig,
};
use crate::failure::Failure;
use crate::setup::{build_latent, load_data, require_file};

/// Quadrature segments for the reported straight-line length.
const LINE_SEGMENTS: usize = 1000;

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::config(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn rows(m: &DMatrix<f64>) -> Vec<DVector<f64>> {
    m.row_iter().map(|r| r.transpose()).collect()
}

fn save_points(points: &[DVector<f64>], path: &Path) -> Result<(), Failure> {
    let file = std::fs::File::create(path)?;
    write_points_csv(points, std::io::BufWriter::new(file))?;
    Ok(())
}

pub fn geodesic(cfg: &GeodesicConfig, out: &Path) -> Result<(), Failure> {
    if cfg.start.len() != cfg.end.len() {
        return Err(Failure::config(format!(
            "end: has {} coordinates but start has {}",
            cfg.end.len(),
            cfg.start.len()
        )));
    }
    let latent = build_latent(&cfg.generator, cfg.metric.as_ref(), Some(cfg.start.len()))?;
    let metric = latent.metric.as_ref();
    let dim = metric.dim();
    if cfg.start.len() != dim {
        return Err(Failure::config(format!(
            "start: expected {dim} coordinates for this latent space, got {}",
            cfg.start.len()
        )));
    }
    let a = DVector::from_column_slice(&cfg.start);
    let b = DVector::from_column_slice(&cfg.end);

    let mut opts = cfg.solver.options();
    let mut graph_length = None;
    if cfg.graph.enabled {
        let g = &cfg.graph;
        let center = match &g.center {
            Some(c) if c.len() != dim => {
                return Err(Failure::config(format!("graph.center: expected {dim} coordinates")));
            }
            Some(c) => DVector::from_column_slice(c),
            None => DVector::zeros(dim),
        };
        let protos: Vec<DVector<f64>> = sample_prototypes(dim, g.samples, g.radius, g.prototypes, cfg.seed)
            .map_err(|e| Failure::from(e).at("graph"))?
            .into_iter()
            .map(|p| p + &center)
            .collect();
        let graph = build_latent_graph(&protos, g.k, metric, g.segments)?;
        let path = graph_shortest_path(&graph, &a, &b, metric)?;
        log::info!("graph path: {} nodes, length {}", path.points.len(), path.length);
        save_points(&path.points, &out.join("graph_path.csv"))?;
        graph_length = Some(path.length);
        opts.graph_init = Some(Arc::new(graph));
    }

    let sol = solve_geodesic_bvp(&a, &b, metric, &opts)?;
    if !sol.converged {
        log::warn!("solver stopped after {} iterations without converging", sol.iterations);
    }
    let line = curve_length(&Curve::straight_line(&a, &b, 2)?, metric, LINE_SEGMENTS)?;
    sol.curve.save_csv(metric, cfg.curve_samples, out.join("curve.csv"))?;
    std::fs::write(out.join("curve.json"), sol.curve.to_json())?;
    let decoded: Vec<DVector<f64>> = (0..cfg.curve_samples.max(2))
        .map(|i| latent.decoder.decode(&sol.curve.eval(i as f64 / (cfg.curve_samples.max(2) - 1) as f64)))
        .collect::<Result<_, _>>()?;
    save_points(&decoded, &out.join("curve_decoded.csv"))?;
    write_json(
        &out.join("summary.json"),
        &json!({
            "length": sol.length,
            "energy": sol.energy,
            "converged": sol.converged,
            "iterations": sol.iterations,
            "residual": sol.residual,
            "straight_line_length": line,
            "graph_length": graph_length,
            "graph_gap": graph_length.map(|g| sol.length / g - 1.0),
            "latent_dim": dim,
            "seed": cfg.seed,
        }),
    )
}

pub fn sample(cfg: &SampleConfig, out: &Path) -> Result<(), Failure> {
    let codes = match &cfg.codes {
        Some(p) => Some(rows(
            &require_file(p, "codes").and_then(|_| {
                Ok(Dataset::load_csv(p, false).map_err(|e| Failure::from(e).at("codes"))?)
            })?
            .points,
        )),
        None => None,
    };
    let hint = cfg
        .center
        .as_ref()
        .map(|c| c.len())
        .or_else(|| codes.as_ref().and_then(|c| c.first().map(|p| p.len())));
    let latent = build_latent(&cfg.generator, cfg.metric.as_ref(), hint)?;
    let dim = latent.metric.dim();
    let density = match (cfg.radius, &codes) {
        (None, Some(codes)) => LatentDensity::covering(latent.metric.clone(), codes).map_err(|e| Failure::from(e).at("codes"))?,
        (Some(r), _) => {
            let center = match (&cfg.center, &codes) {
                (Some(c), _) if c.len() != dim => {
                    return Err(Failure::config(format!("center: expected {dim} coordinates")));
                }
                (Some(c), _) => DVector::from_column_slice(c),
                (None, Some(codes)) if !codes.is_empty() => {
                    codes.iter().fold(DVector::zeros(dim), |s, c| s + c) / codes.len() as f64
                }
                _ => DVector::zeros(dim),
            };
            LatentDensity::with_center(latent.metric.clone(), r, center).map_err(|e| Failure::from(e).at("radius"))?
        }
        (None, None) => return Err(Failure::config("radius: required when no codes are given")),
    };
    if cfg.n == 0 {
        return Err(Failure::config("n: must be positive"));
    }
    let samples = match cfg.method {
        SampleMethod::Mcmc => {
            let opts = McmcOptions {
                step: cfg.mcmc.step,
                burn: cfg.mcmc.burn,
                thin: cfg.mcmc.thin,
                seed: cfg.seed,
                chains: cfg.mcmc.chains,
            };
            mcmc_sample(&density, cfg.n, &opts)?
        }
        SampleMethod::Rejection => rejection_sample_with(&density, cfg.n, cfg.seed, cfg.max_proposals)?,
    };
    log::info!("acceptance rate {:.3}", samples.acceptance_rate());
    samples.save_csv(&out.join("samples.csv"))?;
    samples.diagnostics.save(&out.join("diagnostics.json"))?;
    if cfg.decode {
        let decoded: Vec<DVector<f64>> = samples
            .points
            .iter()
            .map(|z| latent.decoder.decode(z))
            .collect::<Result<_, _>>()?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(out.join("decoded.csv"))?);
        let width = decoded.first().map_or(0, |x| x.len());
        let header: Vec<String> = (1..=width).map(|i| format!("x_{i}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for x in &decoded {
            let row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn fit_metric(cfg: &FitMetricConfig, out: &Path) -> Result<(), Failure> {
    let data = load_data(&cfg.data, cfg.seed)?.data;
    let spec = match &cfg.fit {
        FitSpec::RbfSupport {
            centers,
            kappa,
            alpha,
            epsilon,
            mode,
        } => {
            let h = fit_rbf_support(&data, *centers, *kappa).map_err(|e| Failure::from(e).at("fit"))?;
            let params = SupportMetricParams {
                alpha: *alpha,
                epsilon: *epsilon,
                mode: *mode,
            };
            MetricSpec::from(&SupportMetric::new(h, params).map_err(|e| Failure::from(e).at("fit"))?)
        }
        FitSpec::LocalLda {
            base_points,
            neighbors,
            epsilon,
            iters,
            sigma,
        } => {
            let opts = LocalLdaOptions {
                num_base: *base_points,
                k: *neighbors,
                epsilon: *epsilon,
                iters: *iters,
                sigma: *sigma,
                seed: cfg.seed,
            };
            let fit = fit_local_lda(&data, &opts).map_err(|e| Failure::from(e).at("fit"))?;
            MetricSpec::from(&fit.set)
        }
        FitSpec::LocalDiag { sigma, epsilon } => MetricSpec::from(
            &LocalDiagonalMetric::from_dataset(&data, *sigma, *epsilon).map_err(|e| Failure::from(e).at("fit"))?,
        ),
    };
    spec.save(&out.join("metric.json"))?;
    write_json(
        &out.join("summary.json"),
        &json!({ "points": data.len(), "dim": data.dim(), "seed": cfg.seed }),
    )
}

pub fn train(cfg: &TrainRunConfig, out: &Path) -> Result<(), Failure> {
    let data = load_data(&cfg.data, cfg.seed)?.data;
    let tc = cfg.training.config(cfg.seed);
    let ae = train_autoencoder(&data, &cfg.architecture, &tc)?;
    let rmse = ae.rmse(&data)?;
    log::info!("reconstruction rmse {rmse:.4}");
    let generator = match &cfg.precision {
        Some(p) => fit_precision_for(&ae, &data, p.centers, p.neighbors, p.zeta).map_err(|e| Failure::from(e).at("precision"))?,
        None => ae.generator.clone(),
    };
    save_model(&generator, &out.join("model.json"))?;
    save_points(&rows(&ae.codes(&data)), &out.join("codes.csv"))?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(out.join("losses.csv"))?);
    writeln!(w, "epoch,loss")?;
    for (i, l) in ae.losses.iter().enumerate() {
        writeln!(w, "{},{l}", i + 1)?;
    }
    w.flush()?;
    write_json(
        &out.join("summary.json"),
        &json!({
            "rmse": rmse,
            "final_loss": ae.losses.last(),
            "epochs": tc.epochs,
            "restarts": tc.restarts,
            "points": data.len(),
            "has_precision": generator.has_precision(),
            "seed": cfg.seed,
        }),
    )
}

pub fn make_data(cfg: &MakeDataConfig, out: &Path) -> Result<(), Failure> {
    let loaded = load_data(&cfg.data, cfg.seed)?;
    loaded.data.save_csv(&out.join("data.csv"))?;
    if let Some(z) = &loaded.latent {
        save_points(&rows(z), &out.join("latent.csv"))?;
    }
    Ok(())
}
