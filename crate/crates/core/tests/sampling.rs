use std::sync::Arc;

use latent_geometry::sampling::{mcmc_sample, rejection_sample, LatentDensity, McmcOptions};
use latent_geometry::{DMatrix, DVector, FnMetric, MetricField};

/// Volume element large near `(1, 1)` and small elsewhere, so `q` prefers the
/// other quadrants.
fn bumpy() -> Arc<dyn MetricField> {
    Arc::new(FnMetric::new(2, |z: &DVector<f64>| {
        let r2 = (z[0] - 1.0).powi(2) + (z[1] - 1.0).powi(2);
        DMatrix::identity(2, 2) * (1.0 + 20.0 * (-r2).exp())
    }))
}

fn quadrant_fractions(points: &[DVector<f64>]) -> [f64; 4] {
    let mut counts = [0usize; 4];
    for p in points {
        counts[(p[0] >= 0.0) as usize + 2 * (p[1] >= 0.0) as usize] += 1;
    }
    counts.map(|c| c as f64 / points.len() as f64)
}

#[test]
fn mcmc_and_rejection_agree_on_cell_frequencies() {
    let density = LatentDensity::new(bumpy(), 2.5).unwrap();
    let n = 100_000;
    let mcmc = mcmc_sample(
        &density,
        n,
        &McmcOptions {
            chains: 4,
            ..McmcOptions::default()
        },
    )
    .unwrap();
    let rej = rejection_sample(&density, n, 3).unwrap();
    let (a, b) = (quadrant_fractions(&mcmc.points), quadrant_fractions(&rej.points));
    for k in 0..4 {
        assert!((a[k] - b[k]).abs() < 0.03, "cell {k}: mcmc {} rejection {}", a[k], b[k]);
    }
    // the high-volume quadrant is the least visited
    assert!(b[3] < b[0]);
    assert!(mcmc.points.iter().all(|p| density.contains(p)));
}

#[test]
fn csv_export_is_deterministic() {
    let density = LatentDensity::new(bumpy(), 1.0).unwrap();
    let run = || {
        let s = mcmc_sample(&density, 500, &McmcOptions::default()).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        buf
    };
    let text = run();
    assert_eq!(text, run());
    let text = String::from_utf8(text).unwrap();
    assert_eq!(text.lines().next(), Some("z_1,z_2"));
    assert_eq!(text.lines().count(), 501);
}
