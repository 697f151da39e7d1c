use std::sync::Arc;

use latent_geometry::generator::{ParaboloidMap, PullbackMetric};
use latent_geometry::graph::{build_latent_graph, graph_shortest_path, sample_prototypes, segment_length, LatentGraph};
use latent_geometry::{
    curve_length, exp_map, log_map, solve_geodesic_bvp, BvpOptions, DVector, ExpOptions, IdentityMetric, LogOptions,
    TangentVector,
};

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

fn paraboloid() -> PullbackMetric<ParaboloidMap> {
    PullbackMetric::new(ParaboloidMap::default(), Arc::new(IdentityMetric::new(3))).unwrap()
}

/// 40 x 40 grid on `[-3, 3]^2` with 8-neighbour edges.
fn grid_graph(metric: &PullbackMetric<ParaboloidMap>) -> LatentGraph {
    let n = 40usize;
    let h = 6.0 / (n - 1) as f64;
    let nodes: Vec<Vec<f64>> = (0..n * n)
        .map(|k| vec![-3.0 + (k % n) as f64 * h, -3.0 + (k / n) as f64 * h])
        .collect();
    let mut adjacency = vec![Vec::new(); n * n];
    for (k, adj) in adjacency.iter_mut().enumerate() {
        let (x, y) = ((k % n) as i64, (k / n) as i64);
        for i in -1i64..=1 {
            for j in -1i64..=1 {
                let (u, w) = (x + i, y + j);
                if (i, j) == (0, 0) || u < 0 || w < 0 || u >= n as i64 || w >= n as i64 {
                    continue;
                }
                let m = w as usize * n + u as usize;
                adj.push((m, segment_length(&v(&nodes[k]), &v(&nodes[m]), metric, 20).unwrap()));
            }
        }
    }
    LatentGraph {
        nodes,
        adjacency,
        k: 8,
        segments: 20,
    }
}

#[test]
fn paraboloid_geodesic_is_no_longer_than_the_grid_path() {
    let metric = paraboloid();
    let grid = grid_graph(&metric);
    // (-2, 0) and (2, 0) are not grid nodes; attach them to the nearest ones
    let (a, b) = (v(&[-2.0, 0.0]), v(&[2.0, 0.0]));
    let oracle = graph_shortest_path(&grid, &a, &b, &metric).unwrap().length;
    let sol = solve_geodesic_bvp(&a, &b, &metric, &BvpOptions::default()).unwrap();
    assert!(sol.length <= oracle * 1.02, "bvp {} grid {oracle}", sol.length);
    let line = curve_length(&latent_geometry::Curve::straight_line(&a, &b, 2).unwrap(), &metric, 1000).unwrap();
    // the meridian through the apex is itself a geodesic
    let fine = curve_length(&sol.curve, &metric, 1000).unwrap();
    assert!(fine <= line * (1.0 + 1e-6), "{fine} vs {line}");
}

#[test]
fn reference_graph_bounds_the_geodesic_from_above() {
    let metric = paraboloid();
    let protos = sample_prototypes(2, 10_000, 4.0, 100, 0).unwrap();
    let graph = build_latent_graph(&protos, 7, &metric, 20).unwrap();
    for (a, b) in [([-2.0, 0.0], [2.0, 0.0]), ([-1.0, -2.0], [1.5, 2.0]), ([0.5, 0.5], [-2.5, 1.0])] {
        let (a, b) = (v(&a), v(&b));
        let path = graph_shortest_path(&graph, &a, &b, &metric).unwrap();
        let sol = solve_geodesic_bvp(&a, &b, &metric, &BvpOptions::default()).unwrap();
        assert!(path.length >= sol.length * 0.98, "graph {} bvp {}", path.length, sol.length);
        let seeded = solve_geodesic_bvp(
            &a,
            &b,
            &metric,
            &BvpOptions {
                graph_init: Some(Arc::new(graph.clone())),
                ..BvpOptions::default()
            },
        )
        .unwrap();
        assert!((seeded.length / sol.length - 1.0).abs() < 0.02);
    }
}

#[test]
fn exp_log_round_trip_on_the_paraboloid() {
    let metric = paraboloid();
    let x = v(&[0.7, -0.4]);
    for dir in [[1.0, 0.0], [0.3, 0.9], [-0.5, -0.5]] {
        let vel = v(&dir) * 0.08;
        let y = exp_map(&x, &TangentVector::new(x.clone(), vel.clone()).unwrap(), &metric, &ExpOptions::default()).unwrap();
        let log = log_map(&x, &y, &metric, &LogOptions::default()).unwrap();
        assert!((log.velocity - &vel).norm() < 1e-3 * vel.norm());
    }
}
