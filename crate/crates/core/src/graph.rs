//! Prototype graphs with Riemannian edge weights and Dijkstra shortest paths.
//!
//! This is the cheap alternative to a boundary-value solve when every metric
//! evaluation is expensive: latent prototypes are linked to their Euclidean
//! nearest neighbours, each edge is weighted by the Riemannian length of the
//! straight segment, and paths between arbitrary points go through the graph.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{kmeans, KMEANS_ITERS};
use crate::error::{Error, Result};
use crate::geometry::{curve_length, Curve, MetricField};

pub const EDGE_SEGMENTS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGraph {
    pub nodes: Vec<Vec<f64>>,
    /// `adjacency[i]` lists `(j, weight)`; every edge appears in both
    /// directions with the same weight.
    pub adjacency: Vec<Vec<(usize, f64)>>,
    pub k: usize,
    pub segments: usize,
}

/// Riemannian length of the segment `a -> b`.
pub fn segment_length<M: MetricField + ?Sized>(
    a: &DVector<f64>,
    b: &DVector<f64>,
    metric: &M,
    segments: usize,
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    curve_length(&Curve::straight_line(a, b, 2)?, metric, segments)
}

/// Indices of the `k` nearest nodes by Euclidean distance, ties to the lower
/// index.
fn euclidean_knn(nodes: &[DVector<f64>], x: &DVector<f64>, k: usize, skip: Option<usize>) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = nodes
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(i, p)| ((p - x).norm_squared(), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.into_iter().take(k).map(|(_, i)| i).collect()
}

pub fn build_latent_graph<M: MetricField + ?Sized>(
    prototypes: &[DVector<f64>],
    k: usize,
    metric: &M,
    segments: usize,
) -> Result<LatentGraph> {
    let n = prototypes.len();
    if n == 0 {
        return Err(Error::config("a graph needs at least one node"));
    }
    if k == 0 && n > 1 {
        return Err(Error::config("graph neighbour count k must be positive"));
    }
    if segments == 0 {
        return Err(Error::config("edge quadrature needs at least one segment"));
    }
    let d = metric.dim();
    if let Some(p) = prototypes.iter().find(|p| p.len() != d) {
        return Err(Error::config(format!(
            "prototype dimension {} does not match metric dimension {d}",
            p.len()
        )));
    }
    let kk = k.min(n.saturating_sub(1));
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for i in 0..n {
        for j in euclidean_knn(prototypes, &prototypes[i], kk, Some(i)) {
            edges.push((i.min(j), i.max(j)));
        }
    }
    edges.sort_unstable();
    edges.dedup();
    let weights: Vec<f64> = edges
        .par_iter()
        .map(|&(i, j)| segment_length(&prototypes[i], &prototypes[j], metric, segments))
        .collect::<Result<_>>()?;
    let mut adjacency = vec![Vec::new(); n];
    for (&(i, j), &w) in edges.iter().zip(&weights) {
        adjacency[i].push((j, w));
        adjacency[j].push((i, w));
    }
    for list in adjacency.iter_mut() {
        list.sort_by_key(|e| e.0);
    }
    Ok(LatentGraph {
        nodes: prototypes.iter().map(|p| p.iter().cloned().collect()).collect(),
        adjacency,
        k: kk,
        segments,
    })
}

#[derive(Copy, Clone, PartialEq)]
struct Frontier {
    dist: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl LatentGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.nodes[i])
    }

    pub fn dim(&self) -> usize {
        self.nodes.first().map_or(0, Vec::len)
    }

    fn node_vectors(&self) -> Vec<DVector<f64>> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    /// Single-source distances and predecessor links.
    pub fn dijkstra(&self, source: usize) -> (Vec<f64>, Vec<Option<usize>>) {
        let n = self.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![None; n];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Frontier { dist: 0.0, node: source });
        while let Some(Frontier { dist: du, node: u }) = heap.pop() {
            if du > dist[u] {
                continue;
            }
            for &(v, w) in &self.adjacency[u] {
                let alt = du + w;
                if alt < dist[v] {
                    dist[v] = alt;
                    prev[v] = Some(u);
                    heap.push(Frontier { dist: alt, node: v });
                }
            }
        }
        (dist, prev)
    }

    /// Connected-component label of every node, numbered by lowest member.
    pub fn components(&self) -> Vec<usize> {
        let n = self.len();
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            label[start] = next;
            while let Some(u) = stack.pop() {
                for &(v, _) in &self.adjacency[u] {
                    if label[v] == usize::MAX {
                        label[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        label
    }

    /// Node sequence of the shortest path between two nodes.
    pub fn node_path(&self, from: usize, to: usize) -> Result<(Vec<usize>, f64)> {
        let (dist, prev) = self.dijkstra(from);
        if !dist[to].is_finite() {
            let comp = self.components();
            return Err(Error::Unreachable {
                from,
                from_component: comp[from],
                to,
                to_component: comp[to],
            });
        }
        let mut path = vec![to];
        let mut cur = to;
        while let Some(p) = prev[cur] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        Ok((path, dist[to]))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let g: LatentGraph = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        let n = g.nodes.len();
        if g.adjacency.len() != n {
            return Err(Error::Parse {
                path: "adjacency".into(),
                message: format!("{} adjacency lists for {n} nodes", g.adjacency.len()),
            });
        }
        for (i, list) in g.adjacency.iter().enumerate() {
            if let Some((j, w)) = list.iter().find(|(j, w)| *j >= n || !w.is_finite() || *w < 0.0) {
                return Err(Error::Parse {
                    path: format!("adjacency[{i}]"),
                    message: format!("invalid edge to {j} with weight {w}"),
                });
            }
        }
        Ok(g)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GraphPath {
    /// `a`, the interior graph nodes, then `b`.
    pub points: Vec<DVector<f64>>,
    /// Graph nodes visited, including both attachment nodes.
    pub nodes: Vec<usize>,
    /// Sum of straight-segment Riemannian lengths along `points`.
    pub length: f64,
}

fn attach<M: MetricField + ?Sized>(
    graph: &LatentGraph,
    nodes: &[DVector<f64>],
    x: &DVector<f64>,
    metric: &M,
) -> Result<usize> {
    let candidates = euclidean_knn(nodes, x, graph.k.max(1), None);
    let mut best = (candidates[0], f64::INFINITY);
    for &c in &candidates {
        let d = segment_length(x, &nodes[c], metric, graph.segments)?;
        if d < best.1 || (d == best.1 && c < best.0) {
            best = (c, d);
        }
    }
    Ok(best.0)
}

/// Discrete shortest path from `a` to `b` through the graph.
///
/// Each end point is attached to the node of its Euclidean kNN set that is
/// closest in straight-line Riemannian length; Dijkstra runs between the two
/// attachment nodes, which are then replaced by `a` and `b`.
pub fn graph_shortest_path<M: MetricField + ?Sized>(
    graph: &LatentGraph,
    a: &DVector<f64>,
    b: &DVector<f64>,
    metric: &M,
) -> Result<GraphPath> {
    if graph.is_empty() {
        return Err(Error::config("graph has no nodes"));
    }
    if a.len() != graph.dim() || b.len() != graph.dim() || metric.dim() != graph.dim() {
        return Err(Error::config(format!(
            "dimension mismatch: graph {}, endpoints {}/{}, metric {}",
            graph.dim(),
            a.len(),
            b.len(),
            metric.dim()
        )));
    }
    if a == b {
        return Ok(GraphPath {
            points: vec![a.clone(), b.clone()],
            nodes: Vec::new(),
            length: 0.0,
        });
    }
    let nodes = graph.node_vectors();
    let from = attach(graph, &nodes, a, metric)?;
    let to = attach(graph, &nodes, b, metric)?;
    let (path, _) = graph.node_path(from, to)?;
    let mut points = Vec::with_capacity(path.len().max(2));
    points.push(a.clone());
    if path.len() > 2 {
        points.extend(path[1..path.len() - 1].iter().map(|&i| nodes[i].clone()));
    }
    points.push(b.clone());
    let mut length = 0.0;
    for w in points.windows(2) {
        length += segment_length(&w[0], &w[1], metric, graph.segments)?;
    }
    Ok(GraphPath {
        points,
        nodes: path,
        length,
    })
}

/// Natural cubic spline through `points` with uniform parametrization.
pub fn spline_through(points: &[DVector<f64>]) -> Result<Curve> {
    Curve::new(points.to_vec())
}

/// Uniform samples in the ball of `radius` around the origin.
pub fn uniform_in_ball(n: usize, dim: usize, radius: f64, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let unit = Uniform::new(0.0f64, 1.0).expect("valid range");
    (0..n)
        .map(|_| {
            let g = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
            let r = radius * unit.sample(rng).powf(1.0 / dim as f64);
            let norm = g.norm();
            if norm > 0.0 {
                g * (r / norm)
            } else {
                g
            }
        })
        .collect()
}

/// Prototypes as k-means centers of `samples` uniform draws in a ball.
pub fn sample_prototypes(
    dim: usize,
    samples: usize,
    radius: f64,
    prototypes: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = uniform_in_ball(samples, dim, radius, &mut rng);
    Ok(kmeans(&pts, prototypes, seed, KMEANS_ITERS)?.centers)
}

/// All-pairs distances by Floyd-Warshall; the brute-force reference for
/// Dijkstra.
pub fn floyd_warshall(graph: &LatentGraph) -> Vec<Vec<f64>> {
    let n = graph.len();
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for i in 0..n {
        d[i][i] = 0.0;
        for &(j, w) in &graph.adjacency[i] {
            d[i][j] = d[i][j].min(w);
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let alt = d[i][k] + d[k][j];
                if alt < d[i][j] {
                    d[i][j] = alt;
                }
            }
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{FnMetric, IdentityMetric};
    use nalgebra::DMatrix;
    use rand::Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn random_points(n: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| v(&[rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])).collect()
    }

    fn wavy() -> FnMetric {
        FnMetric::new(2, |z| DMatrix::identity(2, 2) * (1.5 + (2.0 * z[0]).sin() * z[1].cos()))
    }

    #[test]
    fn identity_weights_are_euclidean() {
        let pts = random_points(30, 1);
        let g = build_latent_graph(&pts, 4, &IdentityMetric::new(2), EDGE_SEGMENTS).unwrap();
        for (i, list) in g.adjacency.iter().enumerate() {
            assert!(!list.is_empty());
            for &(j, w) in list {
                assert!((w - (&pts[i] - &pts[j]).norm()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weights_match_trapezoid_reintegration() {
        let pts = random_points(5, 2);
        let m = wavy();
        let segs = 20;
        let g = build_latent_graph(&pts, 2, &m, segs).unwrap();
        for (i, list) in g.adjacency.iter().enumerate() {
            for &(j, w) in list {
                let (a, b) = (&pts[i], &pts[j]);
                let delta = b - a;
                let speed = |t: f64| {
                    let z = a + &delta * t;
                    let f = 1.5 + (2.0 * z[0]).sin() * z[1].cos();
                    // every evaluation carries trace-relative jitter
                    let f = f * (1.0 + 1e-10);
                    (f * delta.norm_squared()).sqrt()
                };
                let mut oracle = 0.5 * (speed(0.0) + speed(1.0));
                for q in 1..segs {
                    oracle += speed(q as f64 / segs as f64);
                }
                oracle /= segs as f64;
                assert!((w - oracle).abs() < 1e-12, "{w} vs {oracle}");
            }
        }
    }

    #[test]
    fn graph_is_symmetric() {
        let g = build_latent_graph(&random_points(25, 3), 3, &wavy(), 10).unwrap();
        for (i, list) in g.adjacency.iter().enumerate() {
            for &(j, w) in list {
                assert!(g.adjacency[j].iter().any(|&(k, w2)| k == i && w2 == w));
            }
        }
    }

    #[test]
    fn k_at_least_n_gives_complete_graph() {
        let g = build_latent_graph(&random_points(4, 4), 10, &IdentityMetric::new(2), 5).unwrap();
        assert!(g.adjacency.iter().all(|l| l.len() == 3));
    }

    #[test]
    fn dijkstra_matches_floyd_warshall() {
        let g = build_latent_graph(&random_points(20, 5), 3, &wavy(), 10).unwrap();
        let fw = floyd_warshall(&g);
        for i in 0..g.len() {
            let (d, _) = g.dijkstra(i);
            for j in 0..g.len() {
                if fw[i][j].is_finite() {
                    assert!((d[j] - fw[i][j]).abs() <= 1e-12 * fw[i][j].max(1.0));
                } else {
                    assert!(d[j].is_infinite());
                }
            }
        }
    }

    #[test]
    fn two_node_graph_path() {
        let pts = vec![v(&[0.0, 0.0]), v(&[1.0, 0.0])];
        let g = build_latent_graph(&pts, 1, &IdentityMetric::new(2), 5).unwrap();
        let a = v(&[-0.1, 0.0]);
        let b = v(&[1.1, 0.0]);
        let p = graph_shortest_path(&g, &a, &b, &IdentityMetric::new(2)).unwrap();
        assert_eq!(p.points, vec![a, b]);
        assert_eq!(p.nodes, vec![0, 1]);
    }

    #[test]
    fn same_endpoints_give_zero_length() {
        let g = build_latent_graph(&random_points(6, 6), 2, &IdentityMetric::new(2), 5).unwrap();
        let a = v(&[0.2, 0.2]);
        let p = graph_shortest_path(&g, &a, &a, &IdentityMetric::new(2)).unwrap();
        assert_eq!(p.points.len(), 2);
        assert_eq!(p.length, 0.0);
    }

    #[test]
    fn disconnected_graph_names_components() {
        let pts = vec![v(&[0.0, 0.0]), v(&[0.1, 0.0]), v(&[10.0, 0.0]), v(&[10.1, 0.0])];
        let g = build_latent_graph(&pts, 1, &IdentityMetric::new(2), 5).unwrap();
        let err = graph_shortest_path(&g, &v(&[0.0, 0.05]), &v(&[10.0, 0.05]), &IdentityMetric::new(2))
            .unwrap_err();
        match err {
            Error::Unreachable { from_component, to_component, .. } => {
                assert_ne!(from_component, to_component)
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn triangle_inequality_on_graph_distances() {
        let g = build_latent_graph(&random_points(15, 7), 3, &wavy(), 10).unwrap();
        let fw = floyd_warshall(&g);
        for a in 0..15 {
            for b in 0..15 {
                for c in 0..15 {
                    assert!(fw[a][c] <= fw[a][b] + fw[b][c] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn spline_passes_through_path() {
        let g = build_latent_graph(&random_points(30, 8), 4, &wavy(), 10).unwrap();
        let p = graph_shortest_path(&g, &v(&[-1.8, -1.8]), &v(&[1.8, 1.7]), &wavy()).unwrap();
        let c = spline_through(&p.points).unwrap();
        for (i, k) in p.points.iter().enumerate() {
            assert!((c.eval(c.knot_parameter(i)) - k).norm() < 1e-12);
        }
    }

    #[test]
    fn json_round_trip() {
        let g = build_latent_graph(&random_points(8, 9), 2, &wavy(), 10).unwrap();
        assert_eq!(LatentGraph::from_json(&g.to_json()).unwrap(), g);
        assert!(LatentGraph::from_json(r#"{"nodes":[[0.0]],"adjacency":[[[3,1.0]]],"k":1,"segments":2}"#).is_err());
    }

    #[test]
    fn ball_samples_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pts = uniform_in_ball(1000, 3, 4.0, &mut rng);
        assert!(pts.iter().all(|p| p.norm() <= 4.0));
    }
}
