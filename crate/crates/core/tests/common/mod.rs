#![allow(dead_code)]

pub mod oracle;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wmgraph::{MetricGraph, PointOnEdge};

/// Connected graph: random spanning tree plus `extra` edges (loops and
/// parallel edges allowed when `loops` is set).
pub fn random_graph(seed: u64, n: usize, extra: usize, loops: bool) -> MetricGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for v in 1..n {
        let u = rng.random_range(0..v);
        edges.push((u, v, rng.random_range(0.3..2.0)));
    }
    for _ in 0..extra {
        let u = rng.random_range(0..n);
        let mut v = rng.random_range(0..n);
        if !loops {
            while v == u && n > 1 {
                v = rng.random_range(0..n);
            }
        }
        edges.push((u, v, rng.random_range(0.3..2.0)));
    }
    MetricGraph::new(n, &edges).unwrap()
}

pub fn random_points(g: &MetricGraph, seed: u64, k: usize) -> Vec<PointOnEdge> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|_| {
            let e = rng.random_range(0..g.n_edges());
            PointOnEdge::new(e, rng.random_range(0.0..1.0) * g.edge(e).length)
        })
        .collect()
}

/// Random points at offsets `k * length / parts`, so distinct points are never
/// closer than `length / parts` along an edge.
pub fn grid_points(g: &MetricGraph, seed: u64, k: usize, parts: usize) -> Vec<PointOnEdge> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|_| {
            let e = rng.random_range(0..g.n_edges());
            let j = rng.random_range(0..=parts) as f64;
            PointOnEdge::new(e, j / parts as f64 * g.edge(e).length)
        })
        .collect()
}
