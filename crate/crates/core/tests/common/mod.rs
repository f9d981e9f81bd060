#![allow(dead_code)]

use cgcf_core::rng::{self, SplitMix64};
use cgcf_core::{BipartiteGraph, Tensor};

pub fn rng(seed: u64) -> SplitMix64 {
    rng::seeded(seed, &[0xdead])
}

pub fn uniform(r: &mut SplitMix64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng::unit_f64(r)
}

pub fn random_tensor(r: &mut SplitMix64, rows: usize, cols: usize) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| uniform(r, -1.0, 1.0))
}

/// Random bipartite graph in which every user and item has at least one edge.
pub fn random_graph(
    r: &mut SplitMix64,
    users: usize,
    items: usize,
    density: f64,
) -> BipartiteGraph {
    let mut edges = Vec::new();
    for u in 0..users {
        for i in 0..items {
            if rng::unit_f64(r) < density {
                edges.push((u, i));
            }
        }
    }
    for u in 0..users {
        edges.push((u, rng::index(r, items)));
    }
    for i in 0..items {
        edges.push((rng::index(r, users), i));
    }
    edges.sort_unstable();
    edges.dedup();
    BipartiteGraph::from_edges(users, items, &edges)
}

/// Dense `(users + items)` square normalized adjacency, users first.
pub fn dense_adjacency(g: &BipartiteGraph) -> Vec<Vec<f64>> {
    let n = g.num_users() + g.num_items();
    let mut a = vec![vec![0.0; n]; n];
    let deg_u: Vec<f64> = (0..g.num_users())
        .map(|u| g.user_items(u).len() as f64)
        .collect();
    let mut deg_i = vec![0.0f64; g.num_items()];
    for (_, i, _) in g.edges() {
        deg_i[i] += 1.0;
    }
    for (u, i, _) in g.edges() {
        let c = 1.0 / (deg_u[u].sqrt() * deg_i[i].sqrt());
        a[u][g.num_users() + i] = c;
        a[g.num_users() + i][u] = c;
    }
    a
}

pub fn dense_matmul(a: &[Vec<f64>], x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .map(|row| {
            (0..x[0].len())
                .map(|c| row.iter().zip(x).map(|(w, xr)| w * xr[c]).sum())
                .collect()
        })
        .collect()
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
