//! Whole-graph summary statistics, averaged over active nodes.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{active_nodes, WeightedGraph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkStats {
    pub active_nodes: usize,
    pub avg_weighted_degree: f64,
    /// Weighted clustering: geometric mean of triangle weights, each weight
    /// divided by the largest weight in the graph.
    pub avg_local_clustering: f64,
    /// Clustering of the unweighted support.
    pub avg_binary_clustering: f64,
    /// Closeness with edge length `1/w`, restricted to each node's reachable
    /// set and scaled by `(r - 1)/(n - 1)`.
    pub avg_closeness: f64,
}

pub fn network_stats(graph: &WeightedGraph) -> Result<NetworkStats> {
    let nodes = active_nodes(graph);
    if nodes.is_empty() {
        return Err(Error::Degenerate("graph has no edges".into()));
    }
    let dense = graph.dense(&nodes);
    let n = nodes.len();
    let adj: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| (0..n).filter(|&j| dense[[i, j]] > 0.0).map(|j| (j, dense[[i, j]])).collect())
        .collect();
    let max_w = dense.iter().copied().fold(0.0, f64::max);

    let mut degree = 0.0;
    let mut weighted = 0.0;
    let mut binary = 0.0;
    let mut closeness = 0.0;
    for i in 0..n {
        degree += adj[i].iter().map(|&(_, w)| w).sum::<f64>();
        let k = adj[i].len();
        if k >= 2 {
            let (mut tri, mut tri_w) = (0usize, 0.0);
            for (a, &(j, wij)) in adj[i].iter().enumerate() {
                for &(l, wil) in &adj[i][a + 1..] {
                    let wjl = dense[[j, l]];
                    if wjl > 0.0 {
                        tri += 1;
                        tri_w += (wij * wil * wjl / (max_w * max_w * max_w)).cbrt();
                    }
                }
            }
            let pairs = (k * (k - 1) / 2) as f64;
            binary += tri as f64 / pairs;
            weighted += tri_w / pairs;
        }
        closeness += node_closeness(&adj, i);
    }
    let nf = n as f64;
    Ok(NetworkStats {
        active_nodes: n,
        avg_weighted_degree: degree / nf,
        avg_local_clustering: weighted / nf,
        avg_binary_clustering: binary / nf,
        avg_closeness: closeness / nf,
    })
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn node_closeness(adj: &[Vec<(usize, f64)>], source: usize) -> f64 {
    let n = adj.len();
    if n < 2 {
        return 0.0;
    }
    let mut dist = vec![f64::INFINITY; n];
    dist[source] = 0.0;
    let mut heap = BinaryHeap::from([Entry(0.0, source)]);
    while let Some(Entry(d, v)) = heap.pop() {
        if d > dist[v] {
            continue;
        }
        for &(u, w) in &adj[v] {
            let nd = d + 1.0 / w;
            if nd < dist[u] {
                dist[u] = nd;
                heap.push(Entry(nd, u));
            }
        }
    }
    let reached: Vec<f64> = dist.into_iter().filter(|d| d.is_finite()).collect();
    let r = reached.len();
    let total: f64 = reached.iter().sum();
    if r < 2 || total == 0.0 {
        return 0.0;
    }
    let rf = (r - 1) as f64;
    rf / total * rf / (n - 1) as f64
}
