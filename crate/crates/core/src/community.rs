//! Weighted modularity and Leiden community detection.
//!
//! Detection runs on the active nodes only. Each run is an independent
//! randomized Leiden optimization (fast local moving, refinement,
//! aggregation) repeated until a full iteration no longer improves
//! modularity; the best of `runs` is returned.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{active_nodes, WeightedGraph};

/// Smallest modularity gain that counts as an improvement.
const MIN_GAIN: f64 = 1e-12;
/// Randomness of the refinement merge choice.
const THETA: f64 = 0.01;

/// Community assignment of the active nodes of one graph. Community ids are
/// dense and numbered in order of first appearance along `nodes`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    nodes: Vec<usize>,
    membership: Vec<usize>,
}

impl Partition {
    /// `nodes` must be strictly increasing; `membership` may use any ids.
    pub fn new(nodes: Vec<usize>, membership: Vec<usize>) -> Result<Self> {
        if nodes.len() != membership.len() {
            return Err(Error::Dimension(format!(
                "{} nodes but {} memberships",
                nodes.len(),
                membership.len()
            )));
        }
        if nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("partition nodes must be strictly increasing"));
        }
        let mut relabel = std::collections::HashMap::new();
        let membership = membership
            .into_iter()
            .map(|c| {
                let next = relabel.len();
                *relabel.entry(c).or_insert(next)
            })
            .collect();
        Ok(Self { nodes, membership })
    }

    pub fn singletons(nodes: Vec<usize>) -> Result<Self> {
        let n = nodes.len();
        Self::new(nodes, (0..n).collect())
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn membership(&self) -> &[usize] {
        &self.membership
    }

    pub fn community_count(&self) -> usize {
        self.membership.iter().max().map_or(0, |m| m + 1)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.community_count()];
        for &c in &self.membership {
            sizes[c] += 1;
        }
        sizes
    }

    pub fn community_of(&self, node: usize) -> Option<usize> {
        self.nodes
            .binary_search(&node)
            .ok()
            .map(|k| self.membership[k])
    }

    /// Member lists per community, each sorted.
    pub fn communities(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.community_count()];
        for (&v, &c) in self.nodes.iter().zip(&self.membership) {
            out[c].push(v);
        }
        out
    }
}

/// `Q = (1/2m) sum_ij [A_ij - k_i k_j / 2m] delta(c_i, c_j)`.
pub fn modularity(graph: &WeightedGraph, partition: &Partition) -> Result<f64> {
    let two_m = 2.0 * graph.total_weight();
    if two_m <= 0.0 {
        return Err(Error::Degenerate("modularity of an edgeless graph".into()));
    }
    let k = graph.strengths();
    let mut internal = vec![0.0; partition.community_count()];
    let mut total = vec![0.0; partition.community_count()];
    for v in active_nodes(graph) {
        let c = partition
            .community_of(v)
            .ok_or_else(|| Error::invalid(format!("active node {v} has no community")))?;
        total[c] += k[v];
    }
    for (i, j, w) in graph.edges() {
        if let (Some(a), Some(b)) = (partition.community_of(i), partition.community_of(j)) {
            if a == b {
                internal[a] += 2.0 * w;
            }
        }
    }
    Ok(internal
        .iter()
        .zip(&total)
        .map(|(i, t)| i / two_m - (t / two_m).powi(2))
        .sum())
}

/// Working graph for one Leiden level; aggregated nodes carry self-loops.
struct Level {
    adj: Vec<Vec<(usize, f64)>>,
    self_w: Vec<f64>,
    k: Vec<f64>,
}

impl Level {
    fn from_graph(graph: &WeightedGraph, nodes: &[usize]) -> Self {
        let index = |v: usize| nodes.binary_search(&v).expect("active node");
        let mut adj = vec![Vec::new(); nodes.len()];
        for (i, j, w) in graph.edges() {
            let (a, b) = (index(i), index(j));
            adj[a].push((b, w));
            adj[b].push((a, w));
        }
        let k = adj.iter().map(|l| l.iter().map(|e| e.1).sum()).collect();
        Self {
            adj,
            self_w: vec![0.0; nodes.len()],
            k,
        }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    /// Collapses `groups` (dense ids) into single nodes.
    fn aggregate(&self, groups: &[usize], count: usize) -> Self {
        let mut self_w = vec![0.0; count];
        let mut k = vec![0.0; count];
        let mut maps: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); count];
        for v in 0..self.len() {
            let g = groups[v];
            self_w[g] += self.self_w[v];
            k[g] += self.k[v];
            for &(u, w) in &self.adj[v] {
                let h = groups[u];
                if h == g {
                    // Each internal edge is seen from both ends.
                    self_w[g] += 0.5 * w;
                } else {
                    *maps[g].entry(h).or_insert(0.0) += w;
                }
            }
        }
        Self {
            adj: maps.into_iter().map(|m| m.into_iter().collect()).collect(),
            self_w,
            k,
        }
    }
}

fn compact(labels: &mut [usize]) -> usize {
    let mut map = std::collections::HashMap::new();
    for l in labels.iter_mut() {
        let next = map.len();
        *l = *map.entry(*l).or_insert(next);
    }
    map.len()
}

/// Sparse accumulator of edge weight per community.
struct Scratch {
    weight: Vec<f64>,
    seen: Vec<bool>,
    touched: Vec<usize>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self {
            weight: vec![0.0; n],
            seen: vec![false; n],
            touched: Vec::new(),
        }
    }

    fn add(&mut self, c: usize, w: f64) {
        if !self.seen[c] {
            self.seen[c] = true;
            self.touched.push(c);
        }
        self.weight[c] += w;
    }

    fn clear(&mut self) {
        for &c in &self.touched {
            self.weight[c] = 0.0;
            self.seen[c] = false;
        }
        self.touched.clear();
    }
}

/// Queue-based local moving. Returns true if any node changed community.
fn move_nodes_fast(level: &Level, comm: &mut [usize], two_m: f64, rng: &mut ChaCha8Rng) -> bool {
    let n = level.len();
    let mut total = vec![0.0; n];
    let mut members = vec![0usize; n];
    for v in 0..n {
        total[comm[v]] += level.k[v];
        members[comm[v]] += 1;
    }
    let mut empty: Vec<usize> = (0..n).filter(|&c| members[c] == 0).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut queue: std::collections::VecDeque<usize> = order.into_iter().collect();
    let mut queued = vec![true; n];
    let mut scratch = Scratch::new(n);
    let mut changed = false;

    while let Some(v) = queue.pop_front() {
        queued[v] = false;
        let own = comm[v];
        let kv = level.k[v];
        scratch.add(own, 0.0);
        for &(u, w) in &level.adj[v] {
            scratch.add(comm[u], w);
        }
        total[own] -= kv;
        let gain = |c: usize, s: &Scratch| s.weight[c] - kv * total[c] / two_m;
        let own_gain = gain(own, &scratch);
        let (mut best, mut best_gain) = (own, own_gain);
        for &c in &scratch.touched {
            let g = gain(c, &scratch);
            if g > best_gain {
                best = c;
                best_gain = g;
            }
        }
        if members[own] > 1 && 0.0 > best_gain {
            best = *empty.last().expect("an empty community exists when one is shared");
            best_gain = 0.0;
        }
        if best != own && 2.0 * (best_gain - own_gain) / two_m > MIN_GAIN {
            if best == *empty.last().unwrap_or(&usize::MAX) {
                empty.pop();
            }
            members[own] -= 1;
            if members[own] == 0 {
                empty.push(own);
            }
            members[best] += 1;
            comm[v] = best;
            changed = true;
            for &(u, _) in &level.adj[v] {
                if !queued[u] && comm[u] != best {
                    queued[u] = true;
                    queue.push_back(u);
                }
            }
        }
        total[comm[v]] += kv;
        scratch.clear();
    }
    changed
}

/// Merges singletons within each community of `comm` into well-connected
/// subcommunities. Returns refined labels (not compacted).
fn refine(level: &Level, comm: &[usize], two_m: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = level.len();
    let mut refined: Vec<usize> = (0..n).collect();
    let mut r_total = level.k.clone();
    let mut r_size = vec![1usize; n];
    let mut c_total = vec![0.0; n];
    for v in 0..n {
        c_total[comm[v]] += level.k[v];
    }
    // Weight from each node (and refined community) to the rest of its community.
    let mut r_external = vec![0.0; n];
    for v in 0..n {
        r_external[v] = level.adj[v]
            .iter()
            .filter(|&&(u, _)| comm[u] == comm[v])
            .map(|e| e.1)
            .sum();
    }
    let node_external = r_external.clone();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut scratch = Scratch::new(n);
    for v in order {
        let c = comm[v];
        let kv = level.k[v];
        let well = |ext: f64, tot: f64| ext >= tot * (c_total[c] - tot) / two_m;
        if r_size[refined[v]] != 1 || !well(node_external[v], kv) {
            continue;
        }
        for &(u, w) in &level.adj[v] {
            if comm[u] == c {
                scratch.add(refined[u], w);
            }
        }
        let own = refined[v];
        let mut options = vec![(own, 0.0)];
        for &t in &scratch.touched {
            if t == own || !well(r_external[t], r_total[t]) {
                continue;
            }
            let dq = 2.0 * (scratch.weight[t] - kv * r_total[t] / two_m) / two_m;
            if dq >= 0.0 {
                options.push((t, dq));
            }
        }
        let top = options.iter().map(|o| o.1).fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = options.iter().map(|o| ((o.1 - top) / THETA).exp()).collect();
        let mut pick = rng.random::<f64>() * weights.iter().sum::<f64>();
        let mut target = options[options.len() - 1].0;
        for (o, w) in options.iter().zip(&weights) {
            if pick < *w {
                target = o.0;
                break;
            }
            pick -= w;
        }
        if target != own {
            let w_vt = scratch.weight[target];
            r_external[target] += node_external[v] - 2.0 * w_vt;
            r_total[target] += kv;
            r_size[target] += 1;
            r_total[own] = 0.0;
            r_size[own] = 0;
            refined[v] = target;
        }
        scratch.clear();
    }
    refined
}

/// One Leiden optimization from `start` (labels over `level` nodes).
/// Returns the flat labels and the modularity after each pass.
fn leiden_once(
    base: &Level,
    start: Vec<usize>,
    two_m: f64,
    rng: &mut ChaCha8Rng,
    trace: &mut Vec<f64>,
    score: &dyn Fn(&[usize]) -> f64,
) -> Vec<usize> {
    let mut owned: Option<Level> = None;
    let mut comm = start;
    // Maps every base node to its node in the current level.
    let mut node_of: Vec<usize> = (0..base.len()).collect();
    loop {
        let level = owned.as_ref().unwrap_or(base);
        move_nodes_fast(level, &mut comm, two_m, rng);
        let flat: Vec<usize> = node_of.iter().map(|&a| comm[a]).collect();
        trace.push(score(&flat));
        let mut labels = comm.clone();
        let count = compact(&mut labels);
        if count == level.len() {
            return flat;
        }
        let mut refined = refine(level, &comm, two_m, rng);
        let groups = compact(&mut refined);
        let mut next_comm = vec![0; groups];
        for v in 0..level.len() {
            next_comm[refined[v]] = labels[v];
        }
        for a in node_of.iter_mut() {
            *a = refined[*a];
        }
        owned = Some(level.aggregate(&refined, groups));
        comm = next_comm;
    }
}

/// Outcome of one randomized run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run: usize,
    pub partition: Partition,
    pub modularity: f64,
    /// Modularity after every local-moving pass, in order.
    pub trace: Vec<f64>,
}

/// One full randomized run: Leiden iterations until modularity stops
/// improving.
pub fn detect_once(graph: &WeightedGraph, rng: &mut ChaCha8Rng) -> Result<(Partition, Vec<f64>)> {
    let nodes = active_nodes(graph);
    if nodes.is_empty() {
        return Err(Error::Degenerate("community detection on an edgeless graph".into()));
    }
    let two_m = 2.0 * graph.total_weight();
    let base = Level::from_graph(graph, &nodes);
    let score = |labels: &[usize]| {
        let p = Partition::new(nodes.clone(), labels.to_vec()).expect("valid labels");
        modularity(graph, &p).expect("graph has edges")
    };
    let mut trace = Vec::new();
    let mut labels: Vec<usize> = (0..nodes.len()).collect();
    let mut best = score(&labels);
    trace.push(best);
    loop {
        labels = leiden_once(&base, labels, two_m, rng, &mut trace, &score);
        let q = score(&labels);
        if q - best <= MIN_GAIN {
            break;
        }
        best = q;
    }
    Ok((Partition::new(nodes, labels)?, trace))
}

/// Best of `runs` randomized runs. Run `r` draws from stream `r` of `seed`;
/// ties in modularity go to the lowest run index.
pub fn detect(graph: &WeightedGraph, runs: usize, seed: u64) -> Result<RunOutcome> {
    detect_all(graph, runs, seed)?
        .into_iter()
        .reduce(|a, b| if b.modularity > a.modularity { b } else { a })
        .ok_or_else(|| Error::invalid("runs must be at least 1"))
}

/// Every run's outcome, ordered by run index.
pub fn detect_all(graph: &WeightedGraph, runs: usize, seed: u64) -> Result<Vec<RunOutcome>> {
    if active_nodes(graph).is_empty() {
        return Err(Error::Degenerate("community detection on an edgeless graph".into()));
    }
    (0..runs)
        .into_par_iter()
        .map(|run| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(run as u64);
            let (partition, trace) = detect_once(graph, &mut rng)?;
            let modularity = modularity(graph, &partition)?;
            Ok(RunOutcome {
                run,
                partition,
                modularity,
                trace,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeRegistry;
    use std::sync::Arc;

    fn graph(n: usize, edges: &[(usize, usize, f64)]) -> WeightedGraph {
        let reg = Arc::new(NodeRegistry::new((0..n).map(|i| format!("v{i}")).collect()).unwrap());
        WeightedGraph::from_edges(reg, edges.iter().copied()).unwrap()
    }

    fn two_triangles() -> WeightedGraph {
        graph(
            6,
            &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0), (3, 4, 1.0), (4, 5, 1.0), (3, 5, 1.0)],
        )
    }

    #[test]
    fn partition_relabels_densely() {
        let p = Partition::new(vec![2, 5, 7, 9], vec![7, 3, 7, 1]).unwrap();
        assert_eq!(p.membership(), &[0, 1, 0, 2]);
        assert_eq!(p.sizes(), vec![2, 1, 1]);
        assert_eq!(p.community_of(7), Some(0));
        assert_eq!(p.community_of(3), None);
        assert_eq!(p.communities(), vec![vec![2, 7], vec![5], vec![9]]);
        assert!(Partition::new(vec![2, 2], vec![0, 0]).is_err());
    }

    #[test]
    fn modularity_examples() {
        let g = two_triangles();
        let split = Partition::new((0..6).collect(), vec![0, 0, 0, 1, 1, 1]).unwrap();
        assert!((modularity(&g, &split).unwrap() - 0.5).abs() < 1e-15);
        let one = Partition::new((0..6).collect(), vec![0; 6]).unwrap();
        assert!(modularity(&g, &one).unwrap().abs() < 1e-15);
        let single = Partition::singletons((0..6).collect()).unwrap();
        assert!(modularity(&g, &single).unwrap() < 0.0);
        assert!(modularity(&graph(3, &[]), &Partition::singletons(vec![]).unwrap()).is_err());
        let partial = Partition::new(vec![0, 1, 2], vec![0, 0, 0]).unwrap();
        assert!(modularity(&g, &partial).is_err());
    }

    #[test]
    fn modularity_ignores_community_ids() {
        let g = graph(5, &[(0, 1, 2.0), (1, 2, 1.0), (2, 3, 3.0), (3, 4, 0.5), (0, 4, 1.0)]);
        let a = Partition::new((0..5).collect(), vec![0, 0, 1, 1, 2]).unwrap();
        let b = Partition::new((0..5).collect(), vec![9, 9, 4, 4, 1]).unwrap();
        assert_eq!(modularity(&g, &a).unwrap(), modularity(&g, &b).unwrap());
    }

    #[test]
    fn detects_two_triangles() {
        let out = detect(&two_triangles(), 100, 0).unwrap();
        assert_eq!(out.partition.membership(), &[0, 0, 0, 1, 1, 1]);
        assert!((out.modularity - 0.5).abs() < 1e-15);
    }

    #[test]
    fn triangle_is_one_community() {
        let g = graph(4, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]);
        let out = detect(&g, 10, 3).unwrap();
        assert_eq!(out.partition.nodes(), &[0, 1, 2]);
        assert_eq!(out.partition.community_count(), 1);
    }

    #[test]
    fn edgeless_graph_is_rejected() {
        assert!(detect(&graph(3, &[]), 5, 0).is_err());
    }

    #[test]
    fn deterministic_and_best_of_runs() {
        let mut edges = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..40 {
            for j in i + 1..40 {
                let p = if i / 10 == j / 10 { 0.5 } else { 0.05 };
                if rng.random::<f64>() < p {
                    edges.push((i, j, rng.random_range(0.5..2.0)));
                }
            }
        }
        let g = graph(40, &edges);
        let all = detect_all(&g, 20, 5).unwrap();
        let best = detect(&g, 20, 5).unwrap();
        assert_eq!(best.partition, detect(&g, 20, 5).unwrap().partition);
        for r in &all {
            assert!(best.modularity >= r.modularity);
            for w in r.trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-12, "run {} trace {:?}", r.run, r.trace);
            }
        }
        let first_best = all.iter().find(|r| r.modularity == best.modularity).unwrap();
        assert_eq!(first_best.run, best.run);
    }
}
