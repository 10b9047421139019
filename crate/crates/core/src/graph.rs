//! Graph containers shared by every stage: node registry, sparse symmetric
//! weighted graphs, multiplex snapshots, and the layer-fusion rule.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense mapping between node labels and integer ids `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeRegistry {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl NodeRegistry {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(labels.len());
        for (i, label) in labels.iter().enumerate() {
            if index.insert(label.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate node label '{label}'")));
            }
        }
        Ok(Self { labels, index })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn require(&self, label: &str) -> Result<usize> {
        self.id(label)
            .ok_or_else(|| Error::invalid(format!("unknown node label '{label}'")))
    }
}

pub(crate) fn same_registry(a: &Arc<NodeRegistry>, b: &Arc<NodeRegistry>) -> bool {
    Arc::ptr_eq(a, b) || a.labels == b.labels
}

/// Time-step label. Integer labels (years, step numbers) order numerically,
/// text labels (e.g. `2006-08`) lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeLabel {
    Int(i64),
    Text(String),
}

impl TimeLabel {
    /// Strict ordering between two labels of the same kind.
    pub fn precedes(&self, other: &TimeLabel) -> Option<bool> {
        match (self, other) {
            (TimeLabel::Int(a), TimeLabel::Int(b)) => Some(a < b),
            (TimeLabel::Text(a), TimeLabel::Text(b)) => Some(a < b),
            _ => None,
        }
    }
}

impl fmt::Display for TimeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeLabel::Int(v) => write!(f, "{v}"),
            TimeLabel::Text(s) => f.write_str(s),
        }
    }
}

/// Undirected weighted graph without self-loops. Only strictly positive
/// weights are stored; keys are `(i, j)` with `i < j`.
#[derive(Debug, Clone)]
pub struct WeightedGraph {
    registry: Arc<NodeRegistry>,
    edges: BTreeMap<(usize, usize), f64>,
}

fn edge_key(i: usize, j: usize) -> (usize, usize) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

impl WeightedGraph {
    pub fn new(registry: Arc<NodeRegistry>) -> Self {
        Self {
            registry,
            edges: BTreeMap::new(),
        }
    }

    pub fn from_edges<I>(registry: Arc<NodeRegistry>, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut g = Self::new(registry);
        for (i, j, w) in edges {
            g.add_weight(i, j, w)?;
        }
        Ok(g)
    }

    fn check(&self, i: usize, j: usize, w: f64) -> Result<()> {
        let n = self.registry.len();
        if i >= n || j >= n {
            return Err(Error::invalid(format!(
                "edge ({i},{j}) outside registry of {n} nodes"
            )));
        }
        if i == j {
            return Err(Error::invalid(format!(
                "self-loop on node '{}'",
                self.registry.label(i)
            )));
        }
        if !w.is_finite() || w < 0.0 {
            return Err(Error::invalid(format!(
                "edge ({},{}) has weight {w}; weights must be finite and nonnegative",
                self.registry.label(i),
                self.registry.label(j)
            )));
        }
        Ok(())
    }

    /// Adds `w` to the weight of edge `{i, j}`.
    pub fn add_weight(&mut self, i: usize, j: usize, w: f64) -> Result<()> {
        self.check(i, j, w)?;
        if w > 0.0 {
            *self.edges.entry(edge_key(i, j)).or_insert(0.0) += w;
        }
        Ok(())
    }

    /// Overwrites the weight of edge `{i, j}`; a zero weight removes the edge.
    pub fn set_weight(&mut self, i: usize, j: usize, w: f64) -> Result<()> {
        self.check(i, j, w)?;
        if w > 0.0 {
            self.edges.insert(edge_key(i, j), w);
        } else {
            self.edges.remove(&edge_key(i, j));
        }
        Ok(())
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        self.edges.get(&edge_key(i, j)).copied().unwrap_or(0.0)
    }

    pub fn registry(&self) -> &Arc<NodeRegistry> {
        &self.registry
    }

    pub fn node_count(&self) -> usize {
        self.registry.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Edges as `(i, j, w)` with `i < j`, in ascending key order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.edges.iter().map(|(&(i, j), &w)| (i, j, w))
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.values().sum()
    }

    /// Weighted degree of every registry node.
    pub fn strengths(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.node_count()];
        for (i, j, w) in self.edges() {
            s[i] += w;
            s[j] += w;
        }
        s
    }

    /// Neighbour lists `(neighbour, weight)` for every registry node.
    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.node_count()];
        for (i, j, w) in self.edges() {
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
        adj
    }

    pub fn map_weights(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let mut out = Self::new(self.registry.clone());
        for (i, j, w) in self.edges() {
            out.set_weight(i, j, f(w))?;
        }
        Ok(out)
    }

    /// Subgraph induced on `nodes` (ids stay registry ids).
    pub fn restrict(&self, nodes: &[usize]) -> Self {
        let mut keep = vec![false; self.node_count()];
        for &v in nodes {
            keep[v] = true;
        }
        let edges = self
            .edges
            .iter()
            .filter(|(&(i, j), _)| keep[i] && keep[j])
            .map(|(&k, &w)| (k, w))
            .collect();
        Self {
            registry: self.registry.clone(),
            edges,
        }
    }

    /// Dense adjacency over `nodes`, rows and columns in the given order.
    pub fn dense(&self, nodes: &[usize]) -> Array2<f64> {
        let mut pos = vec![usize::MAX; self.node_count()];
        for (p, &v) in nodes.iter().enumerate() {
            pos[v] = p;
        }
        let m = nodes.len();
        let mut a = Array2::zeros((m, m));
        for (i, j, w) in self.edges() {
            let (pi, pj) = (pos[i], pos[j]);
            if pi != usize::MAX && pj != usize::MAX {
                a[[pi, pj]] = w;
                a[[pj, pi]] = w;
            }
        }
        a
    }
}

/// One time step of a multiplex network: a raw and an ancillary ("add")
/// graph per proximity layer.
#[derive(Debug, Clone)]
pub struct MultiplexSnapshot {
    pub t: TimeLabel,
    raw: Vec<WeightedGraph>,
    add: Vec<WeightedGraph>,
}

impl MultiplexSnapshot {
    pub fn new(t: TimeLabel, raw: Vec<WeightedGraph>, add: Vec<WeightedGraph>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::invalid("a snapshot needs at least one layer"));
        }
        if raw.len() != add.len() {
            return Err(Error::Dimension(format!(
                "{} raw layers but {} ancillary layers",
                raw.len(),
                add.len()
            )));
        }
        let reg = raw[0].registry().clone();
        if raw
            .iter()
            .chain(add.iter())
            .any(|g| !same_registry(g.registry(), &reg))
        {
            return Err(Error::invalid("snapshot layers use different node registries"));
        }
        Ok(Self { t, raw, add })
    }

    pub fn layer_count(&self) -> usize {
        self.raw.len()
    }

    pub fn raw(&self) -> &[WeightedGraph] {
        &self.raw
    }

    pub fn add(&self) -> &[WeightedGraph] {
        &self.add
    }

    pub fn registry(&self) -> &Arc<NodeRegistry> {
        self.raw[0].registry()
    }
}

/// Ordered network time series of multiplex snapshots.
#[derive(Debug, Clone)]
pub struct MultiplexSeries {
    snapshots: Vec<MultiplexSnapshot>,
}

impl MultiplexSeries {
    pub fn new(snapshots: Vec<MultiplexSnapshot>) -> Result<Self> {
        if snapshots.len() < 2 {
            return Err(Error::invalid(format!(
                "a series needs at least 2 time steps, got {}",
                snapshots.len()
            )));
        }
        let h = snapshots[0].layer_count();
        let reg = snapshots[0].registry().clone();
        for pair in snapshots.windows(2) {
            match pair[0].t.precedes(&pair[1].t) {
                Some(true) => {}
                Some(false) => {
                    return Err(Error::invalid(format!(
                        "time labels must increase strictly: '{}' then '{}'",
                        pair[0].t, pair[1].t
                    )))
                }
                None => return Err(Error::invalid("time labels mix integers and text")),
            }
        }
        for s in &snapshots {
            if s.layer_count() != h {
                return Err(Error::Dimension(format!(
                    "snapshot '{}' has {} layers, expected {h}",
                    s.t,
                    s.layer_count()
                )));
            }
            if !same_registry(s.registry(), &reg) {
                return Err(Error::invalid("snapshots use different node registries"));
            }
        }
        Ok(Self { snapshots })
    }

    pub fn snapshots(&self) -> &[MultiplexSnapshot] {
        &self.snapshots
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn layer_count(&self) -> usize {
        self.snapshots[0].layer_count()
    }

    pub fn registry(&self) -> &Arc<NodeRegistry> {
        self.snapshots[0].registry()
    }
}

/// Layer-combination parameters: increments `w_1..w_H` (with `w_1 = 1`) and
/// the ancillary coefficient `w_add`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    w: Vec<f64>,
    w_add: f64,
}

impl FusionWeights {
    pub fn new(w: Vec<f64>, w_add: f64) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::invalid("fusion weights need at least one layer"));
        }
        if w[0] != 1.0 {
            return Err(Error::invalid(format!("w_1 must be exactly 1, got {}", w[0])));
        }
        if let Some(bad) = w.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(format!("increment {bad} is not a finite nonnegative value")));
        }
        if !(0.0..=1.0).contains(&w_add) {
            return Err(Error::invalid(format!("w_add must lie in [0,1], got {w_add}")));
        }
        Ok(Self { w, w_add })
    }

    /// Builds weights from the free increments `w_2..w_H`.
    pub fn from_tail(tail: &[f64], w_add: f64) -> Result<Self> {
        let mut w = Vec::with_capacity(tail.len() + 1);
        w.push(1.0);
        w.extend_from_slice(tail);
        Self::new(w, w_add)
    }

    /// Skips validation. Only meant for tests probing linearity with
    /// rescaled increments.
    #[doc(hidden)]
    pub fn new_unchecked(w: Vec<f64>, w_add: f64) -> Self {
        Self { w, w_add }
    }

    pub fn layer_count(&self) -> usize {
        self.w.len()
    }

    pub fn increments(&self) -> &[f64] {
        &self.w
    }

    pub fn w_add(&self) -> f64 {
        self.w_add
    }

    /// Cumulative layer weights `W_h = w_1 + ... + w_h`.
    pub fn cumulative(&self) -> Vec<f64> {
        self.w
            .iter()
            .scan(0.0, |acc, &x| {
                *acc += x;
                Some(*acc)
            })
            .collect()
    }
}

/// Combines the layers of a snapshot into one weighted graph:
/// `A = sum_h W_h (A_raw_h + w_add * A_add_h)`.
pub fn fuse(snapshot: &MultiplexSnapshot, weights: &FusionWeights) -> Result<WeightedGraph> {
    if snapshot.layer_count() != weights.layer_count() {
        return Err(Error::Dimension(format!(
            "snapshot has {} layers but weights cover {}",
            snapshot.layer_count(),
            weights.layer_count()
        )));
    }
    let cum = weights.cumulative();
    let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (h, big_w) in cum.iter().enumerate() {
        for (i, j, w) in snapshot.raw[h].edges() {
            *acc.entry((i, j)).or_insert(0.0) += big_w * w;
        }
        if weights.w_add != 0.0 {
            let c = big_w * weights.w_add;
            for (i, j, w) in snapshot.add[h].edges() {
                *acc.entry((i, j)).or_insert(0.0) += c * w;
            }
        }
    }
    acc.retain(|_, w| *w > 0.0);
    Ok(WeightedGraph {
        registry: snapshot.registry().clone(),
        edges: acc,
    })
}

/// Nodes with at least one incident positive-weight edge, ascending.
pub fn active_nodes(graph: &WeightedGraph) -> Vec<usize> {
    let mut seen = vec![false; graph.node_count()];
    for (i, j, _) in graph.edges() {
        seen[i] = true;
        seen[j] = true;
    }
    seen.iter()
        .enumerate()
        .filter_map(|(v, &s)| s.then_some(v))
        .collect()
}

/// Nodes active in both graphs, with both graphs restricted to them.
pub fn coexist_restrict(
    g_t: &WeightedGraph,
    g_next: &WeightedGraph,
) -> Result<(Vec<usize>, WeightedGraph, WeightedGraph)> {
    if !same_registry(g_t.registry(), g_next.registry()) {
        return Err(Error::invalid("graphs use different node registries"));
    }
    let nodes = intersect_sorted(&active_nodes(g_t), &active_nodes(g_next));
    let a = g_t.restrict(&nodes);
    let b = g_next.restrict(&nodes);
    Ok((nodes, a, b))
}

pub(crate) fn intersect_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// Row-wise cosine similarity of a square adjacency. Any entry involving a
/// zero row is 0, its diagonal included.
pub fn cosine_similarity_matrix(adj: &Array2<f64>) -> Array2<f64> {
    let gram = adj.dot(&adj.t());
    let norms: Vec<f64> = gram.diag().iter().map(|g| g.sqrt()).collect();
    let m = adj.nrows();
    let mut s = Array2::zeros((m, m));
    for i in 0..m {
        if norms[i] == 0.0 {
            continue;
        }
        for j in 0..m {
            if norms[j] == 0.0 {
                continue;
            }
            s[[i, j]] = if i == j {
                1.0
            } else {
                gram[[i, j]] / (norms[i] * norms[j])
            };
        }
    }
    s
}

/// Weighted degrees divided by the total weight; all zeros when the total is 0.
pub fn normalized_degrees(adj: &Array2<f64>) -> Array1<f64> {
    let rows = adj.sum_axis(ndarray::Axis(1));
    let total: f64 = rows.sum();
    if total == 0.0 {
        return Array1::zeros(adj.nrows());
    }
    rows / total
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn registry(labels: &[&str]) -> Arc<NodeRegistry> {
        Arc::new(NodeRegistry::new(labels.iter().map(|s| s.to_string()).collect()).unwrap())
    }

    fn graph(reg: &Arc<NodeRegistry>, edges: &[(usize, usize, f64)]) -> WeightedGraph {
        WeightedGraph::from_edges(reg.clone(), edges.iter().copied()).unwrap()
    }

    #[test]
    fn registry_rejects_duplicates() {
        assert!(NodeRegistry::new(vec!["a".into(), "a".into()]).is_err());
    }

    #[test]
    fn graph_rejects_self_loops_and_negative_weights() {
        let reg = registry(&["a", "b"]);
        let mut g = WeightedGraph::new(reg);
        assert!(g.add_weight(0, 0, 1.0).is_err());
        assert!(g.add_weight(0, 1, -1.0).is_err());
        assert!(g.add_weight(0, 1, f64::NAN).is_err());
        g.add_weight(1, 0, 0.0).unwrap();
        assert!(g.is_empty());
        g.add_weight(1, 0, 2.0).unwrap();
        assert_eq!(g.weight(0, 1), 2.0);
        assert_eq!(g.weight(1, 0), 2.0);
    }

    #[test]
    fn fuse_with_zero_add_coefficient_drops_add_layer() {
        let reg = registry(&["a", "b"]);
        let snap = MultiplexSnapshot::new(
            TimeLabel::Int(1),
            vec![graph(&reg, &[(0, 1, 2.0)])],
            vec![graph(&reg, &[(0, 1, 5.0)])],
        )
        .unwrap();
        let w = FusionWeights::new(vec![1.0], 0.0).unwrap();
        let fused = fuse(&snap, &w).unwrap();
        assert_eq!(fused.weight(0, 1), 2.0);
    }

    #[test]
    fn fuse_two_layers_by_hand() {
        let reg = registry(&["a", "b"]);
        let snap = MultiplexSnapshot::new(
            TimeLabel::Int(1),
            vec![graph(&reg, &[(0, 1, 1.0)]), graph(&reg, &[(0, 1, 1.0)])],
            vec![graph(&reg, &[]), graph(&reg, &[(0, 1, 2.0)])],
        )
        .unwrap();
        let w = FusionWeights::new(vec![1.0, 1.0], 0.5).unwrap();
        // 1*1 + 2*(1 + 0.5*2)
        assert_eq!(fuse(&snap, &w).unwrap().weight(0, 1), 5.0);
    }

    #[test]
    fn fuse_scales_linearly_with_increments() {
        let reg = registry(&["a", "b", "c"]);
        let snap = MultiplexSnapshot::new(
            TimeLabel::Int(1),
            vec![graph(&reg, &[(0, 1, 1.5)]), graph(&reg, &[(1, 2, 2.0), (0, 1, 1.0)])],
            vec![graph(&reg, &[(0, 2, 1.0)]), graph(&reg, &[(1, 2, 3.0)])],
        )
        .unwrap();
        let w = FusionWeights::new(vec![1.0, 0.7], 0.4).unwrap();
        let scaled = FusionWeights::new_unchecked(vec![3.0, 2.1], 0.4);
        let a = fuse(&snap, &w).unwrap();
        let b = fuse(&snap, &scaled).unwrap();
        assert_eq!(a.edge_count(), b.edge_count());
        for (i, j, x) in a.edges() {
            assert!((b.weight(i, j) - 3.0 * x).abs() < 1e-12);
        }
    }

    #[test]
    fn fuse_rejects_layer_mismatch() {
        let reg = registry(&["a", "b"]);
        let snap =
            MultiplexSnapshot::new(TimeLabel::Int(1), vec![graph(&reg, &[])], vec![graph(&reg, &[])])
                .unwrap();
        let w = FusionWeights::new(vec![1.0, 0.0], 0.0).unwrap();
        assert!(matches!(fuse(&snap, &w), Err(Error::Dimension(_))));
    }

    #[test]
    fn fusion_weight_validation() {
        assert!(FusionWeights::new(vec![0.5], 0.0).is_err());
        assert!(FusionWeights::new(vec![1.0, -0.1], 0.0).is_err());
        assert!(FusionWeights::new(vec![1.0], 1.5).is_err());
        let w = FusionWeights::from_tail(&[0.0, 1.0, 0.5], 0.3).unwrap();
        assert_eq!(w.cumulative(), vec![1.0, 1.0, 2.0, 2.5]);
    }

    #[test]
    fn active_node_examples() {
        let reg = registry(&["a", "b", "c"]);
        assert!(active_nodes(&graph(&reg, &[])).is_empty());
        assert_eq!(active_nodes(&graph(&reg, &[(0, 1, 1.0)])), vec![0, 1]);
        let tri = graph(&reg, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]);
        assert_eq!(active_nodes(&tri), vec![0, 1, 2]);
    }

    #[test]
    fn coexistence_examples() {
        let reg = registry(&["a", "b", "c", "d"]);
        let (nodes, a, b) =
            coexist_restrict(&graph(&reg, &[(0, 1, 1.0)]), &graph(&reg, &[(2, 3, 1.0)])).unwrap();
        assert!(nodes.is_empty() && a.is_empty() && b.is_empty());

        let g = graph(&reg, &[(0, 1, 1.0), (1, 2, 2.0)]);
        let (nodes, a, b) = coexist_restrict(&g, &g).unwrap();
        assert_eq!(nodes, vec![0, 1, 2]);
        assert_eq!(a.edges().collect::<Vec<_>>(), g.edges().collect::<Vec<_>>());
        assert_eq!(b.edges().collect::<Vec<_>>(), g.edges().collect::<Vec<_>>());

        let (nodes, a, b) =
            coexist_restrict(&graph(&reg, &[(0, 1, 1.0)]), &graph(&reg, &[(1, 2, 1.0)])).unwrap();
        assert_eq!(nodes, vec![1]);
        assert!(a.is_empty() && b.is_empty());
    }

    #[test]
    fn cosine_examples() {
        let s = cosine_similarity_matrix(&array![[1.0, 0.0, 2.0], [2.0, 0.0, 1.0], [0.0, 0.0, 0.0]]);
        assert!((s[[0, 1]] - 0.8).abs() < 1e-15);
        assert_eq!(s[[0, 0]], 1.0);
        assert_eq!(s[[2, 2]], 0.0);
        assert_eq!(s[[2, 0]], 0.0);

        let s = cosine_similarity_matrix(&array![[1.0, 2.0], [1.0, 2.0]]);
        assert!((s[[0, 1]] - 1.0).abs() < 1e-15);
        let s = cosine_similarity_matrix(&array![[1.0, 0.0], [0.0, 3.0]]);
        assert_eq!(s[[0, 1]], 0.0);
    }

    #[test]
    fn degree_examples() {
        let d = normalized_degrees(&array![[0.0, 3.0], [3.0, 0.0]]);
        assert_eq!(d.to_vec(), vec![0.5, 0.5]);
        let star = array![[0.0, 1.0, 1.0], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        assert_eq!(normalized_degrees(&star).to_vec(), vec![0.5, 0.25, 0.25]);
        let scaled = normalized_degrees(&(&star * 7.5));
        assert_eq!(scaled.to_vec(), vec![0.5, 0.25, 0.25]);
        assert_eq!(normalized_degrees(&Array2::zeros((2, 2))).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn series_requires_increasing_labels() {
        let reg = registry(&["a", "b"]);
        let snap = |t: i64| {
            MultiplexSnapshot::new(TimeLabel::Int(t), vec![graph(&reg, &[])], vec![graph(&reg, &[])])
                .unwrap()
        };
        assert!(MultiplexSeries::new(vec![snap(1)]).is_err());
        assert!(MultiplexSeries::new(vec![snap(2), snap(1)]).is_err());
        assert!(MultiplexSeries::new(vec![snap(1), snap(2)]).is_ok());
    }
}
