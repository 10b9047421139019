//! Count and duration similarity between node pairs across a sequence of
//! partitions, tested against a null where community co-membership at each
//! step is an independent Bernoulli draw.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::community::Partition;
use crate::error::{Error, Result};
use crate::graph::{NodeRegistry, WeightedGraph};
use crate::io::sig12;

/// Neumaier compensated sum.
#[derive(Debug, Default, Clone, Copy)]
struct Sum {
    s: f64,
    c: f64,
}

impl Sum {
    fn add(&mut self, x: f64) {
        let t = self.s + x;
        if self.s.abs() >= x.abs() {
            self.c += (self.s - t) + x;
        } else {
            self.c += (x - t) + self.s;
        }
        self.s = t;
    }

    fn value(self) -> f64 {
        self.s + self.c
    }
}

fn compensated(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = Sum::default();
    for v in values {
        s.add(v);
    }
    s.value()
}

/// Success probabilities of independent Bernoulli trials.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliSeq {
    probs: Vec<f64>,
}

impl BernoulliSeq {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("a Bernoulli sequence needs at least one trial"));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
        }
        Ok(Self { probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Probability mass function on `0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pmf(pub Vec<f64>);

impl Pmf {
    pub fn get(&self, k: usize) -> f64 {
        self.0.get(k).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        compensated(self.0.iter().copied())
    }

    /// `P(X >= k)`.
    pub fn upper_tail(&self, k: usize) -> f64 {
        if k == 0 {
            return 1.0;
        }
        if k >= self.0.len() {
            return 0.0;
        }
        compensated(self.0[k..].iter().rev().copied()).clamp(0.0, 1.0)
    }
}

/// Distribution of the number of successes (Poisson binomial).
pub fn count_dist(seq: &BernoulliSeq) -> Pmf {
    let t_max = seq.len();
    let mut prev = vec![1.0];
    for (t, &p) in seq.probs().iter().enumerate() {
        let mut next = vec![0.0; t + 2];
        for (l, slot) in next.iter_mut().enumerate() {
            let stay = if l <= t { (1.0 - p) * prev[l] } else { 0.0 };
            let step = if l >= 1 { p * prev[l - 1] } else { 0.0 };
            *slot = stay + step;
        }
        prev = next;
    }
    debug_assert_eq!(prev.len(), t_max + 1);
    Pmf(prev)
}

/// Distribution of the longest run of successes.
///
/// `d[t][l] = P(D_t = l)` for the first `t` trials, filled by the boundary
/// products, the one-failure formula for `l = t - 1`, and the last-failure
/// recursion for `1 <= l <= t - 2`.
pub fn longest_run_dist(seq: &BernoulliSeq) -> Pmf {
    let big_t = seq.len();
    // 1-based access: p(s) for s in 1..=T.
    let p = |s: usize| seq.probs()[s - 1];
    // prod_p(a, b) = prod_{s=a}^{b} p_s, empty product 1.
    let prod_p = |a: usize, b: usize| (a..=b).map(p).product::<f64>();
    let mut d: Vec<Vec<f64>> = vec![vec![1.0]];
    for t in 1..=big_t {
        let mut row = vec![0.0; t + 1];
        row[t] = prod_p(1, t);
        row[0] = (1..=t).map(|s| 1.0 - p(s)).product();
        if t >= 2 {
            row[t - 1] = (1.0 - p(t)) * prod_p(1, t - 1) + (1.0 - p(1)) * prod_p(2, t);
        }
        if t >= 3 {
            let at = |tt: usize, l: usize| d[tt].get(l).copied().unwrap_or(0.0);
            for l in 1..=t - 2 {
                let mut s = Sum::default();
                let head = compensated((0..=l).map(|k| at(t - l - 1, k)));
                s.add(head * (1.0 - p(t - l)) * prod_p(t - l + 1, t));
                for m in t - l + 1..t {
                    s.add((1.0 - p(m)) * prod_p(m + 1, t) * at(m - 1, l));
                }
                s.add((1.0 - p(t)) * at(t - 1, l));
                row[l] = s.value();
            }
        }
        d.push(row);
    }
    Pmf(d.pop().expect("at least one row"))
}

/// Longest run of `true` values.
pub fn longest_run(bits: &[bool]) -> usize {
    let (mut best, mut cur) = (0, 0);
    for &b in bits {
        cur = if b { cur + 1 } else { 0 };
        best = best.max(cur);
    }
    best
}

/// Chance that two distinct uniformly chosen active nodes share a community.
pub fn same_community_prob(partition: &Partition) -> Result<f64> {
    let n = partition.nodes().len();
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "same-community probability needs at least two active nodes, got {n}"
        )));
    }
    let pairs: usize = partition.sizes().iter().map(|&s| s * s.saturating_sub(1)).sum();
    Ok(pairs as f64 / (n * (n - 1)) as f64)
}

/// Co-membership bits and null probabilities over the steps where both `i`
/// and `j` are active. Returns `(steps, bits, probs)`.
pub fn pair_sequences(
    partitions: &[Partition],
    i: usize,
    j: usize,
) -> Result<(Vec<usize>, Vec<bool>, Vec<f64>)> {
    let mut steps = Vec::new();
    let mut bits = Vec::new();
    let mut probs = Vec::new();
    for (t, part) in partitions.iter().enumerate() {
        if let (Some(a), Some(b)) = (part.community_of(i), part.community_of(j)) {
            steps.push(t);
            bits.push(a == b);
            probs.push(same_community_prob(part)?);
        }
    }
    Ok((steps, bits, probs))
}

/// `P(X >= stat)`; a zero statistic has p-value 1.
pub fn p_value(stat: usize, dist: &Pmf) -> f64 {
    dist.upper_tail(stat)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairTestResult {
    pub i: usize,
    pub j: usize,
    pub coexist_steps: Vec<usize>,
    pub bits: Vec<bool>,
    pub null_probs: Vec<f64>,
    pub count_stat: usize,
    pub duration_stat: usize,
    pub count_p: f64,
    pub duration_p: f64,
}

fn test_pair(partitions: &[Partition], i: usize, j: usize) -> Result<Option<PairTestResult>> {
    let (steps, bits, probs) = pair_sequences(partitions, i, j)?;
    if steps.is_empty() {
        return Ok(None);
    }
    let count_stat = bits.iter().filter(|&&b| b).count();
    let duration_stat = longest_run(&bits);
    let seq = BernoulliSeq::new(probs.clone())?;
    Ok(Some(PairTestResult {
        i,
        j,
        count_p: p_value(count_stat, &count_dist(&seq)),
        duration_p: p_value(duration_stat, &longest_run_dist(&seq)),
        coexist_steps: steps,
        bits,
        null_probs: probs,
        count_stat,
        duration_stat,
    }))
}

/// Tests every pair of nodes `0..node_count` that co-exists at least once,
/// ordered by `(i, j)`.
pub fn test_all_pairs(partitions: &[Partition], node_count: usize) -> Result<Vec<PairTestResult>> {
    let rows: Vec<Vec<PairTestResult>> = (0..node_count)
        .into_par_iter()
        .map(|i| {
            (i + 1..node_count)
                .filter_map(|j| test_pair(partitions, i, j).transpose())
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    Count,
    Duration,
}

impl std::str::FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "count" => Ok(Statistic::Count),
            "duration" => Ok(Statistic::Duration),
            other => Err(Error::invalid(format!(
                "unknown statistic {other:?} (expected count or duration)"
            ))),
        }
    }
}

impl PairTestResult {
    pub fn stat(&self, which: Statistic) -> usize {
        match which {
            Statistic::Count => self.count_stat,
            Statistic::Duration => self.duration_stat,
        }
    }

    pub fn p(&self, which: Statistic) -> f64 {
        match which {
            Statistic::Count => self.count_p,
            Statistic::Duration => self.duration_p,
        }
    }
}

/// Bonferroni-significant flags per result for both statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Significance {
    pub threshold: f64,
    pub count: Vec<bool>,
    pub duration: Vec<bool>,
}

impl Significance {
    pub fn get(&self, which: Statistic) -> &[bool] {
        match which {
            Statistic::Count => &self.count,
            Statistic::Duration => &self.duration,
        }
    }
}

/// Flags `p <= alpha / M` with `M` the number of tested pairs. A zero
/// statistic never counts as significant.
pub fn bonferroni_select(results: &[PairTestResult], alpha: f64) -> Result<Significance> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} outside (0, 1)")));
    }
    let tested = results.iter().filter(|r| !r.coexist_steps.is_empty()).count();
    let threshold = if tested == 0 { 0.0 } else { alpha / tested as f64 };
    let flag = |which: Statistic| {
        results
            .iter()
            .map(|r| tested > 0 && r.stat(which) > 0 && r.p(which) <= threshold)
            .collect()
    };
    Ok(Significance {
        threshold,
        count: flag(Statistic::Count),
        duration: flag(Statistic::Duration),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphMode {
    Full,
    Thresholded,
}

impl std::str::FromStr for GraphMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(GraphMode::Full),
            "thresholded" => Ok(GraphMode::Thresholded),
            other => Err(Error::invalid(format!(
                "unknown graph mode {other:?} (expected full or thresholded)"
            ))),
        }
    }
}

/// One line of the results table, as written to and read from CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub node_i: String,
    pub node_j: String,
    pub n_coexist: usize,
    pub count_stat: usize,
    pub count_p: f64,
    pub duration_stat: usize,
    pub duration_p: f64,
    pub count_sig: bool,
    pub duration_sig: bool,
}

impl ResultRow {
    pub fn stat(&self, which: Statistic) -> usize {
        match which {
            Statistic::Count => self.count_stat,
            Statistic::Duration => self.duration_stat,
        }
    }

    pub fn significant(&self, which: Statistic) -> bool {
        match which {
            Statistic::Count => self.count_sig,
            Statistic::Duration => self.duration_sig,
        }
    }
}

pub fn result_rows(
    registry: &NodeRegistry,
    results: &[PairTestResult],
    sig: &Significance,
) -> Vec<ResultRow> {
    results
        .iter()
        .enumerate()
        .map(|(k, r)| ResultRow {
            node_i: registry.label(r.i).to_string(),
            node_j: registry.label(r.j).to_string(),
            n_coexist: r.coexist_steps.len(),
            count_stat: r.count_stat,
            count_p: sig12(r.count_p),
            duration_stat: r.duration_stat,
            duration_p: sig12(r.duration_p),
            count_sig: sig.count[k],
            duration_sig: sig.duration[k],
        })
        .collect()
}

pub fn write_results_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for row in r.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

/// Similarity graph over `registry` with edge weight equal to the chosen
/// statistic; thresholded mode keeps significant pairs only.
pub fn similarity_graph(
    registry: &std::sync::Arc<NodeRegistry>,
    rows: &[ResultRow],
    which: Statistic,
    mode: GraphMode,
) -> Result<WeightedGraph> {
    let mut g = WeightedGraph::new(registry.clone());
    for r in rows {
        let stat = r.stat(which);
        if stat == 0 || (mode == GraphMode::Thresholded && !r.significant(which)) {
            continue;
        }
        g.set_weight(registry.require(&r.node_i)?, registry.require(&r.node_j)?, stat as f64)?;
    }
    Ok(g)
}

fn sort_groups(groups: &mut [Vec<usize>]) {
    groups.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
}

/// Maximal cliques of the unweighted support with at least two members,
/// largest first, then lexicographic.
pub fn maximal_cliques(graph: &WeightedGraph) -> Vec<Vec<usize>> {
    let n = graph.node_count();
    let mut nbrs = vec![std::collections::BTreeSet::new(); n];
    for (i, j, _) in graph.edges() {
        nbrs[i].insert(j);
        nbrs[j].insert(i);
    }
    let mut out = Vec::new();
    let mut r = Vec::new();
    let p: Vec<usize> = (0..n).filter(|&v| !nbrs[v].is_empty()).collect();
    bron_kerbosch(&nbrs, &mut r, p, Vec::new(), &mut out);
    for c in &mut out {
        c.sort_unstable();
    }
    sort_groups(&mut out);
    out
}

fn bron_kerbosch(
    nbrs: &[std::collections::BTreeSet<usize>],
    r: &mut Vec<usize>,
    p: Vec<usize>,
    mut x: Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if p.is_empty() {
        if x.is_empty() && r.len() >= 2 {
            out.push(r.clone());
        }
        return;
    }
    let pivot = p
        .iter()
        .chain(&x)
        .copied()
        .max_by_key(|&u| (p.iter().filter(|v| nbrs[u].contains(v)).count(), std::cmp::Reverse(u)))
        .expect("p is nonempty");
    let candidates: Vec<usize> = p.iter().copied().filter(|v| !nbrs[pivot].contains(v)).collect();
    let mut p = p;
    for v in candidates {
        r.push(v);
        let np = p.iter().copied().filter(|u| nbrs[v].contains(u)).collect();
        let nx = x.iter().copied().filter(|u| nbrs[v].contains(u)).collect();
        bron_kerbosch(nbrs, r, np, nx, out);
        r.pop();
        p.retain(|&u| u != v);
        x.push(v);
    }
}

/// Connected components with at least two members, sorted like cliques.
pub fn connected_components(graph: &WeightedGraph) -> Vec<Vec<usize>> {
    let adj = graph.adjacency();
    let mut seen = vec![false; adj.len()];
    let mut out = Vec::new();
    for start in 0..adj.len() {
        if seen[start] || adj[start].is_empty() {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut comp = Vec::new();
        while let Some(v) = stack.pop() {
            comp.push(v);
            for &(u, _) in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    sort_groups(&mut out);
    out
}
