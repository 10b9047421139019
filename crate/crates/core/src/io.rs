//! JSON file formats shared by the CLI stages.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::community::Partition;
use crate::error::{Error, Result};
use crate::graph::{
    FusionWeights, MultiplexSeries, MultiplexSnapshot, NodeRegistry, TimeLabel, WeightedGraph,
};
use crate::simstats::{GraphMode, Statistic};

/// Rounds to 12 significant digits, the precision used in every output file.
pub fn sig12(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

/// `[u, v, w]` triple as stored on disk.
pub type EdgeRecord = (String, String, f64);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerRecord {
    pub h: usize,
    #[serde(default)]
    pub raw: Vec<EdgeRecord>,
    #[serde(default)]
    pub add: Vec<EdgeRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub t: TimeLabel,
    pub layers: Vec<LayerRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesFile {
    pub nodes: Vec<String>,
    #[serde(rename = "H")]
    pub h: usize,
    pub snapshots: Vec<SnapshotRecord>,
}

fn edge_records(g: &WeightedGraph) -> Vec<EdgeRecord> {
    let reg = g.registry();
    g.edges()
        .map(|(i, j, w)| (reg.label(i).to_string(), reg.label(j).to_string(), sig12(w)))
        .collect()
}

fn graph_from_records(reg: &Arc<NodeRegistry>, edges: &[EdgeRecord]) -> Result<WeightedGraph> {
    let mut g = WeightedGraph::new(reg.clone());
    for (u, v, w) in edges {
        g.add_weight(reg.require(u)?, reg.require(v)?, *w)?;
    }
    Ok(g)
}

impl SeriesFile {
    pub fn from_series(series: &MultiplexSeries) -> Self {
        let snapshots = series
            .snapshots()
            .iter()
            .map(|s| SnapshotRecord {
                t: s.t.clone(),
                layers: (0..s.layer_count())
                    .map(|h| LayerRecord {
                        h: h + 1,
                        raw: edge_records(&s.raw()[h]),
                        add: edge_records(&s.add()[h]),
                    })
                    .collect(),
            })
            .collect();
        Self {
            nodes: series.registry().labels().to_vec(),
            h: series.layer_count(),
            snapshots,
        }
    }

    /// Layers missing from a snapshot are empty; duplicate edge rows add up.
    pub fn into_series(self) -> Result<MultiplexSeries> {
        if self.h == 0 {
            return Err(Error::invalid("H must be at least 1"));
        }
        let reg = Arc::new(NodeRegistry::new(self.nodes)?);
        let mut snapshots = Vec::with_capacity(self.snapshots.len());
        for rec in self.snapshots {
            let mut raw = vec![WeightedGraph::new(reg.clone()); self.h];
            let mut add = vec![WeightedGraph::new(reg.clone()); self.h];
            for layer in rec.layers {
                if layer.h == 0 || layer.h > self.h {
                    return Err(Error::Dimension(format!(
                        "layer index {} outside 1..={}",
                        layer.h, self.h
                    )));
                }
                let idx = layer.h - 1;
                let r = graph_from_records(&reg, &layer.raw)?;
                let a = graph_from_records(&reg, &layer.add)?;
                for (i, j, w) in r.edges() {
                    raw[idx].add_weight(i, j, w)?;
                }
                for (i, j, w) in a.edges() {
                    add[idx].add_weight(i, j, w)?;
                }
            }
            snapshots.push(MultiplexSnapshot::new(rec.t, raw, add)?);
        }
        MultiplexSeries::new(snapshots)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphRecord {
    pub t: TimeLabel,
    pub edges: Vec<EdgeRecord>,
}

/// One fused graph per time step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphSeriesFile {
    pub nodes: Vec<String>,
    pub graphs: Vec<GraphRecord>,
}

impl GraphSeriesFile {
    pub fn from_graphs(graphs: &[(TimeLabel, WeightedGraph)]) -> Result<Self> {
        let first = graphs
            .first()
            .ok_or_else(|| Error::invalid("no graphs to write"))?;
        Ok(Self {
            nodes: first.1.registry().labels().to_vec(),
            graphs: graphs
                .iter()
                .map(|(t, g)| GraphRecord {
                    t: t.clone(),
                    edges: edge_records(g),
                })
                .collect(),
        })
    }

    pub fn into_graphs(self) -> Result<Vec<(TimeLabel, WeightedGraph)>> {
        let reg = Arc::new(NodeRegistry::new(self.nodes)?);
        self.graphs
            .into_iter()
            .map(|rec| Ok((rec.t, graph_from_records(&reg, &rec.edges)?)))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightsFile {
    pub w: Vec<f64>,
    pub w_add: f64,
    #[serde(rename = "W", default)]
    pub cumulative: Vec<f64>,
}

impl WeightsFile {
    pub fn from_weights(weights: &FusionWeights) -> Self {
        Self {
            w: weights.increments().iter().map(|&x| sig12(x)).collect(),
            w_add: sig12(weights.w_add()),
            cumulative: weights.cumulative().iter().map(|&x| sig12(x)).collect(),
        }
    }

    pub fn to_weights(&self) -> Result<FusionWeights> {
        FusionWeights::new(self.w.clone(), self.w_add)
    }
}

/// Partitions in time order.
pub type PartitionSeries = Vec<(TimeLabel, Partition)>;

/// Community assignment of one time step, keyed by node label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionRecord {
    pub t: TimeLabel,
    pub assignment: BTreeMap<String, usize>,
    #[serde(rename = "K")]
    pub k: usize,
    pub sizes: Vec<usize>,
    #[serde(rename = "Q")]
    pub q: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionsFile {
    pub nodes: Vec<String>,
    pub steps: Vec<PartitionRecord>,
}

impl PartitionsFile {
    pub fn from_partitions(
        registry: &NodeRegistry,
        steps: &[(TimeLabel, Partition, f64)],
    ) -> Self {
        Self {
            nodes: registry.labels().to_vec(),
            steps: steps
                .iter()
                .map(|(t, part, q)| PartitionRecord {
                    t: t.clone(),
                    assignment: part
                        .nodes()
                        .iter()
                        .zip(part.membership())
                        .map(|(&v, &c)| (registry.label(v).to_string(), c))
                        .collect(),
                    k: part.community_count(),
                    sizes: part.sizes(),
                    q: sig12(*q),
                })
                .collect(),
        }
    }

    pub fn into_partitions(self) -> Result<(Arc<NodeRegistry>, PartitionSeries)> {
        let reg = Arc::new(NodeRegistry::new(self.nodes)?);
        let steps = self
            .steps
            .into_iter()
            .map(|rec| {
                let mut pairs = rec
                    .assignment
                    .iter()
                    .map(|(label, &c)| Ok((reg.require(label)?, c)))
                    .collect::<Result<Vec<_>>>()?;
                pairs.sort_unstable();
                let (nodes, membership) = pairs.into_iter().unzip();
                Ok((rec.t, Partition::new(nodes, membership)?))
            })
            .collect::<Result<_>>()?;
        Ok((reg, steps))
    }
}

/// Groups of similar nodes found in a similarity graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CliquesFile {
    pub statistic: Statistic,
    pub mode: GraphMode,
    pub cliques: Vec<Vec<String>>,
    pub components: Vec<Vec<String>>,
}

pub fn label_groups(registry: &NodeRegistry, groups: &[Vec<usize>]) -> Vec<Vec<String>> {
    groups
        .iter()
        .map(|g| g.iter().map(|&v| registry.label(v).to_string()).collect())
        .collect()
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(toml::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn read_series(path: &Path) -> Result<MultiplexSeries> {
    read_json::<SeriesFile>(path)?.into_series()
}

pub fn write_series(path: &Path, series: &MultiplexSeries) -> Result<()> {
    write_json(path, &SeriesFile::from_series(series))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig12_rounds() {
        assert_eq!(sig12(0.1 + 0.2), 0.3);
        assert_eq!(sig12(1.0 / 3.0), 0.333333333333);
        assert_eq!(sig12(0.0), 0.0);
    }

    #[test]
    fn series_json_layout() {
        let text = r#"{
            "nodes": ["a", "b", "c"],
            "H": 2,
            "snapshots": [
                {"t": 2001, "layers": [{"h": 1, "raw": [["a","b",1.0]], "add": []},
                                        {"h": 2, "raw": [["b","c",2.5]], "add": [["b","c",1]]}]},
                {"t": 2002, "layers": [{"h": 2, "raw": [["a","c",1.0]]}]}
            ]
        }"#;
        let file: SeriesFile = serde_json::from_str(text).unwrap();
        let series = file.into_series().unwrap();
        assert_eq!(series.len(), 2);
        assert_eq!(series.layer_count(), 2);
        let s0 = &series.snapshots()[0];
        assert_eq!(s0.raw()[1].weight(1, 2), 2.5);
        assert_eq!(s0.add()[1].weight(1, 2), 1.0);
        assert!(series.snapshots()[1].raw()[0].is_empty());

        let back = SeriesFile::from_series(&series);
        let again = back.clone().into_series().unwrap();
        assert_eq!(
            serde_json::to_string(&SeriesFile::from_series(&again)).unwrap(),
            serde_json::to_string(&back).unwrap()
        );
    }

    #[test]
    fn series_json_rejects_unknown_nodes_and_layers() {
        let bad_node = r#"{"nodes":["a","b"],"H":1,"snapshots":[
            {"t":1,"layers":[{"h":1,"raw":[["a","z",1]]}]},{"t":2,"layers":[]}]}"#;
        let file: SeriesFile = serde_json::from_str(bad_node).unwrap();
        assert!(file.into_series().is_err());
        let bad_layer = r#"{"nodes":["a","b"],"H":1,"snapshots":[
            {"t":1,"layers":[{"h":2,"raw":[["a","b",1]]}]},{"t":2,"layers":[]}]}"#;
        let file: SeriesFile = serde_json::from_str(bad_layer).unwrap();
        assert!(matches!(file.into_series(), Err(Error::Dimension(_))));
    }
}
