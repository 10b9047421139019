//! Stage functions and the end-to-end pipeline.
//!
//! Every stage reads and writes plain files, so any stage can be rerun from
//! the outputs of the previous one. Output is fully determined by the
//! configuration and seeds.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::community::{detect, Partition};
use crate::error::{Error, Result};
use crate::fusion::{
    baseline_weights, fit, select_best, BaselineKind, FitConfig, FitResult, FusionRule, RunStatus,
    SplitLosses,
};
use crate::graph::{FusionWeights, MultiplexSeries, NodeRegistry, TimeLabel, WeightedGraph};
use crate::ingest::{ingest, Bucket};
use crate::io::{
    label_groups, read_json, sig12, write_json, write_series, CliquesFile, GraphSeriesFile,
    PartitionsFile, WeightsFile,
};
use crate::simstats::{
    bonferroni_select, connected_components, maximal_cliques, result_rows, similarity_graph,
    test_all_pairs, write_results_csv, GraphMode, ResultRow, Statistic,
};
use crate::stats::{network_stats, NetworkStats};
use crate::synth::{generate, SynthConfig, SynthConfigFile};

/// Where the multiplex series comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Synth(SynthConfigFile),
    Series {
        path: PathBuf,
    },
    Observations {
        path: PathBuf,
        #[serde(default)]
        bucket: Bucket,
    },
}

/// How snapshots are fused into single graphs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionStage {
    Fit(FitConfig),
    Baseline { kind: BaselineKind },
    Weights { path: PathBuf },
}

fn default_runs() -> usize {
    100
}

fn default_alpha() -> f64 {
    0.05
}

fn default_mode() -> GraphMode {
    GraphMode::Thresholded
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub source: Source,
    pub fusion: FusionStage,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub community_runs: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Similarity graph used for cliques and components.
    #[serde(default = "default_mode")]
    pub clique_mode: GraphMode,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads a TOML config; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut cfg.source {
            Source::Series { path } | Source::Observations { path, .. } => fix(path),
            Source::Synth(_) => {}
        }
        if let FusionStage::Weights { path } = &mut cfg.fusion {
            fix(path);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.community_runs == 0 {
            return Err(Error::invalid("community_runs must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if let FusionStage::Fit(f) = &self.fusion {
            f.validate()?;
        }
        Ok(())
    }
}

/// Fused graph of every snapshot.
pub fn fuse_series(
    series: &MultiplexSeries,
    rule: &FusionRule,
) -> Result<Vec<(TimeLabel, WeightedGraph)>> {
    series
        .snapshots()
        .par_iter()
        .map(|s| Ok((s.t.clone(), rule.apply(s)?)))
        .collect()
}

/// Best-of-`runs` communities per step. Step `k` (zero based) uses seed
/// `seed + k`; an edgeless step gets an empty partition with `Q = 0`.
pub fn detect_communities(
    graphs: &[(TimeLabel, WeightedGraph)],
    runs: usize,
    seed: u64,
) -> Result<Vec<(TimeLabel, Partition, f64)>> {
    graphs
        .iter()
        .enumerate()
        .map(|(k, (t, g))| {
            if g.is_empty() {
                return Ok((t.clone(), Partition::new(Vec::new(), Vec::new())?, 0.0));
            }
            let best = detect(g, runs, seed.wrapping_add(k as u64))?;
            Ok((t.clone(), best.partition, best.modularity))
        })
        .collect()
}

/// Pair similarity tests over a partition series.
pub fn similarity(
    registry: &NodeRegistry,
    partitions: &[Partition],
    alpha: f64,
) -> Result<Vec<ResultRow>> {
    let results = test_all_pairs(partitions, registry.len())?;
    let sig = bonferroni_select(&results, alpha)?;
    Ok(result_rows(registry, &results, &sig))
}

/// Registry spanning every label in `rows`, sorted.
pub fn registry_from_rows(rows: &[ResultRow]) -> Result<Arc<NodeRegistry>> {
    let labels: BTreeSet<&str> = rows
        .iter()
        .flat_map(|r| [r.node_i.as_str(), r.node_j.as_str()])
        .collect();
    Ok(Arc::new(NodeRegistry::new(
        labels.into_iter().map(str::to_string).collect(),
    )?))
}

pub fn cliques(
    registry: &Arc<NodeRegistry>,
    rows: &[ResultRow],
    statistic: Statistic,
    mode: GraphMode,
) -> Result<CliquesFile> {
    let g = similarity_graph(registry, rows, statistic, mode)?;
    Ok(CliquesFile {
        statistic,
        mode,
        cliques: label_groups(registry, &maximal_cliques(&g)),
        components: label_groups(registry, &connected_components(&g)),
    })
}

/// Statistics per step; `None` for an edgeless step.
pub fn step_stats(
    graphs: &[(TimeLabel, WeightedGraph)],
) -> Vec<(TimeLabel, Option<NetworkStats>)> {
    graphs
        .par_iter()
        .map(|(t, g)| (t.clone(), network_stats(g).ok()))
        .collect()
}

fn num(x: f64) -> String {
    format!("{}", sig12(x))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn stats_csv(rows: &[(TimeLabel, Option<NetworkStats>)]) -> String {
    let mut out = String::from(
        "t,active_nodes,avg_weighted_degree,avg_local_clustering,avg_binary_clustering,avg_closeness\n",
    );
    for (t, s) in rows {
        match s {
            Some(s) => writeln!(
                out,
                "{t},{},{},{},{},{}",
                s.active_nodes,
                num(s.avg_weighted_degree),
                num(s.avg_local_clustering),
                num(s.avg_binary_clustering),
                num(s.avg_closeness)
            ),
            None => writeln!(out, "{t},0,,,,"),
        }
        .expect("writing to a string");
    }
    out
}

/// Square table of one statistic over every node that appears in `rows`.
pub fn similarity_table_csv(rows: &[ResultRow], which: Statistic) -> Result<String> {
    let reg = registry_from_rows(rows)?;
    let n = reg.len();
    let mut m = vec![vec![0usize; n]; n];
    for r in rows {
        let (i, j) = (reg.require(&r.node_i)?, reg.require(&r.node_j)?);
        m[i][j] = r.stat(which);
        m[j][i] = r.stat(which);
    }
    let mut out = String::from("node");
    for l in reg.labels() {
        write!(out, ",{l}").expect("writing to a string");
    }
    out.push('\n');
    for (i, row) in m.iter().enumerate() {
        out.push_str(reg.label(i));
        for v in row {
            write!(out, ",{v}").expect("writing to a string");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Per-epoch losses of one fitting run.
pub fn loss_curve_csv(result: &FitResult) -> String {
    let tr = &result.trajectory;
    let mut out = String::from("epoch,train,val,test\n");
    for e in 0..tr.train.len() {
        let get = |v: &[f64]| v.get(e).map(|&x| num(x)).unwrap_or_default();
        writeln!(out, "{},{},{},{}", e + 1, get(&tr.train), get(&tr.val), get(&tr.test))
            .expect("writing to a string");
    }
    out
}

/// One fitting run as written to disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: usize,
    pub init_id: usize,
    pub init_label: String,
    pub seed: u64,
    pub status: RunStatus,
    /// Weights after zeroing tiny increments.
    pub weights: Option<WeightsFile>,
    pub unthresholded: Option<WeightsFile>,
    pub losses: Option<SplitLosses>,
    pub selected_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResultsFile {
    pub selected_run: usize,
    pub runs: Vec<RunRecord>,
}

fn rounded_losses(l: &SplitLosses) -> SplitLosses {
    SplitLosses {
        train: sig12(l.train),
        val: sig12(l.val),
        test: sig12(l.test),
    }
}

impl FitResultsFile {
    pub fn new(results: &[FitResult], selected: &FitResult) -> Self {
        Self {
            selected_run: selected.run_id,
            runs: results
                .iter()
                .map(|r| RunRecord {
                    run_id: r.run_id,
                    init_id: r.init_id,
                    init_label: r.init_label.clone(),
                    seed: r.seed,
                    status: r.status.clone(),
                    weights: r.weights.as_ref().map(WeightsFile::from_weights),
                    unthresholded: r.unthresholded.as_ref().map(WeightsFile::from_weights),
                    losses: r.losses.as_ref().map(rounded_losses),
                    selected_epoch: r.selected_epoch,
                    epochs_run: r.epochs_run,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepSummary {
    pub t: TimeLabel,
    pub edges: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "Q")]
    pub q: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub nodes: usize,
    pub steps: usize,
    pub layers: usize,
    pub fusion: String,
    pub weights: Option<WeightsFile>,
    pub ground_truth: Option<WeightsFile>,
    pub selected_run: Option<usize>,
    pub selected_losses: Option<SplitLosses>,
    pub communities: Vec<StepSummary>,
    pub tested_pairs: usize,
    pub bonferroni_threshold: f64,
    pub significant_count: usize,
    pub significant_duration: usize,
    pub cliques_count: usize,
    pub cliques_duration: usize,
}

impl Summary {
    fn to_text(&self) -> String {
        let mut s = String::new();
        let w = |s: &mut String, line: String| {
            s.push_str(&line);
            s.push('\n');
        };
        w(&mut s, format!("nodes: {}", self.nodes));
        w(&mut s, format!("time steps: {}", self.steps));
        w(&mut s, format!("layers: {}", self.layers));
        w(&mut s, format!("fusion: {}", self.fusion));
        if let Some(gt) = &self.ground_truth {
            w(&mut s, format!("ground truth: w = {:?}, w_add = {}", gt.w, gt.w_add));
        }
        if let Some(wf) = &self.weights {
            w(&mut s, format!("weights: w = {:?}, w_add = {}", wf.w, wf.w_add));
        }
        if let (Some(run), Some(l)) = (self.selected_run, &self.selected_losses) {
            w(
                &mut s,
                format!("selected run {run}: train {} val {} test {}", l.train, l.val, l.test),
            );
        }
        for c in &self.communities {
            w(&mut s, format!("step {}: {} edges, K = {}, Q = {}", c.t, c.edges, c.k, c.q));
        }
        w(&mut s, format!("tested pairs: {}", self.tested_pairs));
        w(&mut s, format!("bonferroni threshold: {}", self.bonferroni_threshold));
        w(
            &mut s,
            format!(
                "significant pairs: count {}, duration {}",
                self.significant_count, self.significant_duration
            ),
        );
        w(
            &mut s,
            format!(
                "cliques: count {}, duration {}",
                self.cliques_count, self.cliques_duration
            ),
        );
        s
    }
}

fn load_series(source: &Source, seed: u64) -> Result<(MultiplexSeries, Option<FusionWeights>)> {
    match source {
        Source::Synth(file) => {
            let mut file = file.clone();
            file.seed = seed;
            let (series, gt) = generate(&SynthConfig::try_from(file)?)?;
            Ok((series, Some(gt)))
        }
        Source::Series { path } => Ok((crate::io::read_series(path)?, None)),
        Source::Observations { path, bucket } => Ok((ingest(path, *bucket)?, None)),
    }
}

/// Files written by [`run_pipeline`], relative to the output directory.
pub const PIPELINE_OUTPUTS: &[&str] = &[
    "series.json",
    "gt.json",
    "fit_results.json",
    "loss_curve.csv",
    "weights.json",
    "graphs.json",
    "partitions.json",
    "results.csv",
    "cliques_count.json",
    "cliques_duration.json",
    "similarity_table_count.csv",
    "similarity_table_duration.csv",
    "stats.csv",
    "summary.json",
    "summary.txt",
];

/// Runs every stage and writes its outputs into `out_dir`. A synthetic
/// source draws with `config.seed`, which also seeds community detection.
pub fn run_pipeline(config: &PipelineConfig, out_dir: &Path) -> Result<Summary> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    fs::create_dir_all(out_dir)?;
    let out = |name: &str| out_dir.join(name);

    let stage = "series";
    let (series, gt) = load_series(&config.source, config.seed).map_err(|e| e.in_stage(stage))?;
    write_series(&out("series.json"), &series).map_err(|e| e.in_stage(stage))?;
    if let Some(gt) = &gt {
        write_json(&out("gt.json"), &WeightsFile::from_weights(gt))
            .map_err(|e| e.in_stage(stage))?;
    }
    let registry = series.registry().clone();

    let stage = "fusion";
    let mut selected_run = None;
    let mut selected_losses = None;
    let (rule, weights, fusion_name) = match &config.fusion {
        FusionStage::Fit(fc) => {
            let results = fit(&series, fc).map_err(|e| e.in_stage(stage))?;
            let best = select_best(&results).map_err(|e| e.in_stage(stage))?;
            write_json(&out("fit_results.json"), &FitResultsFile::new(&results, best))
                .map_err(|e| e.in_stage(stage))?;
            write_text(&out("loss_curve.csv"), &loss_curve_csv(best))
                .map_err(|e| e.in_stage(stage))?;
            selected_run = Some(best.run_id);
            selected_losses = best.losses.as_ref().map(rounded_losses);
            let w = best
                .weights
                .clone()
                .ok_or_else(|| Error::Optimization("selected run has no weights".into()))
                .map_err(|e| e.in_stage(stage))?;
            (FusionRule::Weighted(w.clone()), Some(w), "fit".to_string())
        }
        FusionStage::Baseline { kind } => {
            let rule = baseline_weights(*kind, series.layer_count());
            let w = match &rule {
                FusionRule::Weighted(w) => Some(w.clone()),
                FusionRule::Binary(_) => None,
            };
            let name = match kind {
                BaselineKind::Unlearned => "baseline-unlearned",
                BaselineKind::Binary => "baseline-binary",
            };
            (rule, w, name.to_string())
        }
        FusionStage::Weights { path } => {
            let w = read_json::<WeightsFile>(path)
                .and_then(|f| f.to_weights())
                .map_err(|e| e.in_stage(stage))?;
            (FusionRule::Weighted(w.clone()), Some(w), "fixed-weights".to_string())
        }
    };
    if let Some(w) = &weights {
        write_json(&out("weights.json"), &WeightsFile::from_weights(w))
            .map_err(|e| e.in_stage(stage))?;
    }
    let graphs = fuse_series(&series, &rule).map_err(|e| e.in_stage(stage))?;
    write_json(&out("graphs.json"), &GraphSeriesFile::from_graphs(&graphs).map_err(|e| e.in_stage(stage))?)
        .map_err(|e| e.in_stage(stage))?;

    let stage = "communities";
    let parts = detect_communities(&graphs, config.community_runs, config.seed)
        .map_err(|e| e.in_stage(stage))?;
    write_json(&out("partitions.json"), &PartitionsFile::from_partitions(&registry, &parts))
        .map_err(|e| e.in_stage(stage))?;

    let stage = "similarity";
    let partitions: Vec<Partition> = parts.iter().map(|(_, p, _)| p.clone()).collect();
    let results = test_all_pairs(&partitions, registry.len()).map_err(|e| e.in_stage(stage))?;
    let sig = bonferroni_select(&results, config.alpha).map_err(|e| e.in_stage(stage))?;
    let rows = result_rows(&registry, &results, &sig);
    let mut buf = Vec::new();
    write_results_csv(&rows, &mut buf).map_err(|e| e.in_stage(stage))?;
    fs::File::create(out("results.csv"))
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::from(e).in_stage(stage))?;

    let stage = "cliques";
    let mut clique_counts = [0; 2];
    for (slot, which, name) in [
        (0, Statistic::Count, "count"),
        (1, Statistic::Duration, "duration"),
    ] {
        let c = cliques(&registry, &rows, which, config.clique_mode).map_err(|e| e.in_stage(stage))?;
        clique_counts[slot] = c.cliques.len();
        write_json(&out(&format!("cliques_{name}.json")), &c).map_err(|e| e.in_stage(stage))?;
        let table = if rows.is_empty() {
            Ok("node\n".to_string())
        } else {
            similarity_table_csv(&rows, which)
        };
        write_text(
            &out(&format!("similarity_table_{name}.csv")),
            &table.map_err(|e| e.in_stage(stage))?,
        )
        .map_err(|e| e.in_stage(stage))?;
    }

    let stage = "stats";
    write_text(&out("stats.csv"), &stats_csv(&step_stats(&graphs))).map_err(|e| e.in_stage(stage))?;

    let summary = Summary {
        nodes: registry.len(),
        steps: series.len(),
        layers: series.layer_count(),
        fusion: fusion_name,
        weights: weights.as_ref().map(WeightsFile::from_weights),
        ground_truth: gt.as_ref().map(WeightsFile::from_weights),
        selected_run,
        selected_losses,
        communities: graphs
            .iter()
            .zip(&parts)
            .map(|((t, g), (_, p, q))| StepSummary {
                t: t.clone(),
                edges: g.edge_count(),
                k: p.community_count(),
                q: sig12(*q),
            })
            .collect(),
        tested_pairs: results.len(),
        bonferroni_threshold: sig12(sig.threshold),
        significant_count: sig.count.iter().filter(|&&b| b).count(),
        significant_duration: sig.duration.iter().filter(|&&b| b).count(),
        cliques_count: clique_counts[0],
        cliques_duration: clique_counts[1],
    };
    let stage = "summary";
    write_json(&out("summary.json"), &summary).map_err(|e| e.in_stage(stage))?;
    write_text(&out("summary.txt"), &summary.to_text()).map_err(|e| e.in_stage(stage))?;
    Ok(summary)
}
