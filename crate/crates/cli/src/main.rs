use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use netfuse::fusion::{baseline_weights, fit, select_best, BaselineKind, FitConfig, FusionRule};
use netfuse::ingest::{ingest, Bucket};
use netfuse::io::{
    read_json, read_series, read_toml, write_json, write_series, GraphSeriesFile, PartitionsFile,
    WeightsFile,
};
use netfuse::pipeline::{
    cliques, detect_communities, fuse_series, FitResultsFile, loss_curve_csv,
    registry_from_rows, run_pipeline, similarity, stats_csv, step_stats, write_text,
    PipelineConfig,
};
use netfuse::simstats::{read_results_csv, write_results_csv, GraphMode, Statistic};
use netfuse::synth::{generate, SynthConfig, SynthConfigFile};
use netfuse::{Error, Result};

#[derive(Parser)]
#[command(name = "netfuse", version, about = "Multiplex network fusion and long-term pair similarity")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Seed for synthetic data and community detection.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory that relative output paths are written to.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Build a yearly or monthly multiplex series from an observation CSV.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "year")]
        bucket: Bucket,
        #[arg(long, default_value = "series.json")]
        out: PathBuf,
    },
    /// Generate a synthetic series with known weights.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "series.json")]
        out: PathBuf,
        #[arg(long, alias = "weights-out", default_value = "gt.json")]
        gt_out: PathBuf,
    },
    /// Learn fusion weights.
    Fit {
        #[arg(long)]
        series: PathBuf,
        /// TOML fit configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "fit_results.json")]
        out: PathBuf,
        #[arg(long, default_value = "weights.json")]
        weights_out: PathBuf,
        #[arg(long, default_value = "loss_curve.csv")]
        curve_out: PathBuf,
    },
    /// Fuse with a fixed reference rule.
    Baseline {
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        kind: BaselineKind,
        #[arg(long, default_value = "graphs.json")]
        out: PathBuf,
    },
    /// Fuse every snapshot with the given weights.
    Fuse {
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, default_value = "graphs.json")]
        out: PathBuf,
    },
    /// Best-of-N community detection per time step.
    Communities {
        #[arg(long, alias = "fused")]
        graphs: PathBuf,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        #[arg(long, default_value = "partitions.json")]
        out: PathBuf,
    },
    /// Count and duration similarity tests for every pair.
    Similarity {
        #[arg(long)]
        partitions: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value = "results.csv")]
        out: PathBuf,
    },
    /// Maximal cliques and components of a similarity graph.
    Cliques {
        #[arg(long)]
        similarity: PathBuf,
        #[arg(long, default_value = "count")]
        statistic: Statistic,
        #[arg(long, default_value = "thresholded")]
        mode: GraphMode,
        #[arg(long, default_value = "cliques.json")]
        out: PathBuf,
    },
    /// Degree, clustering and closeness per time step.
    Stats {
        #[arg(long, alias = "fused")]
        graphs: PathBuf,
        #[arg(long, default_value = "stats.csv")]
        out: PathBuf,
    },
    /// Run every stage from a TOML configuration.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
    },
}

fn resolve(out_dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out_dir.join(p)
    }
}

fn write_graphs(path: &Path, graphs: &[(netfuse::TimeLabel, netfuse::WeightedGraph)]) -> Result<()> {
    write_json(path, &GraphSeriesFile::from_graphs(graphs)?)
}

fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    if let Some(n) = g.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    }
    let out = |p: &Path| resolve(&g.out_dir, p);
    let seed = g.seed.unwrap_or(0);
    match cli.command {
        Command::Ingest { input, bucket, out: o } => {
            let series = ingest(&input, bucket).map_err(|e| e.in_stage("ingest"))?;
            write_series(&out(&o), &series)?;
        }
        Command::Synth {
            config,
            out: o,
            gt_out,
        } => {
            let mut file: SynthConfigFile = read_toml(&config)?;
            if let Some(s) = g.seed {
                file.seed = s;
            }
            let (series, gt) = generate(&SynthConfig::try_from(file)?)?;
            write_series(&out(&o), &series)?;
            write_json(&out(&gt_out), &WeightsFile::from_weights(&gt))?;
        }
        Command::Fit {
            series,
            config,
            out: o,
            weights_out,
            curve_out,
        } => {
            let series = read_series(&series)?;
            let cfg: FitConfig = match config {
                Some(p) => read_toml(&p)?,
                None => FitConfig::default(),
            };
            let results = fit(&series, &cfg).map_err(|e| e.in_stage("fit"))?;
            let best = select_best(&results).map_err(|e| e.in_stage("fit"))?;
            write_json(&out(&o), &FitResultsFile::new(&results, best))?;
            write_text(&out(&curve_out), &loss_curve_csv(best))?;
            let w = best
                .weights
                .as_ref()
                .ok_or_else(|| Error::Optimization("selected run has no weights".into()))?;
            write_json(&out(&weights_out), &WeightsFile::from_weights(w))?;
        }
        Command::Baseline {
            series,
            kind,
            out: o,
        } => {
            let series = read_series(&series)?;
            let rule = baseline_weights(kind, series.layer_count());
            write_graphs(&out(&o), &fuse_series(&series, &rule)?)?;
        }
        Command::Fuse {
            series,
            weights,
            out: o,
        } => {
            let series = read_series(&series)?;
            let w = read_json::<WeightsFile>(&weights)?.to_weights()?;
            write_graphs(&out(&o), &fuse_series(&series, &FusionRule::Weighted(w))?)?;
        }
        Command::Communities { graphs: input, runs, out: o } => {
            let graphs = read_json::<GraphSeriesFile>(&input)?.into_graphs()?;
            let reg = match graphs.first() {
                Some((_, g)) => g.registry().clone(),
                None => return Err(Error::Invalid("no graphs in input".into())),
            };
            if runs == 0 {
                return Err(Error::Invalid("runs must be at least 1".into()));
            }
            let parts = detect_communities(&graphs, runs, seed)?;
            write_json(&out(&o), &PartitionsFile::from_partitions(&reg, &parts))?;
        }
        Command::Similarity {
            partitions,
            alpha,
            out: o,
        } => {
            let (reg, steps) = read_json::<PartitionsFile>(&partitions)?.into_partitions()?;
            let parts: Vec<_> = steps.into_iter().map(|(_, p)| p).collect();
            let rows = similarity(&reg, &parts, alpha)?;
            let path = out(&o);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            write_results_csv(&rows, fs::File::create(path)?)?;
        }
        Command::Cliques {
            similarity,
            statistic,
            mode,
            out: o,
        } => {
            let rows = read_results_csv(fs::File::open(&similarity)?)?;
            let reg = registry_from_rows(&rows)?;
            write_json(&out(&o), &cliques(&reg, &rows, statistic, mode)?)?;
        }
        Command::Stats { graphs: input, out: o } => {
            let graphs = read_json::<GraphSeriesFile>(&input)?.into_graphs()?;
            write_text(&out(&o), &stats_csv(&step_stats(&graphs)))?;
        }
        Command::Pipeline { config } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if let Some(s) = g.seed {
                cfg.seed = s;
            }
            let summary = run_pipeline(&cfg, &g.out_dir)?;
            println!(
                "{} nodes, {} steps; {} significant count pairs, {} significant duration pairs",
                summary.nodes, summary.steps, summary.significant_count, summary.significant_duration
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
