//! `embaudit`: batch front end to the embedding audit toolkit.
//!
//! Exit codes: 0 success, 1 invalid input or usage, 2 I/O failure.

mod commands;
mod config;
mod error;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::Config;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "embaudit", version, about = "Audit embedding spaces for planted and spurious structure")]
pub struct Cli {
    /// Seed for every random choice (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// `key = value` defaults file.
    #[arg(long, global = true, env = "EMBAUDIT_CONFIG")]
    pub config: Option<PathBuf>,

    /// Artifact root: default input and output directory.
    #[arg(long, global = true, env = "EMBAUDIT_DATA_DIR")]
    pub data_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Join embeddings with subject metadata into a dataset directory.
    Ingest(IngestArgs),
    /// t-SNE layout of a dataset: layout.csv and kl_trace.csv.
    Tsne(TsneArgs),
    /// Train and evaluate one probe: <target>_metrics.csv, _predictions.csv, _summary.json.
    Probe(ProbeArgs),
    /// Per-epoch accuracy of a subgroup against everyone else: lag.csv, lag.json.
    Lag(LagArgs),
    #[command(subcommand)]
    Clusters(ClustersCommand),
    #[command(subcommand)]
    Bias(BiasCommand),
    #[command(subcommand)]
    Edges(EdgesCommand),
    #[command(subcommand)]
    Synth(SynthCommand),
    #[command(subcommand)]
    Report(ReportCommand),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct Output {
    /// Output directory (default: the artifact root).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DatasetArg {
    /// Dataset directory holding embeddings.emb and metadata.csv (default: the artifact root).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// EMB1 binary or CSV (`subject_id,region,e0,e1,…`).
    #[arg(long)]
    pub embeddings: PathBuf,
    /// CSV: subject_id,sex,age_years,height_m,weight_kg,location,acq_date.
    #[arg(long)]
    pub metadata: PathBuf,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct TsneArgs {
    #[command(flatten)]
    pub dataset: DatasetArg,
    /// Effective neighbour count per point.
    #[arg(long)]
    pub perplexity: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Barnes-Hut opening angle.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Largest N optimized with exact gradients.
    #[arg(long)]
    pub exact_threshold: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub dataset: DatasetArg,
    /// sex, region, location, age, height or weight.
    #[arg(long)]
    pub target: String,
    /// linear or rbf.
    #[arg(long)]
    pub kernel: Option<String>,
    /// RBF width.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// SVM box constraint.
    #[arg(long = "c", short = 'C')]
    pub c: Option<f64>,
    /// Train on the full training split instead of a class- or bin-balanced subset.
    #[arg(long)]
    pub no_balance: bool,
    /// Equal-width bins for balancing regression targets.
    #[arg(long)]
    pub bins: Option<usize>,
    /// clusters.csv for a per-cluster breakdown.
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    /// Row label in table1.
    #[arg(long)]
    pub label: Option<String>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct LagArgs {
    #[command(flatten)]
    pub dataset: DatasetArg,
    /// Cluster label from --clusters to track.
    #[arg(long, requires = "clusters", conflicts_with = "members")]
    pub cluster: Option<String>,
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    /// File with one subject id or subject/region per line.
    #[arg(long)]
    pub members: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Subcommand)]
pub enum ClustersCommand {
    /// Label layout points with polygons: clusters.csv, cluster_counts.csv, composition_*.csv.
    Assign(AssignArgs),
}

#[derive(Debug, Args)]
pub struct AssignArgs {
    /// layout.csv from `tsne`.
    #[arg(long)]
    pub layout: PathBuf,
    /// JSON list of {label, vertices: [[x, y], …]}.
    #[arg(long)]
    pub polygons: PathBuf,
    /// Dataset for composition tables (sex, location, region, year).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Subcommand)]
pub enum BiasCommand {
    /// Cross-region consistency of sex misclassification against independence.
    Regions(RegionsArgs),
}

#[derive(Debug, Args)]
pub struct RegionsArgs {
    /// sex_predictions.csv from `probe --target sex`.
    #[arg(long)]
    pub predictions: PathBuf,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Subcommand)]
pub enum EdgesCommand {
    /// Mean images, right-edge profiles and pairwise vertical shifts per cluster.
    Report(EdgesArgs),
}

#[derive(Debug, Args)]
pub struct EdgesArgs {
    /// Directory of PGM / RAWF32 images; each subdirectory is a cluster, loose files are "rest".
    #[arg(long)]
    pub images: PathBuf,
    /// CSV `file,cluster` overriding the directory layout.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Edge threshold on the [0, 1] scale.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub max_shift: Option<usize>,
    /// Voxel spacing for shifts in mm.
    #[arg(long)]
    pub spacing_mm: Option<f64>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Embedding dataset with planted factors and an optional sex-flipped subgroup.
    Embeddings(SynthEmbeddingArgs),
    /// Neck-curve PGM images with a planted vertical shift.
    Images(SynthImageArgs),
}

#[derive(Debug, Args)]
pub struct SynthEmbeddingArgs {
    /// Subjects (three records each).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Share of subjects whose sex component is negated.
    #[arg(long)]
    pub flip: Option<f64>,
    /// Class-mean distance in noise standard deviations.
    #[arg(long)]
    pub sex_separation: Option<f64>,
    #[arg(long)]
    pub region_separation: Option<f64>,
    #[arg(long)]
    pub location_separation: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct SynthImageArgs {
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
    /// Vertical offset in rows (positive moves the subject down).
    #[arg(long, allow_hyphen_values = true)]
    pub shift: Option<i64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Subcommand)]
pub enum ReportCommand {
    /// Probe summary grid (table1.md and table1.csv) from *_summary.json files.
    Table1(Table1Args),
}

#[derive(Debug, Args)]
pub struct Table1Args {
    /// Summary files, or directories searched for *_summary.json.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Listen address (default 127.0.0.1:8080).
    #[arg(long)]
    pub addr: Option<String>,
    /// Jobs running at once (default 2).
    #[arg(long)]
    pub max_jobs: Option<usize>,
}

/// Resolved global options.
pub struct Env {
    pub config: Config,
    pub seed: u64,
    pub root: PathBuf,
}

impl Env {
    pub fn out_dir(&self, out: &Output) -> CliResult<PathBuf> {
        let dir = out.out.clone().unwrap_or_else(|| self.root.clone());
        std::fs::create_dir_all(&dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
        Ok(dir)
    }

    pub fn dataset_dir(&self, arg: &Option<PathBuf>) -> PathBuf {
        arg.clone().unwrap_or_else(|| self.root.clone())
    }
}

fn setup(cli: &Cli) -> CliResult<Env> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let seed = config.pick(cli.seed, "seed", 0)?;
    let root = match &cli.data_dir {
        Some(d) => d.clone(),
        None => config.get::<PathBuf>("data_dir")?.unwrap_or_else(|| PathBuf::from(".")),
    };
    let threads: usize = config.pick(cli.threads, "threads", 0)?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Invalid(format!("cannot size thread pool: {e}")))?;
    }
    Ok(Env { config, seed, root })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match setup(&cli).and_then(|env| commands::run(&env, &cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
