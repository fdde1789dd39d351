//! `taxrewire`: similarity analysis, hierarchy rewiring, hierarchical
//! training, prediction and evaluation from the command line.

mod commands;
mod error;
mod pipeline;
mod provenance;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use provenance::{file_name, opt_file_name};

#[derive(Parser, Debug)]
#[command(name = "taxrewire", version, about = "Taxonomy rewiring and hierarchical classification")]
struct Cli {
    /// Worker threads for similarity scoring, training and prediction
    /// (0 = one per core). Never changes any output.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score all class pairs by centroid cosine and suggest a threshold.
    Similarity(SimilarityArgs),
    /// Rewire a hierarchy using similar class pairs.
    Rewire(RewireArgs),
    /// Train top-down or flat logistic regression models.
    Train(TrainArgs),
    /// Predict a class for every instance of a dataset.
    Predict(PredictArgs),
    /// Score predictions against the true labels.
    Evaluate(EvaluateArgs),
    /// Generate a planted benchmark and run the whole pipeline on it.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
#[group(multiple = false)]
pub struct SelectArgs {
    /// Keep pairs scoring strictly above this value.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Keep the K best-scoring pairs.
    #[arg(long = "top-k")]
    pub top_k: Option<usize>,
    /// Keep the pairs up to the knee of the sorted score curve (default).
    #[arg(long = "auto-tau")]
    pub auto_tau: bool,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SimilarityArgs {
    /// Training data in SVMlight format.
    #[arg(long)]
    #[serde(serialize_with = "file_name")]
    pub data: PathBuf,
    /// Hierarchy as `parent child` edge lines.
    #[arg(long)]
    #[serde(serialize_with = "file_name")]
    pub hierarchy: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[command(flatten)]
    pub select: SelectArgs,
    /// Use raw feature values instead of tf-idf.
    #[arg(long = "no-tfidf")]
    pub no_tfidf: bool,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct RewireArgs {
    #[arg(long)]
    #[serde(serialize_with = "file_name")]
    pub hierarchy: PathBuf,
    /// Training data used to compute similar pairs.
    #[arg(long, required_unless_present = "pairs")]
    #[serde(serialize_with = "opt_file_name")]
    pub data: Option<PathBuf>,
    /// Precomputed pair set (`a b score` lines) instead of --data.
    #[arg(long, conflicts_with = "data")]
    #[serde(serialize_with = "opt_file_name")]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[command(flatten)]
    pub select: SelectArgs,
    #[arg(long = "no-tfidf")]
    pub no_tfidf: bool,
    /// Also splice out internal nodes left with a single child.
    #[arg(long = "collapse-chains")]
    pub collapse_chains: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MethodArg {
    #[value(name = "td-lr")]
    #[serde(rename = "td-lr")]
    TdLr,
    #[value(name = "flat")]
    #[serde(rename = "flat")]
    Flat,
}

impl From<MethodArg> for taxrewire_core::Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::TdLr => taxrewire_core::Method::TopDown,
            MethodArg::Flat => taxrewire_core::Method::Flat,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
#[group(multiple = false)]
pub struct CArgs {
    /// Fixed regularization constant.
    #[arg(long = "C")]
    pub c: Option<f64>,
    /// Tune C on a validation split: `default` or a comma-separated list.
    #[arg(long)]
    pub grid: Option<String>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainOpts {
    #[arg(long, value_enum, default_value_t = MethodArg::TdLr)]
    pub method: MethodArg,
    #[command(flatten)]
    pub c: CArgs,
    /// Train share of the tuning split.
    #[arg(long, default_value_t = 0.9)]
    pub split: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-instance loss weights, one per line, in data order.
    #[arg(long = "cost-file")]
    #[serde(serialize_with = "opt_file_name")]
    pub cost_file: Option<PathBuf>,
    /// Add an intercept to every model.
    #[arg(long)]
    pub bias: bool,
    /// Choose C separately for every node when tuning.
    #[arg(long = "per-node-c", requires = "grid")]
    pub per_node_c: bool,
    #[arg(long = "no-tfidf")]
    pub no_tfidf: bool,
    /// Relative gradient-norm tolerance of the solver.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long = "max-iter", default_value_t = 1000)]
    pub max_iter: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    #[serde(serialize_with = "file_name")]
    pub data: PathBuf,
    #[arg(long)]
    #[serde(serialize_with = "file_name")]
    pub hierarchy: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainOpts,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    #[serde(serialize_with = "file_name")]
    pub data: PathBuf,
    /// Model file written by `train`.
    #[arg(long)]
    #[serde(serialize_with = "file_name")]
    pub model: PathBuf,
    /// Hierarchy the model was trained on; required for top-down models.
    #[arg(long)]
    #[serde(serialize_with = "opt_file_name")]
    pub hierarchy: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalHierarchy {
    Original,
    Modified,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MacroOver {
    /// Classes present in the test labels.
    Test,
    /// Classes present in the training labels.
    Train,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EvaluateArgs {
    /// Test data; its labels are the ground truth.
    #[arg(long)]
    #[serde(serialize_with = "file_name")]
    pub data: PathBuf,
    /// `index label` lines written by `predict`.
    #[arg(long)]
    #[serde(serialize_with = "file_name")]
    pub predictions: PathBuf,
    /// The original hierarchy.
    #[arg(long)]
    #[serde(serialize_with = "file_name")]
    pub hierarchy: PathBuf,
    /// The rewired hierarchy.
    #[arg(long)]
    #[serde(serialize_with = "opt_file_name")]
    pub modified: Option<PathBuf>,
    /// Hierarchy used for hierarchical F1.
    #[arg(long = "eval-hierarchy", value_enum, default_value_t = EvalHierarchy::Original)]
    pub eval_hierarchy: EvalHierarchy,
    /// Training data, for per-class training counts and the rare slice.
    #[arg(long = "train-data")]
    #[serde(serialize_with = "opt_file_name")]
    pub train_data: Option<PathBuf>,
    #[arg(long = "rare-threshold", default_value_t = 10)]
    pub rare_threshold: usize,
    /// Predictions of a second system to compare on rare classes.
    #[arg(long, requires = "train_data")]
    #[serde(serialize_with = "opt_file_name")]
    pub baseline: Option<PathBuf>,
    #[arg(long = "macro-over", value_enum, default_value_t = MacroOver::Test)]
    pub macro_over: MacroOver,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct BenchArgs {
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub fanout: usize,
    #[arg(long, default_value_t = 27)]
    pub leaves: usize,
    #[arg(long, default_value_t = 300)]
    pub dims: usize,
    #[arg(long, default_value_t = 30)]
    pub instances: usize,
    /// Upper end of a per-class instance count range (rare-class mode).
    #[arg(long = "instances-max")]
    pub instances_max: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub misplaced: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train share of the train/test split.
    #[arg(long = "test-split", default_value_t = 0.7)]
    pub test_split: f64,
    #[command(flatten)]
    pub select: SelectArgs,
    #[arg(long = "C", default_value_t = 1.0)]
    pub c: f64,
    #[arg(long = "rare-threshold", default_value_t = 10)]
    pub rare_threshold: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.workers > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
        {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Similarity(a) => commands::similarity(&a),
        Command::Rewire(a) => commands::rewire(&a),
        Command::Train(a) => commands::train(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Bench(a) => commands::bench(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
