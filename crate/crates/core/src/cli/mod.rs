//! The `akd` command line: data generation, teacher training, knowledge
//! export, distillation, evaluation and embedding export.

mod commands;

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::distill::{DistillError, Mode};
use crate::graphio::GraphError;
use crate::metrics::MetricError;
use crate::models::ModelError;
use crate::numkit::NumError;

pub use commands::{format_embeddings, parse_embeddings};

pub const EXIT_IO: i32 = 1;
pub const EXIT_PARSE: i32 = 3;
pub const EXIT_DIM: i32 = 4;
pub const EXIT_METRIC: i32 = 5;
pub const EXIT_CONFIG: i32 = 6;
pub const EXIT_NUMERIC: i32 = 7;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Usage(#[from] clap::Error),
    #[error("{0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("dimension error: {0}")]
    Dim(String),
    #[error("metric undefined: {0}")]
    Metric(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(e) => e.exit_code(),
            CliError::Io(_) => EXIT_IO,
            CliError::Parse(_) => EXIT_PARSE,
            CliError::Dim(_) => EXIT_DIM,
            CliError::Metric(_) => EXIT_METRIC,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<NumError> for CliError {
    fn from(e: NumError) -> Self {
        match e {
            NumError::Dim { .. } | NumError::Index { .. } => CliError::Dim(e.to_string()),
            NumError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            NumError::Contract(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::Parse { .. } => CliError::Parse(e.to_string()),
            GraphError::Invalid(_) => CliError::Config(e.to_string()),
            GraphError::Num(n) => n.into(),
            GraphError::Io(_) => CliError::Io(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Num(n) => n.into(),
            ModelError::Graph(g) => g.into(),
            ModelError::Dim(_) => CliError::Dim(e.to_string()),
            ModelError::Config(_) => CliError::Config(e.to_string()),
            ModelError::Version(_) | ModelError::Format(_) | ModelError::Json(_) => CliError::Parse(e.to_string()),
            ModelError::Io(_) => CliError::Io(e.to_string()),
        }
    }
}

impl From<DistillError> for CliError {
    fn from(e: DistillError) -> Self {
        match e {
            DistillError::Num(n) => n.into(),
            DistillError::Model(m) => m.into(),
            DistillError::Graph(g) => g.into(),
            DistillError::Dim(_) => CliError::Dim(e.to_string()),
            DistillError::Config(_) | DistillError::Contract(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::Shape(_) => CliError::Dim(e.to_string()),
            MetricError::Empty | MetricError::Undefined(_) => CliError::Metric(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "akd", version, about = "Adversarial knowledge distillation for graph neural networks")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a stochastic block model graph or a two-class graph set.
    GenData(GenDataArgs),
    /// Train a teacher (or any model) with plain cross-entropy.
    TrainTeacher(TrainArgs),
    /// Precompute teacher embeddings, summaries and logits.
    ExportKnowledge(ExportKnowledgeArgs),
    /// Train a student against precomputed teacher knowledge.
    Distill(DistillArgs),
    /// Evaluate a saved model.
    Eval(EvalArgs),
    /// Write node embeddings as a text matrix with a label column.
    ExportEmbeddings(ExportEmbeddingsArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// File of `key=value` lines supplying any flag; explicit flags win.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, env = "AKD_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Write the report here instead of stdout.
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
    /// Record wall-clock seconds in the report (makes it non-reproducible).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    /// Generate a graph-classification set instead of an SBM graph.
    #[arg(long)]
    pub graphset: bool,
    /// Block sizes as `COUNTxSIZE` or a comma-separated list.
    #[arg(long, default_value = "4x150")]
    pub blocks: String,
    #[arg(long, default_value_t = 0.08)]
    pub p_in: f64,
    #[arg(long, default_value_t = 0.01)]
    pub p_out: f64,
    /// Feature dimension; 16 for graphs and 8 for graph sets by default.
    #[arg(long)]
    pub features: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.6)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 0.2)]
    pub val_frac: f64,
    #[arg(long, default_value_t = 200)]
    pub num_graphs: usize,
    #[arg(long, default_value_t = 6)]
    pub min_nodes: usize,
    #[arg(long, default_value_t = 16)]
    pub max_nodes: usize,
    #[arg(long, default_value_t = 0.5)]
    pub dense_p: f64,
    #[arg(long, default_value_t = 0.1)]
    pub shortcut_p: f64,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Arch {
    Gcn,
    Gcnii,
    Gin,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub report: ReportArgs,
    #[arg(long, value_name = "PATH")]
    pub graph: PathBuf,
    #[arg(long, value_enum, default_value = "gcnii")]
    pub arch: Arch,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    /// Layer count; 8 for gcnii, 2 for gcn and 5 for gin by default.
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f32,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f32,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f32,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ExportKnowledgeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "PATH")]
    pub graph: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub teacher: PathBuf,
    /// Planned student embedding dimension, checked against the teacher's.
    #[arg(long)]
    pub student_dim: Option<usize>,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct DistillArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub report: ReportArgs,
    #[arg(long, value_name = "PATH")]
    pub graph: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub knowledge: PathBuf,
    /// Teacher model, only used to record its parameter count.
    #[arg(long, value_name = "PATH")]
    pub teacher: Option<PathBuf>,
    #[arg(long, default_value = "akd", value_parser = parse_mode)]
    pub mode: Mode,
    /// Student architecture; gcn for graphs and gin for graph sets by default.
    #[arg(long, value_enum)]
    pub arch: Option<Arch>,
    /// Student hidden width; the teacher's embedding dimension by default.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f32,
    #[arg(long, default_value_t = 0.01)]
    pub disc_lr: f32,
    #[arg(long, default_value_t = 1.0)]
    pub task_weight: f32,
    #[arg(long, default_value_t = 2.0)]
    pub temperature: f32,
    /// Real/Fake-only logit identifier objective.
    #[arg(long)]
    pub plain: bool,
    #[arg(long)]
    pub non_saturating: bool,
    /// Residual blocks in the logit identifier.
    #[arg(long, default_value_t = 2)]
    pub dl_blocks: usize,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse::<Mode>().map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalSplit {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MetricName {
    Accuracy,
    F1Micro,
    RocAuc,
    Silhouette,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "PATH")]
    pub graph: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: EvalSplit,
    /// Metrics to print; defaults depend on the task.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub metric: Vec<MetricName>,
}

#[derive(Debug, Clone, Args)]
pub struct ExportEmbeddingsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "PATH")]
    pub graph: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

/// Splices `--config` file entries in front of the explicit flags so that
/// the explicit ones, parsed later, take precedence.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let mut path: Option<OsString> = None;
    let mut rest = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = Some(it.next().ok_or_else(|| CliError::Config("--config needs a path".into()))?);
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(OsString::from(p));
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else {
        return Ok(rest);
    };
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Io(format!("config {}: {e}", PathBuf::from(&path).display())))?;
    let mut injected = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("config line {}: expected key=value", i + 1)))?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        let value = value.trim();
        match value {
            "true" => injected.push(OsString::from(format!("--{key}"))),
            "false" => {}
            _ => {
                injected.push(OsString::from(format!("--{key}")));
                injected.push(OsString::from(value));
            }
        }
    }
    // program name and subcommand stay in front
    let split_at = rest.len().min(2);
    let mut out: Vec<OsString> = rest[..split_at].to_vec();
    out.extend(injected);
    out.extend_from_slice(&rest[split_at..]);
    Ok(out)
}

/// Parses and executes one command, returning what it prints on stdout.
pub fn run<I, T>(args: I) -> Result<String, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args = expand_config(args.into_iter().map(Into::into).collect())?;
    let cli = Cli::try_parse_from(args)?;
    match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::TrainTeacher(a) => commands::train_teacher(&a),
        Command::ExportKnowledge(a) => commands::export_knowledge(&a),
        Command::Distill(a) => commands::distill(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::ExportEmbeddings(a) => commands::export_embeddings(&a),
    }
}

/// Entry point of the `akd` binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    match run(args) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(CliError::Usage(e)) => {
            let _ = e.print();
            e.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
