use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use evsearch_core::corpus::Split;
use evsearch_core::knn::{TuneMetric, Vote, DEFAULT_CLASSIFY_K, DEFAULT_REGRESS_K};
use evsearch_core::metrics::Grouping;
use evsearch_core::unicl::FINITE_DIFF_EPSILON;
use evsearch_core::volume::REPORT_CUTOFFS;
use evsearch_core::Aggregation;

#[derive(Debug, Parser)]
#[command(name = "evsearch", version, about = "Embedding search, KNN evidence and evaluation")]
pub struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Only print errors on the diagnostic stream.
    #[arg(long, global = true)]
    pub quiet: bool,

    #[arg(long, global = true, value_enum, default_value_t = Format::Tsv)]
    pub format: Format,

    /// Write the result table here instead of stdout.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Tsv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a record file and optionally write a checksummed snapshot.
    Ingest(IngestArgs),
    /// Deterministic database / validation / test split.
    Split(SplitArgs),
    /// Build the index over a corpus and write what was indexed.
    Index(IndexArgs),
    /// Top-k neighbors for every query record.
    Search(SearchArgs),
    /// Weighted-vote KNN class probabilities.
    Classify(ClassifyArgs),
    /// KNN month regression.
    Regress(RegressArgs),
    /// Classifier-head probabilities.
    Zeroshot(ZeroshotArgs),
    /// Named evaluation run with TSV, JSON and ROC reports.
    Evaluate(EvaluateArgs),
    /// Per-group AUCs of a KNN evaluation.
    Fairness(FairnessArgs),
    /// Volume pooling, search and retrieval metrics.
    #[command(subcommand)]
    Volumes(VolumesCommand),
    /// Contrastive objective checks and toy training.
    #[command(subcommand)]
    Unicl(UniclCommand),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct CorpusInput {
    /// Record lines or snapshot.
    pub input: PathBuf,

    /// Keep only records of this split.
    #[arg(long, value_parser = parse_split)]
    pub split: Option<Split>,

    /// Expected vector dimension.
    #[arg(long)]
    pub dimension: Option<usize>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub corpus: CorpusInput,

    /// Corpus name stored in the snapshot header.
    #[arg(long)]
    pub name: Option<String>,

    /// Snapshot destination.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    pub input: PathBuf,

    #[arg(long, value_parser = parse_ratios, default_value = "0.64,0.16,0.20")]
    pub ratios: [f64; 3],

    /// Receives database.jsonl, validation.jsonl and test.jsonl.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[command(flatten)]
    pub corpus: CorpusInput,

    /// L2-normalize vectors before indexing.
    #[arg(long)]
    pub normalize: bool,

    /// Snapshot of the indexed records.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Neighbors {
    /// Indexed corpus.
    #[arg(long)]
    pub db: PathBuf,

    #[arg(long, value_parser = parse_split)]
    pub db_split: Option<Split>,

    /// Query records.
    #[arg(long)]
    pub queries: PathBuf,

    #[arg(long, value_parser = parse_split)]
    pub query_split: Option<Split>,

    /// L2-normalize database and query vectors.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub neighbors: Neighbors,

    #[arg(long, default_value_t = 10, value_parser = positive)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub neighbors: Neighbors,

    #[arg(long, default_value_t = DEFAULT_CLASSIFY_K, value_parser = positive)]
    pub k: usize,

    #[arg(long, value_parser = parse_vote, default_value = "sum")]
    pub vote: Vote,
}

#[derive(Debug, Args)]
pub struct RegressArgs {
    #[command(flatten)]
    pub neighbors: Neighbors,

    #[arg(long, default_value_t = DEFAULT_REGRESS_K, value_parser = positive)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct ZeroshotArgs {
    /// Classifier head file.
    #[arg(long)]
    pub head: PathBuf,

    #[arg(long)]
    pub queries: PathBuf,

    #[arg(long, value_parser = parse_split)]
    pub query_split: Option<Split>,

    /// Override the head's temperature.
    #[arg(long)]
    pub temperature: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub neighbors: Neighbors,

    /// Run name; report files are named after it.
    #[arg(long, default_value = "run")]
    pub name: String,

    /// Directory for the report files.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,

    #[arg(long, default_value_t = DEFAULT_CLASSIFY_K, value_parser = positive)]
    pub k: usize,

    #[arg(long, default_value_t = DEFAULT_REGRESS_K, value_parser = positive)]
    pub regress_k: usize,

    #[arg(long, value_parser = parse_vote, default_value = "sum")]
    pub vote: Vote,

    /// Validation records used to pick k before evaluating.
    #[arg(long)]
    pub tune: Option<PathBuf>,

    #[arg(long, value_parser = parse_split)]
    pub tune_split: Option<Split>,

    #[arg(long, value_delimiter = ',', default_value = "1,5,10,20,50,100")]
    pub tune_ks: Vec<usize>,

    #[arg(long, value_parser = parse_metric, default_value = "mauc")]
    pub tune_metric: TuneMetric,
}

#[derive(Debug, Args)]
pub struct FairnessArgs {
    #[command(flatten)]
    pub neighbors: Neighbors,

    #[arg(long, value_parser = parse_grouping)]
    pub grouping: Grouping,

    #[arg(long, default_value_t = DEFAULT_CLASSIFY_K, value_parser = positive)]
    pub k: usize,

    #[arg(long, value_parser = parse_vote, default_value = "sum")]
    pub vote: Vote,
}

#[derive(Debug, Subcommand)]
pub enum VolumesCommand {
    /// Pool slice records into volume embeddings.
    Index(VolumeIndexArgs),
    /// Nearest volumes for every query volume.
    Search(VolumeSearchArgs),
    /// Precision at k and average precision per relevance mode.
    Eval(VolumeEvalArgs),
}

#[derive(Debug, Args)]
pub struct VolumeIndexArgs {
    #[command(flatten)]
    pub corpus: CorpusInput,

    #[arg(long, value_parser = parse_aggregation, default_value = "median")]
    pub aggregation: Aggregation,

    /// Volume embeddings as JSON lines.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VolumeSearchArgs {
    /// Slice records of the indexed volumes.
    #[arg(long)]
    pub db: PathBuf,

    /// Slice records of the query volumes.
    #[arg(long)]
    pub queries: PathBuf,

    #[arg(long, value_parser = parse_aggregation, default_value = "median")]
    pub aggregation: Aggregation,

    /// Pooling for the queries; defaults to the index pooling.
    #[arg(long, value_parser = parse_aggregation)]
    pub query_aggregation: Option<Aggregation>,

    #[arg(long, default_value_t = 10, value_parser = positive)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct VolumeEvalArgs {
    #[arg(long)]
    pub db: PathBuf,

    /// Query slices; the database volumes query each other when absent.
    #[arg(long)]
    pub queries: Option<PathBuf>,

    #[arg(long, value_parser = parse_aggregation, default_value = "median")]
    pub aggregation: Aggregation,

    #[arg(long, value_delimiter = ',', default_values_t = REPORT_CUTOFFS)]
    pub cutoffs: Vec<usize>,
}

#[derive(Debug, Subcommand)]
pub enum UniclCommand {
    /// Compare analytic gradients with central differences on random batches.
    Check(CheckArgs),
    /// Fit the toy two-tower model on synthetic clusters.
    Train(TrainArgs),
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, default_value_t = 100, value_parser = positive)]
    pub batches: usize,

    #[arg(long, default_value_t = 8, value_parser = positive)]
    pub max_n: usize,

    #[arg(long, default_value_t = 16, value_parser = positive)]
    pub max_dim: usize,

    #[arg(long, value_delimiter = ',', default_value = "0.1,1,5")]
    pub temperatures: Vec<f64>,

    #[arg(long, default_value_t = FINITE_DIFF_EPSILON)]
    pub epsilon: f64,

    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 3, value_parser = positive)]
    pub clusters: usize,

    #[arg(long, default_value_t = 16, value_parser = positive)]
    pub dimension: usize,

    /// Distance between cluster centers in units of sigma.
    #[arg(long, default_value_t = 4.0)]
    pub separation: f64,

    #[arg(long, default_value_t = 500, value_parser = positive)]
    pub steps: usize,

    #[arg(long, default_value_t = 0.05)]
    pub learning_rate: f64,

    #[arg(long, default_value_t = 0.5)]
    pub temperature: f64,

    #[arg(long, default_value_t = 8, value_parser = positive)]
    pub embedding_dim: usize,

    #[arg(long, default_value_t = 1, value_parser = positive)]
    pub samples_per_class: usize,

    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,

    /// Synthetic database records embedded for export.
    #[arg(long, default_value_t = 300)]
    pub db_records: usize,

    /// Held-out records used for the zero-shot score.
    #[arg(long, default_value_t = 100, value_parser = positive)]
    pub test_records: usize,

    /// Receives trace.tsv, head.jsonl, database.jsonl and test.jsonl.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "ES_HOST", default_value = "127.0.0.1")]
    pub host: String,

    #[arg(long, env = "ES_PORT", default_value_t = 8080)]
    pub port: u16,

    #[arg(long, default_value_t = 64, value_parser = positive)]
    pub max_body_mb: usize,
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_ratios(s: &str) -> Result<[f64; 3], String> {
    let parts = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    parts
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected three ratios, got {}", v.len()))
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: evsearch_core::Error| e.to_string())
}

fn parse_vote(s: &str) -> Result<Vote, String> {
    s.parse().map_err(|e: evsearch_core::Error| e.to_string())
}

fn parse_metric(s: &str) -> Result<TuneMetric, String> {
    s.parse().map_err(|e: evsearch_core::Error| e.to_string())
}

fn parse_grouping(s: &str) -> Result<Grouping, String> {
    s.parse().map_err(|e: evsearch_core::Error| e.to_string())
}

fn parse_aggregation(s: &str) -> Result<Aggregation, String> {
    s.parse().map_err(|e: evsearch_core::Error| e.to_string())
}
