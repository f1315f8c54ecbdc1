use std::path::PathBuf;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use hhlink_core::cluster::Algorithm;
use hhlink_core::models::ModelType;
use hhlink_core::pairgen::{DEFAULT_BLOCK_SIZE, DEFAULT_FLOOR};

#[derive(Debug, Parser)]
#[command(name = "hhlink", version, about = "Privacy-preserving record linkage pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encode plaintext profiles into keyed Bloom-filter vectors.
    Encode(EncodeArgs),
    /// Generate a synthetic corpus with known duplicates from a clean roster.
    Synth(SynthArgs),
    /// Compare all encoded profile pairs and keep those above the floor.
    Pairs(PairsArgs),
    /// Grid-search model hyperparameters with stratified cross validation.
    Tune(TuneArgs),
    /// Fit a model on the training split of labeled pairs.
    Train(TrainArgs),
    /// Classify candidate pairs and write the accepted links.
    Link(LinkArgs),
    /// Cluster profiles from weighted links.
    Cluster(ClusterArgs),
    /// Score models and clusterings against ground truth.
    Eval(EvalArgs),
    /// Shelter utilization metrics before and after merging profiles.
    Metrics(MetricsArgs),
    /// Generate demonstration shelter stays for a set of profiles.
    DemoStays(DemoStaysArgs),
    /// Run the local adjudication service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArg {
    /// Flat `key = value` file supplying flags not given on the command line.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long, value_name = "CSV")]
    pub profiles: PathBuf,
    /// Output encoded.jsonl.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Vector length in bits (32 or 64).
    #[arg(long, default_value_t = 64)]
    pub m: u32,
    /// Hash positions per bigram.
    #[arg(long, default_value_t = 2)]
    pub k: u32,
    /// File holding the secret key; defaults to the HHLINK_KEY variable.
    #[arg(long, value_name = "FILE")]
    pub key_file: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Clean roster in profile CSV format.
    #[arg(long, value_name = "CSV", required_unless_present = "bundled_roster", conflicts_with = "bundled_roster")]
    pub roster: Option<PathBuf>,
    /// Use N generated clean profiles instead of a roster file.
    #[arg(long, value_name = "N")]
    pub bundled_roster: Option<usize>,
    /// `size,weight` rows; defaults to the built-in manual distribution.
    #[arg(long, value_name = "CSV")]
    pub size_dist: Option<PathBuf>,
    /// `d_first,d_last,d_day,d_month,d_year,weight` rows.
    #[arg(long, value_name = "CSV")]
    pub patterns: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Pairs with pooled Dice below this are not materialized.
    #[arg(long, default_value_t = DEFAULT_FLOOR)]
    pub floor: f64,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
    pub block_size: usize,
}

#[derive(Debug, Args)]
pub struct PairsArgs {
    #[arg(long, value_name = "JSONL")]
    pub encoded: PathBuf,
    /// Ground truth; when given, pairs are labeled.
    #[arg(long, value_name = "CSV")]
    pub truth: Option<PathBuf>,
    /// Output pairs.csv; pair_summary.json is written next to it.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub compare: CompareArgs,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Labeled pairs.csv.
    #[arg(long, value_name = "CSV")]
    pub pairs: PathBuf,
    /// pair_summary.json from the pairs stage, for the implicit negative count.
    #[arg(long, value_name = "JSON")]
    pub pair_summary: Option<PathBuf>,
    /// Share of each class held out for testing.
    #[arg(long, default_value_t = 0.3)]
    pub test_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long, value_name = "TYPE", required_unless_present = "grid")]
    pub model: Option<ModelType>,
    /// Grid JSON; defaults to the built-in grid for the model type.
    #[arg(long, value_name = "JSON")]
    pub grid: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Output directory for tuning_report.json.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Model type, trained with default hyperparameters unless --params is given.
    #[arg(long, value_name = "TYPE", required_unless_present = "params")]
    pub model: Option<ModelType>,
    /// Hyperparameter JSON, or a tuning report whose winner is used.
    #[arg(long, value_name = "JSON")]
    pub params: Option<PathBuf>,
    #[command(flatten)]
    pub data: DatasetArgs,
    /// Output model artifact.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct LinkArgs {
    #[arg(long, value_name = "JSON")]
    pub model: PathBuf,
    #[arg(long, value_name = "JSONL")]
    pub encoded: PathBuf,
    /// Candidate pairs to classify; compared afresh from --encoded when absent.
    #[arg(long, value_name = "CSV")]
    pub pairs: Option<PathBuf>,
    #[command(flatten)]
    pub compare: CompareArgs,
    /// Output links.csv.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long, value_name = "CSV")]
    pub links: PathBuf,
    /// Encoded profiles; every profile appears in the output.
    #[arg(long, value_name = "JSONL")]
    pub encoded: PathBuf,
    #[arg(long, value_name = "ALGO", default_value = "merge-center")]
    pub algo: Algorithm,
    /// Output clusters.csv.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model artifacts to score on the train and test splits of --pairs.
    #[arg(long, value_name = "JSON", requires = "pairs")]
    pub model: Vec<PathBuf>,
    #[arg(long, value_name = "CSV")]
    pub pairs: Option<PathBuf>,
    #[arg(long, value_name = "JSON")]
    pub pair_summary: Option<PathBuf>,
    #[arg(long, default_value_t = 0.3)]
    pub test_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "CSV", requires = "clusters")]
    pub truth: Option<PathBuf>,
    /// Clusterings to score, as `NAME=clusters.csv` or a bare path named by its file stem.
    #[arg(long, value_name = "[NAME=]CSV", requires = "truth")]
    pub clusters: Vec<String>,
    /// Output directory for eval_report.json.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TenureArg {
    Exclusive,
    Inclusive,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long, value_name = "CSV")]
    pub stays: PathBuf,
    /// Clustering used to merge profiles into persons.
    #[arg(long, value_name = "CSV")]
    pub clusters: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TenureArg::Exclusive)]
    pub tenure: TenureArg,
    /// Size of the heaviest-user cohort, in percent.
    #[arg(long, default_value_t = 5.0)]
    pub top_percent: f64,
    /// Output directory for usage_report.json and episode_hist.csv.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct DemoStaysArgs {
    /// Encoded profiles whose ids receive stays.
    #[arg(long, value_name = "JSONL", required_unless_present = "profiles", conflicts_with = "profiles")]
    pub encoded: Option<PathBuf>,
    /// Plaintext profiles whose ids receive stays.
    #[arg(long, value_name = "CSV")]
    pub profiles: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub shelters: usize,
    #[arg(long, default_value = "2019-01-01")]
    pub start: NaiveDate,
    #[arg(long, default_value_t = 730)]
    pub days: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output stays.csv.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, value_name = "CSV")]
    pub profiles: PathBuf,
    /// Append-only decision log; replayed on startup.
    #[arg(long, value_name = "NDJSON")]
    pub decisions: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Seed for the per-session anchor order.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 15)]
    pub lease_minutes: u64,
    /// Static reviewer interface to serve at `/`.
    #[arg(long, value_name = "DIR")]
    pub ui_dir: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
}
