use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug, Clone)]
#[command(
    name = "zcbm",
    version,
    about = "Explain image embeddings with concepts from a concept bank, without training",
    args_override_self = true
)]
pub struct Cli {
    /// JSON file with flag values, top level or under a command name; command-line flags win
    #[arg(long, global = true, help_heading = "Global options", value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(flatten)]
    pub provider: ProviderArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Extract noun-phrase concepts from tagged captions, filter and embed them
    BuildBank(BuildBankArgs),
    /// Build an inverted-file index over a bank and report its recall
    Index(IndexArgs),
    /// Predict labels and concept weights for a matrix of image embeddings
    Infer(InferArgs),
    /// Accuracy, concept metrics, intervention curves and a PCA export
    Eval(EvalArgs),
    /// Pick the lasso penalty from a grid by the fraction of nonzero concepts
    Calibrate(CalibrateArgs),
    /// Time retrieval, regression and prediction over a grid of k
    Bench(BenchArgs),
    /// Run the HTTP API
    Serve(ServeArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::BuildBank(_) => "build-bank",
            Command::Index(_) => "index",
            Command::Infer(_) => "infer",
            Command::Eval(_) => "eval",
            Command::Calibrate(_) => "calibrate",
            Command::Bench(_) => "bench",
            Command::Serve(_) => "serve",
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ProviderArgs {
    /// Text embedding endpoint
    #[arg(long, global = true, help_heading = "Global options", env = "ZCBM_PROVIDER_URL", value_name = "URL")]
    pub provider_url: Option<String>,

    /// Texts per provider request
    #[arg(long, global = true, help_heading = "Global options", default_value = "256", value_name = "N")]
    pub provider_batch_size: usize,

    /// Provider request timeout in seconds
    #[arg(long, global = true, help_heading = "Global options", default_value = "30", value_name = "SECS")]
    pub provider_timeout: f64,

    /// Prompt wrapped around every text sent to the provider
    #[arg(long, global = true, help_heading = "Global options", default_value = "[TEXT]", value_name = "TEMPLATE")]
    pub prompt_template: String,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
pub enum SolverName {
    Lasso,
    ElasticNet,
    Htp,
    LeastSquares,
    Similarity,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EngineArgs {
    /// Concept bank directory or manifest
    #[arg(long, value_name = "DIR")]
    pub bank: Option<PathBuf>,

    /// Class list: JSON array of {label_id, name, prompt?}
    #[arg(long, value_name = "FILE")]
    pub classes: Option<PathBuf>,

    /// Precomputed class embeddings (.zcbm, one row per class); otherwise prompts are embedded
    #[arg(long, value_name = "FILE")]
    pub class_embeddings: Option<PathBuf>,

    /// Inverted-file index directory; exact search when absent
    #[arg(long, value_name = "DIR")]
    pub index: Option<PathBuf>,

    /// Index lists probed per query [default: the value stored in the index]
    #[arg(long, value_name = "N")]
    pub n_probe: Option<usize>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SolverArgs {
    /// Concepts retrieved per image
    #[arg(long, default_value = "2048")]
    pub k: usize,

    /// Concept regressor
    #[arg(long, value_enum, default_value = "lasso")]
    pub solver: SolverName,

    /// L1 penalty for lasso and elastic_net
    #[arg(long, default_value = "1e-5")]
    pub lambda: f64,

    /// L2 penalty for elastic_net
    #[arg(long, default_value = "1e-5")]
    pub lambda2: f64,

    /// Nonzero budget for htp
    #[arg(long, default_value = "256")]
    pub s: usize,

    /// Gradient step for htp
    #[arg(long, default_value = "0.5")]
    pub step: f64,

    /// Iteration cap for iterative solvers
    #[arg(long, default_value = "1000")]
    pub max_iter: usize,

    /// Convergence tolerance for coordinate descent
    #[arg(long, default_value = "1e-7")]
    pub tol: f64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct BuildBankArgs {
    /// Tagged caption files, one caption of surface_TAG tokens per line
    #[arg(long, num_args = 1.., value_name = "FILE")]
    pub captions: Vec<PathBuf>,

    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Bank name stored in the manifest
    #[arg(long, default_value = "concept-bank")]
    pub name: String,

    /// Longest concept kept, in characters
    #[arg(long, default_value = "30")]
    pub max_chars: usize,

    /// Longest concept kept, in words
    #[arg(long, default_value = "5")]
    pub max_words: usize,

    /// Fewest occurrences for a concept to be kept
    #[arg(long, default_value = "1")]
    pub min_count: usize,

    /// Cosine at or above which a later concept is a duplicate
    #[arg(long, default_value = "0.9")]
    pub dedup_threshold: f64,

    /// Neighbours checked per concept during dedup
    #[arg(long, default_value = "64")]
    pub dedup_top_m: usize,

    /// Class list; drops concepts too similar to a class prompt
    #[arg(long, value_name = "FILE")]
    pub class_file: Option<PathBuf>,

    /// Precomputed class embeddings for --class-file
    #[arg(long, value_name = "FILE")]
    pub class_embeddings: Option<PathBuf>,

    /// Cosine at or above which a concept is dropped by the class filter
    #[arg(long, default_value = "0.85")]
    pub class_threshold: f64,

    /// Concepts to drop, one per line
    #[arg(long, value_name = "FILE")]
    pub blocklist: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct IndexArgs {
    /// Concept bank directory or manifest
    #[arg(long, value_name = "DIR")]
    pub bank: Option<PathBuf>,

    /// Output directory [default: <bank>/ivf]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Number of lists [default: round(sqrt(bank size))]
    #[arg(long, value_name = "N")]
    pub n_list: Option<usize>,

    /// Lists probed per query, stored with the index
    #[arg(long, default_value = "32", value_name = "N")]
    pub n_probe: usize,

    /// k-means seed
    #[arg(long, default_value = "0")]
    pub seed: u64,

    /// Query embeddings (.zcbm) for the recall report [default: bank rows sampled with --seed]
    #[arg(long, value_name = "FILE")]
    pub queries: Option<PathBuf>,

    /// Bank rows sampled as queries when --queries is absent
    #[arg(long, default_value = "100", value_name = "N")]
    pub recall_samples: usize,

    /// Neighbours compared in the recall report
    #[arg(long, default_value = "64", value_name = "K")]
    pub recall_k: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct InferArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub engine: EngineArgs,

    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,

    /// Image embeddings (.zcbm, one row per image)
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,

    /// JSON-lines output [default: stdout]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,

    /// Include per-class cosine scores in every record
    #[arg(long)]
    pub class_scores: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EvalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub engine: EngineArgs,

    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,

    /// Image embeddings (.zcbm, one row per image)
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,

    /// True label ids, one per line
    #[arg(long, value_name = "FILE")]
    pub truth: Option<PathBuf>,

    /// Directory with an independent scorer: a bank of concept embeddings and images.zcbm
    #[arg(long, value_name = "DIR")]
    pub scorer_embeddings: Option<PathBuf>,

    /// Deletion ratios
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
    pub deletion_grid: Vec<f64>,

    /// Deletion orders: ascending, descending, random
    #[arg(long, value_delimiter = ',', default_value = "ascending,descending,random")]
    pub deletion_orders: Vec<String>,

    /// Seed of the random deletion order
    #[arg(long, default_value = "0")]
    pub seed: u64,

    /// Ground-truth concepts to insert: one JSON array of strings per image
    #[arg(long, value_name = "FILE")]
    pub insertion_gt: Option<PathBuf>,

    /// Output directory
    #[arg(long, default_value = "eval", value_name = "DIR")]
    pub out: PathBuf,

    /// Dataset name stored in the report
    #[arg(long, default_value = "eval")]
    pub dataset_name: String,

    /// Keep per-sample records in the report
    #[arg(long)]
    pub per_sample: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct CalibrateArgs {
    /// Concept bank directory or manifest
    #[arg(long, value_name = "DIR")]
    pub bank: Option<PathBuf>,

    /// Inverted-file index directory; exact search when absent
    #[arg(long, value_name = "DIR")]
    pub index: Option<PathBuf>,

    /// Image embeddings (.zcbm, one row per image)
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,

    /// Concepts retrieved per image
    #[arg(long, default_value = "2048")]
    pub k: usize,

    /// Candidate penalties
    #[arg(long, value_delimiter = ',', default_value = "1e-2,1e-3,1e-4,1e-5,1e-6,1e-7,1e-8")]
    pub grid: Vec<f64>,

    /// Mean fraction of nonzero concepts the penalty must exceed
    #[arg(long, default_value = "0.10")]
    pub target_ratio: f64,

    /// Iteration cap for coordinate descent
    #[arg(long, default_value = "1000")]
    pub max_iter: usize,

    /// Convergence tolerance for coordinate descent
    #[arg(long, default_value = "1e-7")]
    pub tol: f64,

    /// JSON result file [default: stdout only]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct BenchArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub engine: EngineArgs,

    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,

    /// Image embeddings (.zcbm, one row per image)
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,

    /// True label ids, one per line; adds an accuracy column
    #[arg(long, value_name = "FILE")]
    pub truth: Option<PathBuf>,

    /// Values of k to time
    #[arg(long, value_delimiter = ',', default_value = "128,256,512,1024,2048")]
    pub k_grid: Vec<usize>,

    /// CSV output [default: stdout]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ServeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub engine: EngineArgs,

    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,

    /// Listen address
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,

    /// Idle seconds before a session expires
    #[arg(long, default_value = "1800", value_name = "SECS")]
    pub session_ttl: u64,

    /// File that keeps sessions across restarts
    #[arg(long, value_name = "FILE")]
    pub session_snapshot: Option<PathBuf>,

    /// Static UI bundle served under /ui
    #[arg(long, value_name = "DIR")]
    pub ui_dir: Option<PathBuf>,

    /// Allowed CORS origin, repeatable [default: any]
    #[arg(long, value_name = "ORIGIN")]
    pub cors_origin: Vec<String>,
}
