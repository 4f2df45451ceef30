//! `binsim`: fixtures → ingest → build → train → embed → search/eval, plus
//! the GED stability table.
//!
//! Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.

mod commands;
mod config;
mod store;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "binsim", version, about = "Binary function similarity over dominance-enhanced semantic graphs")]
pub struct Cli {
    /// Default location of every input and output not given explicitly.
    #[arg(long, global = true, env = "BINSIM_DATA_DIR", default_value = "binsim-data")]
    pub data_dir: PathBuf,

    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Repeat for more log output on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus: random functions plus obfuscated variants.
    Fixtures(FixturesArgs),
    /// Validate an interchange corpus and summarize warnings.
    Ingest(IngestArgs),
    /// Build one DESG per function into a store directory with a manifest.
    Build(BuildArgs),
    /// CFG versus dominator-tree edit distance between originals and variants.
    Ged(GedArgs),
    /// Train the graph network on the store's training split.
    Train(TrainArgs),
    /// Embed a split of the store with a trained checkpoint.
    Embed(EmbedArgs),
    /// One-to-many search: Recall@1 and MRR per pool size.
    Search(SearchArgs),
    /// One-to-one matching: PR-AUC over positive and sampled negative pairs.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct FixturesArgs {
    /// Output corpus [default: <data-dir>/corpus.jsonl].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub groups: Option<usize>,
    /// Comma-separated obfuscation modes per group.
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<binsim_core::eval::ObfMode>>,
    #[arg(long)]
    pub project: Option<String>,
    #[arg(long)]
    pub min_blocks: Option<usize>,
    #[arg(long)]
    pub max_blocks: Option<usize>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Interchange corpus, one document per line [default: <data-dir>/corpus.jsonl].
    pub input: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// [default: <data-dir>/corpus.jsonl]
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Store directory [default: <data-dir>/store].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LabelArg {
    /// ceil(log2(op count)) per block
    OpCount,
    None,
}

#[derive(Debug, Args)]
pub struct GedArgs {
    /// [default: <data-dir>/corpus.jsonl]
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Report [default: <data-dir>/ged.json].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Only pair originals with these variants.
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<binsim_core::eval::ObfMode>>,
    /// Upper bounds of the block-count buckets.
    #[arg(long, value_delimiter = ',')]
    pub boundaries: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    pub labels: Option<LabelArg>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// [default: <data-dir>/store]
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Best checkpoint [default: <data-dir>/model.ckpt].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-epoch log [default: <data-dir>/train.log.jsonl].
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Embedding width.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub margin: Option<f64>,
    /// Clip on the distance density for negative sampling.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub val_pool_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Valid,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// [default: <data-dir>/model.ckpt]
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// [default: <data-dir>/store]
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// [default: <data-dir>/embeddings.jsonl]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// [default: <data-dir>/embeddings.jsonl]
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub pool_sizes: Option<Vec<usize>>,
    /// Result records [default: <data-dir>/search.jsonl].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write one `x y` series file per metric and task here.
    #[arg(long)]
    pub plot_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// [default: <data-dir>/embeddings.jsonl]
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Negatives per positive pair.
    #[arg(long)]
    pub ratio: Option<usize>,
    /// [default: <data-dir>/match.json]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
