use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

use commands::CliError;

#[derive(Parser)]
#[command(
    name = "breps",
    version,
    about = "Block-representation reranking for long documents"
)]
struct Cli {
    /// Engine configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Cap on worker threads (0 = all cores).
    #[arg(long, global = true)]
    parallelism: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment, embed and store a JSON-lines corpus.
    Index(IndexArgs),
    /// Rerank a TREC candidate run against a store.
    Rerank(RerankArgs),
    /// Train a projection head on (query, positive, negative) triplets.
    Train(TrainArgs),
    /// Evaluate a TREC run against qrels.
    Eval(EvalArgs),
    /// Compare blockwise and whole-document embedding cost.
    Bench(BenchArgs),
    /// Dump stored (and optionally query) vectors as TSV.
    ExportVectors(ExportArgs),
}

#[derive(Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out_store: PathBuf,
}

#[derive(Args)]
pub struct RerankArgs {
    #[arg(long)]
    pub queries: PathBuf,
    /// Candidate run file (TREC format).
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub out_run: PathBuf,
    /// Score only the first N stored blocks of each document.
    #[arg(long)]
    pub blocks: Option<usize>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub triplets: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub out_head: PathBuf,
    /// Per-step loss TSV; defaults to `<out-head>.loss.tsv`.
    #[arg(long)]
    pub loss_curve: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    /// Comma-separated metrics, e.g. `ndcg@10,map,p@1`.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "ndcg@5,ndcg@10,ndcg,map,p@1"
    )]
    pub metrics: Vec<String>,
    /// Run to compare against with a paired t-test.
    #[arg(long)]
    pub baseline_run: Option<PathBuf>,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub corpus: PathBuf,
}

#[derive(Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = commands::Context::load(cli.config.as_deref(), cli.parallelism)?;
    match cli.command {
        Command::Index(a) => commands::index(&ctx, &a),
        Command::Rerank(a) => commands::rerank(&ctx, &a),
        Command::Train(a) => commands::train(&ctx, &a),
        Command::Eval(a) => commands::eval(&ctx, &a),
        Command::Bench(a) => commands::bench(&ctx, &a),
        Command::ExportVectors(a) => commands::export_vectors(&ctx, &a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(commands::EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code, e.message);
            ExitCode::from(e.code)
        }
    }
}
