use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{ArgGroup, Args, Parser, Subcommand};

use ckptval::corpus_io;
use ckptval::evaluator::{MetricSpec, DEFAULT_RELEVANCE_THRESHOLD};
use ckptval::orchestrator::{self, EncoderChoice, ValidateConfig, DEFAULT_BATCH_SIZE};
use ckptval::reporter::{self, SinkSpec};
use ckptval::splitter;

#[derive(Parser)]
#[command(name = "ckptval", version, about = "Validate dense retriever checkpoints as training writes them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Watch a checkpoint directory and validate each new checkpoint.
    Validate(Box<ValidateArgs>),
    /// Build a corpus subset from a baseline run file plus gold passages.
    Split(SplitArgs),
    /// Compare one metric's trajectory across two JSONL reports.
    Compare(CompareArgs),
}

fn seconds(s: &str) -> Result<Duration, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    Duration::try_from_secs_f64(v).map_err(|e| format!("{e}"))
}

#[derive(Args)]
#[command(group(ArgGroup::new("encoder").required(true).args(["encoder_cmd", "builtin_encoder_dim"])))]
struct ValidateArgs {
    /// Tokenized query JSONL; repeat for several files.
    #[arg(long = "query_file", required = true)]
    query_file: Vec<PathBuf>,
    /// Directory of tokenized corpus JSONL files.
    #[arg(long = "candidate_dir")]
    candidate_dir: PathBuf,
    #[arg(long = "ckpts_dir")]
    ckpts_dir: PathBuf,
    /// Plugin launch command; `{ckpt}` is replaced by the checkpoint path.
    #[arg(long = "encoder_cmd")]
    encoder_cmd: Option<String>,
    /// Use the built-in deterministic encoder with this output dim.
    #[arg(long = "builtin_encoder_dim")]
    builtin_encoder_dim: Option<usize>,
    /// Only pre-tokenized input is supported.
    #[arg(long = "tokenizer", alias = "tokenizer_name_or_path", default_value = "pre-tokenized")]
    tokenizer: String,
    #[arg(long = "q_max_len", default_value_t = 32)]
    q_max_len: usize,
    #[arg(long = "p_max_len", default_value_t = 128)]
    p_max_len: usize,
    #[arg(long = "pad_token_id", default_value_t = 0)]
    pad_token_id: i32,
    #[arg(long = "qrel_file")]
    qrel_file: PathBuf,
    #[arg(long = "run_name", default_value = "validation")]
    run_name: String,
    #[arg(long = "write_run", num_args = 0..=1, default_value_t = false, default_missing_value = "true")]
    write_run: bool,
    #[arg(long = "output_dir")]
    output_dir: Option<PathBuf>,
    #[arg(long = "max_num_valid")]
    max_num_valid: Option<usize>,
    #[arg(long = "logging_dir", default_value = "logs")]
    logging_dir: PathBuf,
    /// e.g. MRR@10; repeatable.
    #[arg(long = "metrics", default_value = "MRR@10")]
    metrics: Vec<MetricSpec>,
    /// jsonl, csv or webhook:<url>; repeatable.
    #[arg(long = "report_to", default_value = "jsonl")]
    report_to: Vec<SinkSpec>,
    #[arg(long = "batch_size", default_value_t = DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    #[arg(long = "retrieve_depth")]
    retrieve_depth: Option<usize>,
    #[arg(long = "relevance_threshold", default_value_t = DEFAULT_RELEVANCE_THRESHOLD)]
    relevance_threshold: i32,
    /// Seconds between directory scans.
    #[arg(long = "poll_interval", default_value = "2", value_parser = seconds)]
    poll_interval: Duration,
    /// Seconds without modification after which a checkpoint counts as complete.
    #[arg(long = "quiescence_seconds", default_value = "5", value_parser = seconds)]
    quiescence_seconds: Duration,
    /// Stop after this many seconds without a new checkpoint.
    #[arg(long = "idle_timeout", value_parser = seconds)]
    idle_timeout: Option<Duration>,
    #[arg(long = "handshake_timeout", default_value = "120", value_parser = seconds)]
    handshake_timeout: Duration,
    /// Per-request plugin timeout in seconds; unlimited if unset.
    #[arg(long = "request_timeout", value_parser = seconds)]
    request_timeout: Option<Duration>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long = "candidate_dir")]
    candidate_dir: PathBuf,
    /// Baseline TREC run, e.g. BM25.
    #[arg(long = "run_file")]
    run_file: PathBuf,
    #[arg(long = "qrel_file")]
    qrel_file: PathBuf,
    #[arg(long = "output_dir")]
    output_dir: PathBuf,
    /// Top passages kept per query.
    #[arg(long = "depth")]
    depth: usize,
    #[arg(long = "relevance_threshold", default_value_t = DEFAULT_RELEVANCE_THRESHOLD)]
    relevance_threshold: i32,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long = "series_a")]
    series_a: PathBuf,
    #[arg(long = "series_b")]
    series_b: PathBuf,
    #[arg(long = "metric", default_value = "MRR@10")]
    metric: MetricSpec,
}

fn validate(args: ValidateArgs) -> Result<()> {
    if args.tokenizer != "pre-tokenized" {
        bail!(
            "tokenizer `{}` is not supported; inputs must be pre-tokenized",
            args.tokenizer
        );
    }
    let encoder = match (args.encoder_cmd, args.builtin_encoder_dim) {
        (Some(command), None) => EncoderChoice::Plugin { command },
        (None, Some(dim)) => EncoderChoice::Builtin { dim },
        _ => unreachable!("clap enforces exactly one encoder"),
    };
    let mut config = ValidateConfig::new(
        args.query_file,
        args.candidate_dir,
        args.ckpts_dir,
        args.qrel_file,
        encoder,
    );
    config.q_max_len = args.q_max_len;
    config.p_max_len = args.p_max_len;
    config.pad_token_id = args.pad_token_id;
    config.batch_size = args.batch_size;
    config.metrics = args.metrics;
    config.retrieve_depth = args.retrieve_depth;
    config.relevance_threshold = args.relevance_threshold;
    config.run_name = args.run_name;
    config.write_run = args.write_run;
    config.output_dir = args.output_dir;
    config.logging_dir = args.logging_dir;
    config.report_to = args.report_to;
    config.max_num_valid = args.max_num_valid;
    config.poll_interval = args.poll_interval;
    config.quiescence = args.quiescence_seconds;
    config.idle_timeout = args.idle_timeout;
    config.handshake_timeout = args.handshake_timeout;
    config.request_timeout = args.request_timeout;

    let reports = orchestrator::run_loop(config)?;
    let failed = reports.iter().filter(|r| !r.status.is_ok()).count();
    log::info!("validated {} checkpoint(s), {failed} failed", reports.len());
    Ok(())
}

fn split(args: SplitArgs) -> Result<()> {
    let run = corpus_io::parse_run_file(&args.run_file)?;
    let qrels = corpus_io::parse_qrels(&args.qrel_file)?;
    let (stats, path) = splitter::build_subset(
        &args.candidate_dir,
        &run,
        &qrels,
        args.depth,
        args.relevance_threshold,
        &args.output_dir,
    )?;
    log::info!("wrote {}", path.display());
    println!("{}", serde_json::to_string(&stats)?);
    Ok(())
}

fn compare(args: CompareArgs) -> Result<()> {
    let a = reporter::load_series(&args.series_a, &args.metric)
        .with_context(|| format!("reading {}", args.series_a.display()))?;
    let b = reporter::load_series(&args.series_b, &args.metric)
        .with_context(|| format!("reading {}", args.series_b.display()))?;
    let report = reporter::compare_series(&a, &b)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate(a) => validate(*a),
        Command::Split(a) => split(a),
        Command::Compare(a) => compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
