use std::path::PathBuf;
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::corpus_io::{
    self, build_batch, CorpusError, QrelSet, RunMap, TokenBatch, TokenizedText,
};
use crate::encoder::{
    checkpoint_seed, open_session, BuiltinEncoder, EmbeddingBlock, EncodeKind, Encoder,
    EncoderError, SessionConfig,
};
use crate::evaluator::{self, EvalError, MetricReportRow, MetricSpec};
use crate::mips::{MipsError, TopKRetriever};

use super::config::{EncoderChoice, ValidateConfig};
use super::watcher::CheckpointEvent;
use super::OrchestratorError;

/// Corpus batches prepared ahead of the encoder.
const PREFETCH_BATCHES: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReportStatus {
    Ok,
    Failed(String),
}

impl ReportStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, ReportStatus::Ok)
    }
}

impl std::fmt::Display for ReportStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReportStatus::Ok => f.write_str("ok"),
            ReportStatus::Failed(reason) => write!(f, "failed: {reason}"),
        }
    }
}

impl std::str::FromStr for ReportStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "ok" {
            Ok(ReportStatus::Ok)
        } else if let Some(reason) = s.strip_prefix("failed: ") {
            Ok(ReportStatus::Failed(reason.to_string()))
        } else {
            Err(format!("unknown status `{s}`"))
        }
    }
}

/// Outcome of validating one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checkpoint_name: String,
    pub step: Option<u64>,
    pub metrics: Vec<MetricReportRow>,
    pub num_queries: usize,
    pub num_candidates: usize,
    pub encode_seconds: f64,
    pub search_seconds: f64,
    pub eval_seconds: f64,
    pub total_seconds: f64,
    pub status: ReportStatus,
    pub run_file: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("search: {0}")]
    Mips(#[from] MipsError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("writing run file: {0}")]
    RunFile(#[from] CorpusError),
}

#[derive(Default)]
struct Timings {
    encode: Duration,
    search: Duration,
    eval: Duration,
}

/// Inputs shared by every checkpoint validation: tokenized once, reused for all.
pub struct ValidationContext {
    pub config: ValidateConfig,
    pub queries: Vec<TokenizedText>,
    pub corpus: Vec<TokenizedText>,
    pub qrels: QrelSet,
    pub specs: Vec<MetricSpec>,
    pub depth: usize,
}

impl ValidationContext {
    /// Loads queries, corpus, and qrels and checks the configuration.
    pub fn load(config: ValidateConfig) -> Result<Self, OrchestratorError> {
        if config.query_files.is_empty() {
            return Err(OrchestratorError::Config("at least one query file is required".into()));
        }
        if config.batch_size == 0 || config.q_max_len == 0 || config.p_max_len == 0 {
            return Err(OrchestratorError::Config(
                "batch_size, q_max_len and p_max_len must be positive".into(),
            ));
        }
        if config.write_run && config.output_dir.is_none() {
            return Err(OrchestratorError::Config("write_run requires output_dir".into()));
        }
        match &config.encoder {
            EncoderChoice::Builtin { dim: 0 } => {
                return Err(OrchestratorError::Config("builtin encoder dim must be positive".into()))
            }
            EncoderChoice::Plugin { command } if command.trim().is_empty() => {
                return Err(OrchestratorError::Config("encoder command is empty".into()))
            }
            _ => {}
        }
        let depth = match config.retrieve_depth {
            Some(0) => return Err(OrchestratorError::Config("retrieve_depth must be positive".into())),
            Some(d) => d,
            None => evaluator::default_retrieval_depth(&config.metrics),
        };
        let specs = evaluator::resolve_specs(&config.metrics, depth)?;

        let queries = corpus_io::load_tokenized_files(&config.query_files)?;
        let corpus_files = corpus_io::list_corpus_files(&config.candidate_dir)?;
        if corpus_files.is_empty() {
            return Err(OrchestratorError::Config(format!(
                "no corpus files (*.json, *.jsonl) in {}",
                config.candidate_dir.display()
            )));
        }
        let corpus = corpus_io::load_tokenized_files(&corpus_files)?;
        let qrels = corpus_io::parse_qrels(&config.qrel_file)?;
        if qrels.duplicates() > 0 {
            log::warn!("{} duplicate qrel line(s); later lines won", qrels.duplicates());
        }
        if let Some(dir) = &config.output_dir {
            std::fs::create_dir_all(dir).map_err(|e| OrchestratorError::Io {
                path: dir.clone(),
                source: e,
            })?;
        }
        log::info!(
            "loaded {} queries and {} passages; retrieval depth {depth}",
            queries.len(),
            corpus.len()
        );
        Ok(Self {
            config,
            queries,
            corpus,
            qrels,
            specs,
            depth,
        })
    }

    fn open_encoder(&self, event: &CheckpointEvent) -> Result<Box<dyn Encoder>, EncoderError> {
        match &self.config.encoder {
            EncoderChoice::Builtin { dim } => {
                Ok(Box::new(BuiltinEncoder::new(*dim, checkpoint_seed(&event.name))))
            }
            EncoderChoice::Plugin { command } => {
                let session_cfg = SessionConfig {
                    q_max_len: self.config.q_max_len,
                    p_max_len: self.config.p_max_len,
                    handshake_timeout: self.config.handshake_timeout,
                    request_timeout: self.config.request_timeout,
                };
                let ckpt = event.path.to_string_lossy();
                Ok(Box::new(open_session(command, &ckpt, &session_cfg)?))
            }
        }
    }

    fn encode_queries(&self, encoder: &mut dyn Encoder) -> Result<EmbeddingBlock, EncoderError> {
        let mut all = EmbeddingBlock::empty(encoder.dim());
        for chunk in self.queries.chunks(self.config.batch_size) {
            let batch = build_batch(chunk, self.config.q_max_len, self.config.pad_token_id);
            all.extend(encoder.encode(EncodeKind::Query, &batch)?);
        }
        Ok(all)
    }

    /// Encodes the corpus batch by batch and scores each block as it arrives.
    /// Batch preparation runs on a separate thread, one step ahead of the encoder.
    fn encode_and_search(
        &self,
        encoder: &mut dyn Encoder,
        timings: &mut Timings,
    ) -> Result<RunMap, ValidationError> {
        let started = Instant::now();
        let queries = self.encode_queries(encoder)?;
        timings.encode += started.elapsed();
        let mut retriever = TopKRetriever::new(queries, self.depth)?;

        let batch_size = self.config.batch_size;
        let p_max_len = self.config.p_max_len;
        let pad = self.config.pad_token_id;
        let corpus = &self.corpus;
        thread::scope(|s| {
            let (tx, rx) = mpsc::sync_channel::<TokenBatch>(PREFETCH_BATCHES);
            s.spawn(move || {
                for chunk in corpus.chunks(batch_size) {
                    if tx.send(build_batch(chunk, p_max_len, pad)).is_err() {
                        return;
                    }
                }
            });
            for batch in rx {
                let t = Instant::now();
                let block = encoder.encode(EncodeKind::Passage, &batch)?;
                timings.encode += t.elapsed();
                let t = Instant::now();
                retriever.add_block(&block)?;
                timings.search += t.elapsed();
            }
            Ok::<(), ValidationError>(())
        })?;

        let t = Instant::now();
        let run = retriever.finish();
        timings.search += t.elapsed();
        Ok(run)
    }

    fn run_pipeline(
        &self,
        event: &CheckpointEvent,
        timings: &mut Timings,
    ) -> Result<(Vec<MetricReportRow>, Option<PathBuf>), ValidationError> {
        let t = Instant::now();
        let mut encoder = self.open_encoder(event)?;
        timings.encode += t.elapsed();

        let searched = self.encode_and_search(encoder.as_mut(), timings);
        let closed = encoder.close();
        let run = searched?;
        if let Err(e) = closed {
            log::warn!("{}: closing encoder: {e}", event.name);
        }

        let t = Instant::now();
        let rows = evaluator::evaluate_run(
            &run,
            &self.qrels,
            &self.specs,
            self.depth,
            self.config.relevance_threshold,
        )?;
        timings.eval += t.elapsed();

        let run_file = match (&self.config.output_dir, self.config.write_run) {
            (Some(dir), true) => {
                let path = dir.join(run_file_name(&self.config.run_name, &event.name));
                corpus_io::write_run_file(&run, &event.name, &path)?;
                Some(path)
            }
            _ => None,
        };
        Ok((rows, run_file))
    }

    /// Runs the full pipeline for one checkpoint. Failures are captured in the
    /// report's status rather than returned.
    pub fn validate_checkpoint(&self, event: &CheckpointEvent) -> ValidationReport {
        let started = Instant::now();
        let mut timings = Timings::default();
        let outcome = self.run_pipeline(event, &mut timings);
        let total = started.elapsed();
        let (metrics, run_file, status) = match outcome {
            Ok((rows, run_file)) => (rows, run_file, ReportStatus::Ok),
            Err(e) => {
                log::error!("{}: validation failed: {e}", event.name);
                (Vec::new(), None, ReportStatus::Failed(e.to_string()))
            }
        };
        ValidationReport {
            checkpoint_name: event.name.clone(),
            step: event.step,
            metrics,
            num_queries: self.queries.len(),
            num_candidates: self.corpus.len(),
            encode_seconds: timings.encode.as_secs_f64(),
            search_seconds: timings.search.as_secs_f64(),
            eval_seconds: timings.eval.as_secs_f64(),
            total_seconds: total.as_secs_f64(),
            status,
            run_file,
        }
    }
}

/// `<run_name>.<checkpoint_name>.trec`
pub fn run_file_name(run_name: &str, checkpoint_name: &str) -> String {
    format!("{run_name}.{checkpoint_name}.trec")
}
