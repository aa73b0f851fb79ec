use std::path::PathBuf;
use std::time::Duration;

use crate::evaluator::{MetricKind, MetricSpec, DEFAULT_RELEVANCE_THRESHOLD};
use crate::reporter::SinkSpec;

pub const DEFAULT_BATCH_SIZE: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub enum EncoderChoice {
    /// External plugin; `{ckpt}` in the command is replaced by the checkpoint path.
    Plugin { command: String },
    /// In-process deterministic encoder with the given output dim.
    Builtin { dim: usize },
}

/// Everything the `validate` loop needs.
#[derive(Debug, Clone)]
pub struct ValidateConfig {
    pub query_files: Vec<PathBuf>,
    pub candidate_dir: PathBuf,
    pub ckpts_dir: PathBuf,
    pub qrel_file: PathBuf,
    pub encoder: EncoderChoice,
    pub q_max_len: usize,
    pub p_max_len: usize,
    pub pad_token_id: i32,
    pub batch_size: usize,
    pub metrics: Vec<MetricSpec>,
    pub retrieve_depth: Option<usize>,
    pub relevance_threshold: i32,
    pub run_name: String,
    pub write_run: bool,
    pub output_dir: Option<PathBuf>,
    pub logging_dir: PathBuf,
    pub report_to: Vec<SinkSpec>,
    pub max_num_valid: Option<usize>,
    pub poll_interval: Duration,
    pub quiescence: Duration,
    pub idle_timeout: Option<Duration>,
    pub handshake_timeout: Duration,
    pub request_timeout: Option<Duration>,
}

impl ValidateConfig {
    pub fn new(
        query_files: Vec<PathBuf>,
        candidate_dir: impl Into<PathBuf>,
        ckpts_dir: impl Into<PathBuf>,
        qrel_file: impl Into<PathBuf>,
        encoder: EncoderChoice,
    ) -> Self {
        Self {
            query_files,
            candidate_dir: candidate_dir.into(),
            ckpts_dir: ckpts_dir.into(),
            qrel_file: qrel_file.into(),
            encoder,
            q_max_len: 32,
            p_max_len: 128,
            pad_token_id: 0,
            batch_size: DEFAULT_BATCH_SIZE,
            metrics: vec![MetricSpec::new(MetricKind::Mrr, 10)],
            retrieve_depth: None,
            relevance_threshold: DEFAULT_RELEVANCE_THRESHOLD,
            run_name: "validation".into(),
            write_run: false,
            output_dir: None,
            logging_dir: PathBuf::from("logs"),
            report_to: vec![SinkSpec::Jsonl],
            max_num_valid: None,
            poll_interval: Duration::from_secs(2),
            quiescence: Duration::from_secs(5),
            idle_timeout: None,
            handshake_timeout: Duration::from_secs(120),
            request_timeout: None,
        }
    }
}
