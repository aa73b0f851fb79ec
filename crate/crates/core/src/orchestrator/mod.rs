//! Watches a checkpoint directory and validates each new checkpoint as it
//! appears, while training keeps producing the next one.
//!
//! Two activities run concurrently: a scanner thread that polls the directory
//! and a validator (the calling thread) that drains a FIFO of ready
//! checkpoints one at a time. Scanning never waits on a validation, so
//! checkpoints written mid-validation queue up without loss.

mod config;
mod validate;
mod watcher;

use std::collections::HashSet;
use std::io;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::corpus_io::CorpusError;
use crate::evaluator::EvalError;
use crate::reporter::{ReportError, Reporter};

pub use config::{EncoderChoice, ValidateConfig, DEFAULT_BATCH_SIZE};
pub use validate::{
    run_file_name, ReportStatus, ValidationContext, ValidationError, ValidationReport,
};
pub use watcher::{parse_step, scan_ready_checkpoints, CheckpointEvent, SENTINEL};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("configuration: {0}")]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("scanning checkpoints: {0}")]
    Scan(String),
}

/// Scheduling knobs of the watch loop.
#[derive(Debug, Clone)]
pub struct LoopConfig {
    pub ckpts_dir: PathBuf,
    pub poll_interval: Duration,
    pub quiescence: Duration,
    /// Stop after this many validations, successful or failed.
    pub max_num_valid: Option<usize>,
    /// Stop when nothing arrives for this long.
    pub idle_timeout: Option<Duration>,
}

impl From<&ValidateConfig> for LoopConfig {
    fn from(c: &ValidateConfig) -> Self {
        Self {
            ckpts_dir: c.ckpts_dir.clone(),
            poll_interval: c.poll_interval,
            quiescence: c.quiescence,
            max_num_valid: c.max_num_valid,
            idle_timeout: c.idle_timeout,
        }
    }
}

fn scanner(cfg: &LoopConfig, stop: &AtomicBool, tx: mpsc::Sender<Result<CheckpointEvent, String>>) {
    let mut seen = HashSet::new();
    let tick = cfg.poll_interval.min(Duration::from_millis(50)).max(Duration::from_millis(1));
    while !stop.load(Ordering::Relaxed) {
        match scan_ready_checkpoints(&cfg.ckpts_dir, &seen, cfg.quiescence) {
            Ok(events) => {
                for ev in events {
                    log::info!("checkpoint ready: {}", ev.name);
                    seen.insert(ev.name.clone());
                    if tx.send(Ok(ev)).is_err() {
                        return;
                    }
                }
            }
            Err(e) => {
                let _ = tx.send(Err(format!("{}: {e}", cfg.ckpts_dir.display())));
                return;
            }
        }
        let wake = Instant::now() + cfg.poll_interval;
        while Instant::now() < wake {
            if stop.load(Ordering::Relaxed) {
                return;
            }
            thread::sleep(tick.min(wake.saturating_duration_since(Instant::now())));
        }
    }
}

/// Runs the scan/validate loop with a caller-supplied validation step.
///
/// Returns the reports in validation order once `max_num_valid` checkpoints
/// have been processed or the idle timeout expires. Without either limit the
/// loop runs until the scanner fails.
pub fn run_loop_with<V, R>(
    cfg: &LoopConfig,
    mut validate: V,
    mut on_report: R,
) -> Result<Vec<ValidationReport>, OrchestratorError>
where
    V: FnMut(&CheckpointEvent) -> ValidationReport,
    R: FnMut(&ValidationReport),
{
    std::fs::read_dir(&cfg.ckpts_dir).map_err(|e| OrchestratorError::Io {
        path: cfg.ckpts_dir.clone(),
        source: e,
    })?;
    if cfg.max_num_valid == Some(0) {
        return Ok(Vec::new());
    }
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel();
    thread::scope(|s| {
        s.spawn(|| scanner(cfg, &stop, tx));
        let mut reports = Vec::new();
        let mut last_activity = Instant::now();
        let outcome = loop {
            if cfg.max_num_valid.is_some_and(|m| reports.len() >= m) {
                break Ok(());
            }
            let received = match cfg.idle_timeout {
                Some(idle) => {
                    let left = (last_activity + idle).saturating_duration_since(Instant::now());
                    rx.recv_timeout(left)
                }
                None => rx.recv().map_err(|_| RecvTimeoutError::Disconnected),
            };
            match received {
                Ok(Ok(event)) => {
                    log::info!("validating {}", event.name);
                    let report = validate(&event);
                    log::info!(
                        "{}: {} in {:.2}s",
                        report.checkpoint_name,
                        report.status,
                        report.total_seconds
                    );
                    on_report(&report);
                    reports.push(report);
                    last_activity = Instant::now();
                }
                Ok(Err(e)) => break Err(OrchestratorError::Scan(e)),
                Err(RecvTimeoutError::Timeout) => {
                    log::info!("no new checkpoint within the idle timeout; stopping");
                    break Ok(());
                }
                Err(RecvTimeoutError::Disconnected) => {
                    break Err(OrchestratorError::Scan("scanner stopped unexpectedly".into()))
                }
            }
        };
        stop.store(true, Ordering::Relaxed);
        outcome.map(|()| reports)
    })
}

/// Loads the inputs once, opens the report sinks, and validates checkpoints
/// as they become ready.
pub fn run_loop(config: ValidateConfig) -> Result<Vec<ValidationReport>, OrchestratorError> {
    let loop_cfg = LoopConfig::from(&config);
    let ctx = ValidationContext::load(config)?;
    let metric_columns: Vec<String> = ctx.specs.iter().map(|s| s.to_string()).collect();
    let mut reporter = Reporter::open(
        &ctx.config.report_to,
        &ctx.config.logging_dir,
        &ctx.config.run_name,
        &metric_columns,
    )?;
    let reports = run_loop_with(&loop_cfg, |ev| ctx.validate_checkpoint(ev), |r| reporter.append(r))?;
    if reporter.warnings() > 0 {
        log::warn!("{} report sink warning(s) during the run", reporter.warnings());
    }
    Ok(reports)
}
