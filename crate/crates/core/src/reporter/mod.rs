//! Append-only sinks for per-checkpoint reports, and trajectory comparison.

mod fidelity;

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orchestrator::ValidationReport;

pub use fidelity::{compare_series, kendall_tau_a, load_series, FidelityError, FidelityReport};

pub const WEBHOOK_TIMEOUT: Duration = Duration::from_secs(5);

const FIXED_LEADING: [&str; 2] = ["checkpoint", "step"];
const FIXED_TRAILING: [&str; 8] = [
    "num_queries",
    "num_candidates",
    "encode_seconds",
    "search_seconds",
    "eval_seconds",
    "total_seconds",
    "status",
    "timestamp",
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("unknown report target `{0}` (expected jsonl, csv, or webhook:<url>)")]
    UnknownSink(String),
    #[error("{path}: existing CSV header does not match this run's columns")]
    CsvHeaderMismatch { path: PathBuf },
    #[error("{path}: line {line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SinkSpec {
    Jsonl,
    Csv,
    Webhook(String),
}

impl FromStr for SinkSpec {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(SinkSpec::Jsonl),
            "csv" => Ok(SinkSpec::Csv),
            _ => match s.strip_prefix("webhook:") {
                Some(url) if !url.is_empty() => Ok(SinkSpec::Webhook(url.to_string())),
                _ => Err(ReportError::UnknownSink(s.to_string())),
            },
        }
    }
}

/// One JSONL line / webhook body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub checkpoint: String,
    pub step: Option<u64>,
    pub metrics: BTreeMap<String, f64>,
    pub num_queries: usize,
    pub num_candidates: usize,
    pub encode_seconds: f64,
    pub search_seconds: f64,
    pub eval_seconds: f64,
    pub total_seconds: f64,
    pub status: String,
    pub timestamp: String,
}

impl ReportRecord {
    pub fn from_report(report: &ValidationReport, timestamp: impl Into<String>) -> Self {
        Self {
            checkpoint: report.checkpoint_name.clone(),
            step: report.step,
            metrics: report
                .metrics
                .iter()
                .map(|row| (row.metric.to_string(), row.value))
                .collect(),
            num_queries: report.num_queries,
            num_candidates: report.num_candidates,
            encode_seconds: report.encode_seconds,
            search_seconds: report.search_seconds,
            eval_seconds: report.eval_seconds,
            total_seconds: report.total_seconds,
            status: report.status.to_string(),
            timestamp: timestamp.into(),
        }
    }
}

pub fn now_timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Reads every record of a JSONL report file.
pub fn read_records(path: &Path) -> Result<Vec<ReportRecord>, ReportError> {
    let file = File::open(path).map_err(|e| ReportError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ReportError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ReportError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn csv_header(metric_columns: &[String]) -> Vec<String> {
    FIXED_LEADING
        .iter()
        .map(|s| s.to_string())
        .chain(metric_columns.iter().cloned())
        .chain(FIXED_TRAILING.iter().map(|s| s.to_string()))
        .collect()
}

fn csv_row(record: &ReportRecord, metric_columns: &[String]) -> Vec<String> {
    let mut row = vec![
        record.checkpoint.clone(),
        record.step.map(|s| s.to_string()).unwrap_or_default(),
    ];
    row.extend(
        metric_columns
            .iter()
            .map(|m| record.metrics.get(m).map(|v| v.to_string()).unwrap_or_default()),
    );
    row.extend([
        record.num_queries.to_string(),
        record.num_candidates.to_string(),
        record.encode_seconds.to_string(),
        record.search_seconds.to_string(),
        record.eval_seconds.to_string(),
        record.total_seconds.to_string(),
        record.status.clone(),
        record.timestamp.clone(),
    ]);
    row
}

/// Fans reports out to the configured sinks. Write failures after startup are
/// logged and counted, never fatal.
pub struct Reporter {
    jsonl: Option<(PathBuf, File)>,
    csv: Option<(PathBuf, csv::Writer<File>)>,
    webhooks: Vec<String>,
    metric_columns: Vec<String>,
    agent: Option<ureq::Agent>,
    warnings: usize,
}

impl Reporter {
    /// Creates `logging_dir` and opens `<run_name>.jsonl` / `<run_name>.csv`
    /// for appending. Fails if the directory or files are not writable, or an
    /// existing CSV has a different header.
    pub fn open(
        sinks: &[SinkSpec],
        logging_dir: &Path,
        run_name: &str,
        metric_columns: &[String],
    ) -> Result<Self, ReportError> {
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |e| ReportError::Io { path, source: e }
        };
        let mut columns: Vec<String> = Vec::new();
        for c in metric_columns {
            if !columns.contains(c) {
                columns.push(c.clone());
            }
        }
        let mut reporter = Reporter {
            jsonl: None,
            csv: None,
            webhooks: Vec::new(),
            metric_columns: columns,
            agent: None,
            warnings: 0,
        };
        let needs_dir = sinks.iter().any(|s| matches!(s, SinkSpec::Jsonl | SinkSpec::Csv));
        if needs_dir {
            fs::create_dir_all(logging_dir).map_err(io_err(logging_dir))?;
        }
        for sink in sinks {
            match sink {
                SinkSpec::Jsonl if reporter.jsonl.is_none() => {
                    let path = logging_dir.join(format!("{run_name}.jsonl"));
                    let file = OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(&path)
                        .map_err(io_err(&path))?;
                    reporter.jsonl = Some((path, file));
                }
                SinkSpec::Csv if reporter.csv.is_none() => {
                    let path = logging_dir.join(format!("{run_name}.csv"));
                    let header = csv_header(&reporter.metric_columns);
                    let existing = match File::open(&path) {
                        Ok(f) => {
                            let mut first = String::new();
                            BufReader::new(f).read_line(&mut first).map_err(io_err(&path))?;
                            Some(first)
                        }
                        Err(e) if e.kind() == io::ErrorKind::NotFound => None,
                        Err(e) => return Err(io_err(&path)(e)),
                    };
                    let file = OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(&path)
                        .map_err(io_err(&path))?;
                    let mut writer = csv::WriterBuilder::new().from_writer(file);
                    match existing.as_deref().map(str::trim_end) {
                        None | Some("") => {
                            writer.write_record(&header).map_err(|e| io_err(&path)(e.into()))?;
                            writer.flush().map_err(io_err(&path))?;
                        }
                        Some(line) if line == header.join(",") => {}
                        Some(_) => return Err(ReportError::CsvHeaderMismatch { path }),
                    }
                    reporter.csv = Some((path, writer));
                }
                SinkSpec::Webhook(url) => reporter.webhooks.push(url.clone()),
                _ => {}
            }
        }
        if !reporter.webhooks.is_empty() {
            let config = ureq::Agent::config_builder()
                .timeout_global(Some(WEBHOOK_TIMEOUT))
                .build();
            reporter.agent = Some(config.into());
        }
        Ok(reporter)
    }

    pub fn jsonl_path(&self) -> Option<&Path> {
        self.jsonl.as_ref().map(|(p, _)| p.as_path())
    }

    pub fn csv_path(&self) -> Option<&Path> {
        self.csv.as_ref().map(|(p, _)| p.as_path())
    }

    /// Sink failures seen so far.
    pub fn warnings(&self) -> usize {
        self.warnings
    }

    pub fn append(&mut self, report: &ValidationReport) {
        let record = ReportRecord::from_report(report, now_timestamp());
        self.append_record(&record);
    }

    pub fn append_record(&mut self, record: &ReportRecord) {
        let body = serde_json::to_string(record).expect("report records always serialize");
        if let Some((path, file)) = self.jsonl.as_mut() {
            let mut line = body.clone().into_bytes();
            line.push(b'\n');
            if let Err(e) = file.write_all(&line).and_then(|()| file.flush()) {
                log::warn!("{}: {e}", path.display());
                self.warnings += 1;
            }
        }
        if let Some((path, writer)) = self.csv.as_mut() {
            let row = csv_row(record, &self.metric_columns);
            let written = writer
                .write_record(&row)
                .map_err(io::Error::from)
                .and_then(|()| writer.flush());
            if let Err(e) = written {
                log::warn!("{}: {e}", path.display());
                self.warnings += 1;
            }
        }
        if let Some(agent) = &self.agent {
            for url in &self.webhooks {
                let sent = agent
                    .post(url)
                    .header("Content-Type", "application/json")
                    .send(body.as_str());
                if let Err(e) = sent {
                    log::warn!("webhook {url}: {e}");
                    self.warnings += 1;
                }
            }
        }
    }
}
