//! IR effectiveness metrics over a set of rankings and graded judgments.
//!
//! Binary metrics (MRR, Recall, AvgGoldRank) treat a document as relevant
//! when its grade is at least the relevance threshold (default 1). NDCG uses
//! exponential gain `2^grade - 1` with a `log2(rank + 1)` discount, normalized
//! by the ideal DCG over the query's full judgment set.
//!
//! Only queries with at least one relevant judgment are scored; the rest are
//! counted as skipped.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::corpus_io::{QrelSet, Ranking, RunMap};

pub const DEFAULT_RELEVANCE_THRESHOLD: i32 = 1;
/// Floor for the default retrieval depth.
pub const MIN_DEFAULT_DEPTH: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("unsupported metric {0}")]
    Unsupported(String),
    #[error("malformed metric `{0}`: expected NAME@K")]
    Malformed(String),
    #[error("metric {spec} needs cutoff {cutoff} but retrieval depth is {depth}")]
    CutoffExceedsDepth {
        spec: String,
        cutoff: usize,
        depth: usize,
    },
    #[error("no metrics requested")]
    NoMetrics,
    #[error("{0}: no query has a relevant judgment")]
    NoScorableQueries(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricKind {
    Mrr,
    Recall,
    Ndcg,
    AvgGoldRank,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Mrr => "MRR",
            MetricKind::Recall => "Recall",
            MetricKind::Ndcg => "NDCG",
            MetricKind::AvgGoldRank => "AvgGoldRank",
        }
    }
}

/// A metric and its cutoff. `cutoff` is `None` only for a bare `AvgGoldRank`,
/// which resolves to the retrieval depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MetricSpec {
    pub kind: MetricKind,
    pub cutoff: Option<usize>,
}

impl MetricSpec {
    pub fn new(kind: MetricKind, cutoff: usize) -> Self {
        assert!(cutoff >= 1, "cutoff must be positive");
        Self {
            kind,
            cutoff: Some(cutoff),
        }
    }

    pub fn resolve(self, depth: usize) -> Self {
        Self {
            kind: self.kind,
            cutoff: Some(self.cutoff.unwrap_or(depth)),
        }
    }
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.cutoff {
            Some(k) => write!(f, "{}@{k}", self.kind.name()),
            None => f.write_str(self.kind.name()),
        }
    }
}

impl FromStr for MetricSpec {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_metric_spec(s)
    }
}

/// Parses `NAME@K` (case-insensitive name). `AvgGoldRank` may omit `@K`.
pub fn parse_metric_spec(s: &str) -> Result<MetricSpec, EvalError> {
    let s = s.trim();
    let (name, cutoff) = match s.split_once('@') {
        Some((n, k)) => (n, Some(k)),
        None => (s, None),
    };
    let kind = match name.to_ascii_lowercase().as_str() {
        "mrr" => MetricKind::Mrr,
        "recall" => MetricKind::Recall,
        "ndcg" => MetricKind::Ndcg,
        "avggoldrank" => MetricKind::AvgGoldRank,
        "" => return Err(EvalError::Malformed(s.to_string())),
        _ => return Err(EvalError::Unsupported(name.to_string())),
    };
    let cutoff = match cutoff {
        Some(k) => match k.parse::<usize>() {
            Ok(k) if k >= 1 => Some(k),
            _ => return Err(EvalError::Malformed(s.to_string())),
        },
        None if kind == MetricKind::AvgGoldRank => None,
        None => return Err(EvalError::Malformed(s.to_string())),
    };
    Ok(MetricSpec { kind, cutoff })
}

/// Retrieval depth used when none is configured: the largest explicit
/// cutoff, but at least [`MIN_DEFAULT_DEPTH`].
pub fn default_retrieval_depth(specs: &[MetricSpec]) -> usize {
    specs
        .iter()
        .filter_map(|s| s.cutoff)
        .max()
        .unwrap_or(0)
        .max(MIN_DEFAULT_DEPTH)
}

/// Checks every cutoff fits within `depth` and resolves bare specs.
pub fn resolve_specs(specs: &[MetricSpec], depth: usize) -> Result<Vec<MetricSpec>, EvalError> {
    if specs.is_empty() {
        return Err(EvalError::NoMetrics);
    }
    specs
        .iter()
        .map(|s| {
            let r = s.resolve(depth);
            let cutoff = r.cutoff.expect("resolved");
            if cutoff > depth {
                Err(EvalError::CutoffExceedsDepth {
                    spec: r.to_string(),
                    cutoff,
                    depth,
                })
            } else {
                Ok(r)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReportRow {
    pub metric: MetricSpec,
    pub value: f64,
    pub num_queries_scored: usize,
    pub num_queries_skipped: usize,
}

/// Means a per-query score over every ranking whose query has a relevant judgment.
fn mean_over_scorable<F>(
    rankings: &RunMap,
    qrels: &QrelSet,
    threshold: i32,
    metric: MetricSpec,
    per_query: F,
) -> Result<MetricReportRow, EvalError>
where
    F: Fn(&Ranking, &HashMap<String, i32>) -> f64,
{
    let mut sum = 0.0;
    let mut scored = 0usize;
    for (qid, ranking) in rankings {
        let Some(judged) = qrels.get(qid) else { continue };
        if !judged.values().any(|&g| g >= threshold) {
            continue;
        }
        sum += per_query(ranking, judged);
        scored += 1;
    }
    if scored == 0 {
        return Err(EvalError::NoScorableQueries(metric.to_string()));
    }
    Ok(MetricReportRow {
        metric,
        value: sum / scored as f64,
        num_queries_scored: scored,
        num_queries_skipped: rankings.len() - scored,
    })
}

fn first_relevant_rank(ranking: &Ranking, judged: &HashMap<String, i32>, k: usize, threshold: i32) -> Option<usize> {
    ranking
        .top(k)
        .position(|d| judged.get(d).is_some_and(|&g| g >= threshold))
        .map(|p| p + 1)
}

pub fn compute_mrr(rankings: &RunMap, qrels: &QrelSet, k: usize, threshold: i32) -> Result<MetricReportRow, EvalError> {
    mean_over_scorable(rankings, qrels, threshold, MetricSpec::new(MetricKind::Mrr, k), |r, j| {
        first_relevant_rank(r, j, k, threshold).map_or(0.0, |rank| 1.0 / rank as f64)
    })
}

pub fn compute_recall(rankings: &RunMap, qrels: &QrelSet, k: usize, threshold: i32) -> Result<MetricReportRow, EvalError> {
    mean_over_scorable(rankings, qrels, threshold, MetricSpec::new(MetricKind::Recall, k), |r, j| {
        let relevant = j.values().filter(|&&g| g >= threshold).count();
        let hit = r
            .top(k)
            .filter(|d| j.get(*d).is_some_and(|&g| g >= threshold))
            .count();
        hit as f64 / relevant as f64
    })
}

fn gain(grade: i32) -> f64 {
    if grade <= 0 {
        0.0
    } else {
        2f64.powi(grade) - 1.0
    }
}

fn discount(rank: usize) -> f64 {
    ((rank + 1) as f64).log2()
}

pub fn compute_ndcg(rankings: &RunMap, qrels: &QrelSet, k: usize, threshold: i32) -> Result<MetricReportRow, EvalError> {
    mean_over_scorable(rankings, qrels, threshold, MetricSpec::new(MetricKind::Ndcg, k), |r, j| {
        let dcg: f64 = r
            .top(k)
            .enumerate()
            .map(|(i, d)| gain(j.get(d).copied().unwrap_or(0)) / discount(i + 1))
            .sum();
        let mut grades: Vec<i32> = j.values().copied().collect();
        grades.sort_unstable_by(|a, b| b.cmp(a));
        let ideal: f64 = grades
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, &g)| gain(g) / discount(i + 1))
            .sum();
        if ideal > 0.0 {
            dcg / ideal
        } else {
            0.0
        }
    })
}

/// Mean rank of the best-ranked relevant doc, `k + 1` when none is in the top k.
pub fn compute_avg_gold_rank(
    rankings: &RunMap,
    qrels: &QrelSet,
    k: usize,
    threshold: i32,
) -> Result<MetricReportRow, EvalError> {
    mean_over_scorable(
        rankings,
        qrels,
        threshold,
        MetricSpec::new(MetricKind::AvgGoldRank, k),
        |r, j| first_relevant_rank(r, j, k, threshold).unwrap_or(k + 1) as f64,
    )
}

pub fn compute(
    spec: MetricSpec,
    rankings: &RunMap,
    qrels: &QrelSet,
    threshold: i32,
) -> Result<MetricReportRow, EvalError> {
    let k = spec
        .cutoff
        .ok_or_else(|| EvalError::Malformed(spec.to_string()))?;
    match spec.kind {
        MetricKind::Mrr => compute_mrr(rankings, qrels, k, threshold),
        MetricKind::Recall => compute_recall(rankings, qrels, k, threshold),
        MetricKind::Ndcg => compute_ndcg(rankings, qrels, k, threshold),
        MetricKind::AvgGoldRank => compute_avg_gold_rank(rankings, qrels, k, threshold),
    }
}

/// One row per spec, in order. `depth` is the retrieval depth the rankings
/// were produced with; cutoffs beyond it are rejected.
pub fn evaluate_run(
    rankings: &RunMap,
    qrels: &QrelSet,
    specs: &[MetricSpec],
    depth: usize,
    threshold: i32,
) -> Result<Vec<MetricReportRow>, EvalError> {
    resolve_specs(specs, depth)?
        .into_iter()
        .map(|s| compute(s, rankings, qrels, threshold))
        .collect()
}
