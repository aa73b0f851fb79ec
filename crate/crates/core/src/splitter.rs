//! Builds a validation corpus subset: the union over queries of the top-`depth`
//! candidates of a baseline run, plus every judged-relevant passage.

use std::collections::{BTreeSet, HashSet};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::corpus_io::{self, format_id_list, CorpusError, QrelSet, RunMap};

#[derive(Debug, Error)]
pub enum SplitError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("depth must be at least 1")]
    ZeroDepth,
    #[error("{} gold passage(s) missing from the corpus: {}", .0.len(), format_id_list(.0))]
    GoldMissing(Vec<String>),
    #[error("subset is empty")]
    EmptySubset,
    #[error("no corpus files (*.json, *.jsonl) in {0}")]
    NoCorpusFiles(PathBuf),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SubsetStats {
    pub unique_passages: usize,
    pub gold_missing_from_corpus: usize,
    pub gold_outside_depth: usize,
    pub queries_covered: usize,
}

/// The doc ids a subset should contain, plus bookkeeping for [`SubsetStats`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetPlan {
    pub ids: BTreeSet<String>,
    pub gold: BTreeSet<String>,
    pub gold_outside_depth: usize,
    pub queries_covered: usize,
}

pub fn plan_subset(run: &RunMap, qrels: &QrelSet, depth: usize, threshold: i32) -> SubsetPlan {
    let mut ids = BTreeSet::new();
    let mut queries_covered = 0;
    for ranking in run.values() {
        if ranking.is_empty() {
            continue;
        }
        queries_covered += 1;
        ids.extend(ranking.top(depth).map(str::to_string));
    }
    let gold: BTreeSet<String> = qrels
        .relevant_docs(threshold)
        .into_iter()
        .map(str::to_string)
        .collect();
    let gold_outside_depth = gold.iter().filter(|g| !ids.contains(*g)).count();
    ids.extend(gold.iter().cloned());
    SubsetPlan {
        ids,
        gold,
        gold_outside_depth,
        queries_covered,
    }
}

/// File name of the subset written for `depth`.
pub fn subset_file_name(depth: usize) -> String {
    format!("subset_depth{depth}.jsonl")
}

/// Streams the corpus once and writes every record whose id is in the subset
/// to `output_dir/subset_depth<depth>.jsonl`. Gold passages absent from the
/// corpus are an error.
pub fn build_subset(
    candidate_dir: &Path,
    run: &RunMap,
    qrels: &QrelSet,
    depth: usize,
    threshold: i32,
    output_dir: &Path,
) -> Result<(SubsetStats, PathBuf), SplitError> {
    if depth == 0 {
        return Err(SplitError::ZeroDepth);
    }
    let plan = plan_subset(run, qrels, depth, threshold);
    if plan.ids.is_empty() {
        return Err(SplitError::EmptySubset);
    }
    let files = corpus_io::list_corpus_files(candidate_dir)?;
    if files.is_empty() {
        return Err(SplitError::NoCorpusFiles(candidate_dir.to_path_buf()));
    }
    fs::create_dir_all(output_dir).map_err(|e| SplitError::Io {
        path: output_dir.to_path_buf(),
        source: e,
    })?;
    let out_path = output_dir.join(subset_file_name(depth));
    let tmp_path = output_dir.join(format!(".{}.partial", subset_file_name(depth)));
    let result = write_matching(&files, &plan.ids, &tmp_path);
    let found = match result {
        Ok(found) => found,
        Err(e) => {
            let _ = fs::remove_file(&tmp_path);
            return Err(e);
        }
    };

    let missing: Vec<String> = plan.gold.iter().filter(|g| !found.contains(*g)).cloned().collect();
    if !missing.is_empty() {
        let _ = fs::remove_file(&tmp_path);
        return Err(SplitError::GoldMissing(missing));
    }
    if found.is_empty() {
        let _ = fs::remove_file(&tmp_path);
        return Err(SplitError::EmptySubset);
    }
    let absent = plan.ids.len() - found.len();
    if absent > 0 {
        log::warn!("{absent} run candidate(s) not found in the corpus");
    }
    fs::rename(&tmp_path, &out_path).map_err(|e| SplitError::Io {
        path: out_path.clone(),
        source: e,
    })?;
    Ok((
        SubsetStats {
            unique_passages: found.len(),
            gold_missing_from_corpus: 0,
            gold_outside_depth: plan.gold_outside_depth,
            queries_covered: plan.queries_covered,
        },
        out_path,
    ))
}

fn write_matching(
    files: &[PathBuf],
    wanted: &BTreeSet<String>,
    out_path: &Path,
) -> Result<HashSet<String>, SplitError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |e| SplitError::Io { path, source: e }
    };
    let mut out = BufWriter::new(File::create(out_path).map_err(io_err(out_path))?);
    let mut found = HashSet::new();
    let mut dups = Vec::new();
    let mut line = String::new();
    for path in files {
        let mut reader = BufReader::new(File::open(path).map_err(io_err(path))?);
        let mut line_no = 0;
        loop {
            line.clear();
            if reader.read_line(&mut line).map_err(io_err(path))? == 0 {
                break;
            }
            line_no += 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let rec = corpus_io::parse_tokenized_line(trimmed).map_err(|message| {
                CorpusError::Malformed {
                    path: path.clone(),
                    line: line_no,
                    message,
                }
            })?;
            if !wanted.contains(&rec.text_id) {
                continue;
            }
            if !found.insert(rec.text_id.clone()) {
                dups.push(rec.text_id);
                continue;
            }
            out.write_all(trimmed.as_bytes()).map_err(io_err(out_path))?;
            out.write_all(b"\n").map_err(io_err(out_path))?;
        }
    }
    out.flush().map_err(io_err(out_path))?;
    if !dups.is_empty() {
        dups.sort();
        dups.dedup();
        return Err(CorpusError::DuplicateIds { ids: dups }.into());
    }
    Ok(found)
}
