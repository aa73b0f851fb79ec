//! On-disk formats: pre-tokenized JSONL corpora and query sets, TREC qrels,
//! TREC run files, and padded token batches.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate text_id across input files: {}", format_id_list(.ids))]
    DuplicateIds { ids: Vec<String> },
}

impl CorpusError {
    fn io(path: &Path, source: io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn malformed(path: &Path, line: usize, message: impl Into<String>) -> Self {
        CorpusError::Malformed {
            path: path.to_path_buf(),
            line,
            message: message.into(),
        }
    }
}

pub(crate) fn format_id_list(ids: &[String]) -> String {
    const SHOWN: usize = 10;
    let mut out = ids.iter().take(SHOWN).cloned().collect::<Vec<_>>().join(", ");
    if ids.len() > SHOWN {
        out.push_str(&format!(" (and {} more)", ids.len() - SHOWN));
    }
    out
}

/// A passage or query: its id plus the token ids produced by the user's tokenizer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedText {
    pub text_id: String,
    pub tokens: Vec<i32>,
}

impl TokenizedText {
    pub fn new(text_id: impl Into<String>, tokens: Vec<i32>) -> Self {
        Self {
            text_id: text_id.into(),
            tokens,
        }
    }

    /// Serializes to one JSONL line (without the trailing newline).
    pub fn to_json_line(&self) -> String {
        serde_json::json!({ "text_id": self.text_id, "text": self.tokens }).to_string()
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawId {
    Str(String),
    Int(i64),
}

#[derive(Deserialize)]
struct RawRecord {
    text_id: RawId,
    text: Vec<i64>,
}

/// Strips serde_json's " at line X column Y" suffix; we report file lines ourselves.
fn json_message(err: &serde_json::Error) -> String {
    let msg = err.to_string();
    match msg.rfind(" at line ") {
        Some(idx) => msg[..idx].to_string(),
        None => msg,
    }
}

/// Parses one JSONL line into a record. Integer ids are accepted and kept in
/// their decimal string form.
pub fn parse_tokenized_line(line: &str) -> Result<TokenizedText, String> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| json_message(&e))?;
    let text_id = match raw.text_id {
        RawId::Str(s) => s,
        RawId::Int(i) => i.to_string(),
    };
    if text_id.is_empty() {
        return Err("empty `text_id`".to_string());
    }
    let mut tokens = Vec::with_capacity(raw.text.len());
    for t in raw.text {
        if !(0..=i64::from(i32::MAX)).contains(&t) {
            return Err(format!("token id {t} out of range [0, {}]", i32::MAX));
        }
        tokens.push(t as i32);
    }
    Ok(TokenizedText { text_id, tokens })
}

/// Streaming reader over a tokenized JSONL file. Holds one line in memory at a time.
pub struct TokenizedReader<R> {
    reader: R,
    path: PathBuf,
    line_no: usize,
    buf: String,
    done: bool,
}

impl<R: BufRead> TokenizedReader<R> {
    pub fn new(reader: R, path: impl Into<PathBuf>) -> Self {
        Self {
            reader,
            path: path.into(),
            line_no: 0,
            buf: String::new(),
            done: false,
        }
    }

    /// Number of lines consumed so far (including blank ones).
    pub fn lines_read(&self) -> usize {
        self.line_no
    }
}

impl<R: BufRead> Iterator for TokenizedReader<R> {
    type Item = Result<TokenizedText, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            self.buf.clear();
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => {
                    self.done = true;
                    return None;
                }
                Ok(_) => {
                    self.line_no += 1;
                    let line = self.buf.trim();
                    if line.is_empty() {
                        continue;
                    }
                    let parsed = parse_tokenized_line(line)
                        .map_err(|m| CorpusError::malformed(&self.path, self.line_no, m));
                    if parsed.is_err() {
                        self.done = true;
                    }
                    return Some(parsed);
                }
                Err(e) => {
                    self.done = true;
                    return Some(Err(CorpusError::io(&self.path, e)));
                }
            }
        }
        None
    }
}

/// Opens a tokenized JSONL file for streaming.
pub fn parse_tokenized_file(
    path: impl AsRef<Path>,
) -> Result<TokenizedReader<BufReader<File>>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    Ok(TokenizedReader::new(BufReader::new(file), path))
}

/// Loads every record of the given files, in order, rejecting ids that occur
/// more than once anywhere in the set.
pub fn load_tokenized_files<P: AsRef<Path>>(
    paths: &[P],
) -> Result<Vec<TokenizedText>, CorpusError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut dups = Vec::new();
    for p in paths {
        for rec in parse_tokenized_file(p)? {
            let rec = rec?;
            if !seen.insert(rec.text_id.clone()) {
                dups.push(rec.text_id.clone());
                continue;
            }
            out.push(rec);
        }
    }
    if !dups.is_empty() {
        dups.sort();
        dups.dedup();
        return Err(CorpusError::DuplicateIds { ids: dups });
    }
    Ok(out)
}

/// Lists the `.json`/`.jsonl` files of a corpus directory in ascending filename order.
pub fn list_corpus_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, CorpusError> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| CorpusError::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CorpusError::io(dir, e))?;
        let path = entry.path();
        let hidden = entry.file_name().to_string_lossy().starts_with('.');
        let is_json = matches!(
            path.extension().and_then(|e| e.to_str()),
            Some("json" | "jsonl")
        );
        if path.is_file() && is_json && !hidden {
            files.push(path);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

/// Graded relevance judgments, keyed by query id then doc id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QrelSet {
    judgments: BTreeMap<String, HashMap<String, i32>>,
    parsed_lines: usize,
    duplicates: usize,
}

impl QrelSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a judgment; returns true if it replaced an earlier one.
    pub fn insert(&mut self, qid: impl Into<String>, docid: impl Into<String>, grade: i32) -> bool {
        let replaced = self
            .judgments
            .entry(qid.into())
            .or_default()
            .insert(docid.into(), grade)
            .is_some();
        if replaced {
            self.duplicates += 1;
        }
        replaced
    }

    pub fn judgments(&self) -> &BTreeMap<String, HashMap<String, i32>> {
        &self.judgments
    }

    pub fn get(&self, qid: &str) -> Option<&HashMap<String, i32>> {
        self.judgments.get(qid)
    }

    pub fn grade(&self, qid: &str, docid: &str) -> Option<i32> {
        self.judgments.get(qid)?.get(docid).copied()
    }

    pub fn num_queries(&self) -> usize {
        self.judgments.len()
    }

    pub fn parsed_lines(&self) -> usize {
        self.parsed_lines
    }

    /// Number of (query, doc) pairs that were overwritten by a later line.
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    /// Distinct doc ids judged at or above `threshold`, over all queries.
    pub fn relevant_docs(&self, threshold: i32) -> HashSet<&str> {
        self.judgments
            .values()
            .flat_map(|docs| docs.iter())
            .filter(|(_, &g)| g >= threshold)
            .map(|(d, _)| d.as_str())
            .collect()
    }
}

pub fn parse_qrels_reader<R: BufRead>(reader: R, path: &Path) -> Result<QrelSet, CorpusError> {
    let mut qrels = QrelSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 4 {
            return Err(CorpusError::malformed(
                path,
                line_no,
                format!("expected 4 fields `qid iter docid grade`, found {}", fields.len()),
            ));
        }
        let grade: i32 = fields[3].parse().map_err(|_| {
            CorpusError::malformed(path, line_no, format!("non-integer grade `{}`", fields[3]))
        })?;
        qrels.parsed_lines += 1;
        if qrels.insert(fields[0], fields[2], grade) {
            log::warn!(
                "{}: line {line_no}: duplicate judgment for ({}, {}), keeping the later one",
                path.display(),
                fields[0],
                fields[2]
            );
        }
    }
    Ok(qrels)
}

/// Parses a TREC qrel file (`qid iter docid grade`).
pub fn parse_qrels(path: impl AsRef<Path>) -> Result<QrelSet, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    parse_qrels_reader(BufReader::new(file), path)
}

/// One ranked candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedDoc {
    pub doc_id: String,
    pub score: f64,
}

/// Canonical ranking order: score descending, then doc id ascending (byte-wise).
pub fn canonical_cmp(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> std::cmp::Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

/// A per-query ordered candidate list.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub query_id: String,
    entries: Vec<RankedDoc>,
}

impl Ranking {
    pub fn empty(query_id: impl Into<String>) -> Self {
        Self {
            query_id: query_id.into(),
            entries: Vec::new(),
        }
    }

    /// Builds a ranking from unordered entries, sorting them canonically.
    /// Doc ids must be unique.
    pub fn from_unsorted(query_id: impl Into<String>, mut entries: Vec<RankedDoc>) -> Self {
        entries.sort_by(|a, b| canonical_cmp(a.score, &a.doc_id, b.score, &b.doc_id));
        debug_assert!(entries.windows(2).all(|w| w[0].doc_id != w[1].doc_id));
        Self {
            query_id: query_id.into(),
            entries,
        }
    }

    pub(crate) fn from_sorted(query_id: String, entries: Vec<RankedDoc>) -> Self {
        Self { query_id, entries }
    }

    pub fn entries(&self) -> &[RankedDoc] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Doc ids of the first `depth` entries.
    pub fn top(&self, depth: usize) -> impl Iterator<Item = &str> {
        self.entries.iter().take(depth).map(|e| e.doc_id.as_str())
    }
}

/// Rankings keyed by query id, iterated in ascending query id order.
pub type RunMap = BTreeMap<String, Ranking>;

pub fn parse_run_reader<R: BufRead>(reader: R, path: &Path) -> Result<RunMap, CorpusError> {
    let mut per_query: BTreeMap<String, (Vec<RankedDoc>, HashSet<String>)> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 6 {
            return Err(CorpusError::malformed(
                path,
                line_no,
                format!(
                    "expected 6 fields `qid Q0 docid rank score tag`, found {}",
                    fields.len()
                ),
            ));
        }
        let score: f64 = fields[4]
            .parse()
            .ok()
            .filter(|s: &f64| !s.is_nan())
            .ok_or_else(|| {
                CorpusError::malformed(path, line_no, format!("non-numeric score `{}`", fields[4]))
            })?;
        let (entries, seen) = per_query.entry(fields[0].to_string()).or_default();
        if !seen.insert(fields[2].to_string()) {
            return Err(CorpusError::malformed(
                path,
                line_no,
                format!("doc `{}` listed twice for query `{}`", fields[2], fields[0]),
            ));
        }
        entries.push(RankedDoc {
            doc_id: fields[2].to_string(),
            score,
        });
    }
    Ok(per_query
        .into_iter()
        .map(|(qid, (entries, _))| (qid.clone(), Ranking::from_unsorted(qid, entries)))
        .collect())
}

/// Parses a TREC run file (`qid Q0 docid rank score tag`). The rank column is
/// ignored; entries are re-sorted canonically.
pub fn parse_run_file(path: impl AsRef<Path>) -> Result<RunMap, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    parse_run_reader(BufReader::new(file), path)
}

pub fn write_run<W: Write>(rankings: &RunMap, tag: &str, mut out: W) -> io::Result<()> {
    for (qid, ranking) in rankings {
        for (rank, e) in ranking.entries().iter().enumerate() {
            writeln!(out, "{qid} Q0 {} {} {:.6} {tag}", e.doc_id, rank + 1, e.score)?;
        }
    }
    out.flush()
}

/// Writes rankings in TREC format, queries in ascending id order, 6-decimal scores.
pub fn write_run_file(
    rankings: &RunMap,
    tag: &str,
    path: impl AsRef<Path>,
) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    write_run(rankings, tag, BufWriter::new(file)).map_err(|e| CorpusError::io(path, e))
}

/// A padded, masked batch of token rows in row-major layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBatch {
    pub ids: Vec<String>,
    pub tokens: Vec<i32>,
    pub mask: Vec<u8>,
    pub max_len: usize,
}

impl TokenBatch {
    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn token_row(&self, i: usize) -> &[i32] {
        &self.tokens[i * self.max_len..(i + 1) * self.max_len]
    }

    pub fn mask_row(&self, i: usize) -> &[u8] {
        &self.mask[i * self.max_len..(i + 1) * self.max_len]
    }
}

/// Truncates each row to its first `max_len` tokens and right-pads the rest.
pub fn build_batch<'a, I>(texts: I, max_len: usize, pad_token_id: i32) -> TokenBatch
where
    I: IntoIterator<Item = &'a TokenizedText>,
{
    assert!(max_len >= 1, "max_len must be at least 1");
    let texts = texts.into_iter();
    let (lower, _) = texts.size_hint();
    let mut batch = TokenBatch {
        ids: Vec::with_capacity(lower),
        tokens: Vec::with_capacity(lower * max_len),
        mask: Vec::with_capacity(lower * max_len),
        max_len,
    };
    for text in texts {
        let kept = text.tokens.len().min(max_len);
        batch.ids.push(text.text_id.clone());
        batch.tokens.extend_from_slice(&text.tokens[..kept]);
        batch
            .tokens
            .extend(std::iter::repeat_n(pad_token_id, max_len - kept));
        batch.mask.extend(std::iter::repeat_n(1u8, kept));
        batch.mask.extend(std::iter::repeat_n(0u8, max_len - kept));
    }
    batch
}
