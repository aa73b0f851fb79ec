//! C ABI over the checkpoint validation library.
//!
//! Every fallible function returns a [`CkptvalStatus`]; on failure the message
//! is available from [`ckptval_last_error`] on the same thread. Objects are
//! handed out as opaque pointers and must be released with their `_free`
//! function.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ckptval::corpus_io::{self, QrelSet, RunMap, TokenBatch};
use ckptval::encoder::{builtin_encode, checkpoint_seed, EmbeddingBlock, EncodeKind};
use ckptval::evaluator::{self, MetricSpec};
use ckptval::mips::retrieve_topk;
use ckptval::reporter::compare_series;
use ckptval::splitter;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CkptvalStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    Evaluation = 6,
    Split = 7,
    Internal = 8,
}

/// Parsed relevance judgments.
pub struct CkptvalQrels {
    inner: QrelSet,
}

/// Per-query rankings, as read from or written to a TREC run file.
pub struct CkptvalRun {
    inner: RunMap,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CkptvalMetricResult {
    pub value: f64,
    pub num_queries_scored: usize,
    pub num_queries_skipped: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CkptvalSubsetStats {
    pub unique_passages: usize,
    pub gold_missing_from_corpus: usize,
    pub gold_outside_depth: usize,
    pub queries_covered: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CkptvalFidelity {
    pub kendall_tau: f64,
    pub max_abs_diff: f64,
    pub mean_signed_diff: f64,
    pub argmax_agreement: bool,
    pub shared_steps: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(CkptvalStatus, String);

impl Failure {
    fn new(status: CkptvalStatus, message: impl Into<String>) -> Self {
        Failure(status, message.into())
    }
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, records any failure or panic, and returns its status.
fn guard<F>(f: F) -> CkptvalStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CkptvalStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            CkptvalStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(CkptvalStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(CkptvalStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure::new(CkptvalStatus::NullPointer, format!("{name} is null")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::new(CkptvalStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure::new(CkptvalStatus::NullPointer, format!("{name} is null")))
}

fn corpus_failure(e: corpus_io::CorpusError) -> Failure {
    let status = match e {
        corpus_io::CorpusError::Io { .. } => CkptvalStatus::Io,
        _ => CkptvalStatus::Parse,
    };
    Failure::new(status, e.to_string())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn ckptval_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ckptval_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reads a TREC qrel file.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ckptval_qrels_load(path: *const c_char, out: *mut *mut CkptvalQrels) -> CkptvalStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        let inner = corpus_io::parse_qrels(path).map_err(corpus_failure)?;
        *out = Box::into_raw(Box::new(CkptvalQrels { inner }));
        Ok(())
    })
}

/// # Safety
/// `qrels` must be null or a pointer from [`ckptval_qrels_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ckptval_qrels_free(qrels: *mut CkptvalQrels) {
    if !qrels.is_null() {
        drop(Box::from_raw(qrels));
    }
}

/// Number of judged queries, 0 for a null handle.
///
/// # Safety
/// `qrels` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ckptval_qrels_num_queries(qrels: *const CkptvalQrels) -> usize {
    qrels.as_ref().map_or(0, |q| q.inner.num_queries())
}

/// Reads a TREC run file; rankings are re-sorted canonically.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ckptval_run_load(path: *const c_char, out: *mut *mut CkptvalRun) -> CkptvalStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        let inner = corpus_io::parse_run_file(path).map_err(corpus_failure)?;
        *out = Box::into_raw(Box::new(CkptvalRun { inner }));
        Ok(())
    })
}

/// # Safety
/// `run` must be null or a pointer from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ckptval_run_free(run: *mut CkptvalRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ckptval_run_num_queries(run: *const CkptvalRun) -> usize {
    run.as_ref().map_or(0, |r| r.inner.len())
}

/// Writes `run` in TREC format with the given tag.
///
/// # Safety
/// `run` must be a live handle; `tag` and `path` valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ckptval_run_write(
    run: *const CkptvalRun,
    tag: *const c_char,
    path: *const c_char,
) -> CkptvalStatus {
    guard(|| {
        let run = ref_arg(run, "run")?;
        let tag = str_arg(tag, "tag")?;
        let path = str_arg(path, "path")?;
        corpus_io::write_run_file(&run.inner, tag, path).map_err(corpus_failure)
    })
}

/// Evaluates one metric such as `"MRR@10"` over `run`.
///
/// # Safety
/// Handles must be live, `metric` a valid string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ckptval_evaluate(
    run: *const CkptvalRun,
    qrels: *const CkptvalQrels,
    metric: *const c_char,
    relevance_threshold: i32,
    out: *mut CkptvalMetricResult,
) -> CkptvalStatus {
    guard(|| {
        let run = ref_arg(run, "run")?;
        let qrels = ref_arg(qrels, "qrels")?;
        let metric = str_arg(metric, "metric")?;
        let out = out_arg(out, "out")?;
        let spec: MetricSpec = metric
            .parse()
            .map_err(|e: evaluator::EvalError| Failure::new(CkptvalStatus::InvalidArgument, e.to_string()))?;
        let depth = run.inner.values().map(|r| r.len()).max().unwrap_or(0).max(1);
        let spec = spec.resolve(depth);
        let row = evaluator::compute(spec, &run.inner, &qrels.inner, relevance_threshold)
            .map_err(|e| Failure::new(CkptvalStatus::Evaluation, e.to_string()))?;
        *out = CkptvalMetricResult {
            value: row.value,
            num_queries_scored: row.num_queries_scored,
            num_queries_skipped: row.num_queries_skipped,
        };
        Ok(())
    })
}

fn index_id(i: usize) -> String {
    // Fixed width keeps byte order equal to numeric order for tie-breaking.
    format!("{i:020}")
}

/// Exact top-k inner-product search over row-major f32 matrices.
///
/// For query `i`, slots `i*k .. i*k+k` of `out_indices` receive document row
/// indices in rank order (ties to the smaller index) and `out_scores` their
/// scores; unused slots get index -1 and score 0 when `num_docs < k`.
///
/// # Safety
/// `queries` holds `num_queries*dim` floats, `docs` holds `num_docs*dim`,
/// and both outputs hold `num_queries*k` elements.
#[no_mangle]
pub unsafe extern "C" fn ckptval_search_topk(
    queries: *const f32,
    num_queries: usize,
    docs: *const f32,
    num_docs: usize,
    dim: usize,
    k: usize,
    out_indices: *mut i64,
    out_scores: *mut f32,
) -> CkptvalStatus {
    guard(|| {
        if dim == 0 || k == 0 {
            return Err(Failure::new(CkptvalStatus::InvalidArgument, "dim and k must be positive"));
        }
        let q = slice_arg(queries, num_queries * dim, "queries")?;
        let d = slice_arg(docs, num_docs * dim, "docs")?;
        if num_queries > 0 && (out_indices.is_null() || out_scores.is_null()) {
            return Err(Failure::new(CkptvalStatus::NullPointer, "output buffer is null"));
        }
        let qblock = EmbeddingBlock::new((0..num_queries).map(index_id).collect(), q.to_vec(), dim);
        let dblock = EmbeddingBlock::new((0..num_docs).map(index_id).collect(), d.to_vec(), dim);
        let run = retrieve_topk(&qblock, [dblock], k)
            .map_err(|e| Failure::new(CkptvalStatus::InvalidArgument, e.to_string()))?;
        for (qi, qid) in qblock.ids.iter().enumerate() {
            let idx = std::slice::from_raw_parts_mut(out_indices.add(qi * k), k);
            let scores = std::slice::from_raw_parts_mut(out_scores.add(qi * k), k);
            idx.fill(-1);
            scores.fill(0.0);
            for (slot, entry) in run[qid].entries().iter().enumerate() {
                idx[slot] = entry.doc_id.parse().expect("index ids are numeric");
                scores[slot] = entry.score as f32;
            }
        }
        Ok(())
    })
}

/// Deterministic built-in embeddings for `rows` padded token rows of length
/// `len`; writes `rows*dim` floats to `out`.
///
/// # Safety
/// `tokens` and `mask` hold `rows*len` elements; `out` holds `rows*dim`.
#[no_mangle]
pub unsafe extern "C" fn ckptval_builtin_encode(
    tokens: *const i32,
    mask: *const u8,
    rows: usize,
    len: usize,
    dim: usize,
    seed: u64,
    out: *mut f32,
) -> CkptvalStatus {
    guard(|| {
        if dim == 0 || len == 0 {
            return Err(Failure::new(CkptvalStatus::InvalidArgument, "dim and len must be positive"));
        }
        let tokens = slice_arg(tokens, rows * len, "tokens")?;
        let mask = slice_arg(mask, rows * len, "mask")?;
        if rows == 0 {
            return Ok(());
        }
        if out.is_null() {
            return Err(Failure::new(CkptvalStatus::NullPointer, "out is null"));
        }
        let batch = TokenBatch {
            ids: (0..rows).map(|i| i.to_string()).collect(),
            tokens: tokens.to_vec(),
            mask: mask.to_vec(),
            max_len: len,
        };
        let block = builtin_encode(EncodeKind::Passage, &batch, dim, seed);
        std::slice::from_raw_parts_mut(out, rows * dim).copy_from_slice(&block.vectors);
        Ok(())
    })
}

/// Seed the built-in encoder uses for a checkpoint name. Returns 0 for null
/// or non-UTF-8 input.
///
/// # Safety
/// `name` must be null or a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ckptval_checkpoint_seed(name: *const c_char) -> u64 {
    match str_arg(name, "name") {
        Ok(n) => checkpoint_seed(n),
        Err(_) => 0,
    }
}

/// Writes `output_dir/subset_depth<depth>.jsonl` from the corpus in
/// `candidate_dir`: the top `depth` of every ranking plus all gold passages.
///
/// # Safety
/// Strings must be valid, handles live, `out` null or valid.
#[no_mangle]
pub unsafe extern "C" fn ckptval_split(
    candidate_dir: *const c_char,
    run: *const CkptvalRun,
    qrels: *const CkptvalQrels,
    depth: usize,
    relevance_threshold: i32,
    output_dir: *const c_char,
    out: *mut CkptvalSubsetStats,
) -> CkptvalStatus {
    guard(|| {
        let candidate_dir = PathBuf::from(str_arg(candidate_dir, "candidate_dir")?);
        let output_dir = PathBuf::from(str_arg(output_dir, "output_dir")?);
        let run = ref_arg(run, "run")?;
        let qrels = ref_arg(qrels, "qrels")?;
        let (stats, _) = splitter::build_subset(
            &candidate_dir,
            &run.inner,
            &qrels.inner,
            depth,
            relevance_threshold,
            &output_dir,
        )
        .map_err(|e| Failure::new(CkptvalStatus::Split, e.to_string()))?;
        if let Some(out) = out.as_mut() {
            *out = CkptvalSubsetStats {
                unique_passages: stats.unique_passages,
                gold_missing_from_corpus: stats.gold_missing_from_corpus,
                gold_outside_depth: stats.gold_outside_depth,
                queries_covered: stats.queries_covered,
            };
        }
        Ok(())
    })
}

/// Compares two step-indexed metric series over their shared steps.
/// A repeated step keeps its last value.
///
/// # Safety
/// Each steps/values pair holds `len_*` elements; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ckptval_compare_series(
    steps_a: *const u64,
    values_a: *const f64,
    len_a: usize,
    steps_b: *const u64,
    values_b: *const f64,
    len_b: usize,
    out: *mut CkptvalFidelity,
) -> CkptvalStatus {
    guard(|| {
        let collect = |steps: &[u64], values: &[f64]| -> BTreeMap<u64, f64> {
            steps.iter().copied().zip(values.iter().copied()).collect()
        };
        let a = collect(slice_arg(steps_a, len_a, "steps_a")?, slice_arg(values_a, len_a, "values_a")?);
        let b = collect(slice_arg(steps_b, len_b, "steps_b")?, slice_arg(values_b, len_b, "values_b")?);
        let out = out_arg(out, "out")?;
        let r = compare_series(&a, &b).map_err(|e| Failure::new(CkptvalStatus::InvalidArgument, e.to_string()))?;
        *out = CkptvalFidelity {
            kendall_tau: r.kendall_tau,
            max_abs_diff: r.max_abs_diff,
            mean_signed_diff: r.mean_signed_diff,
            argmax_agreement: r.argmax_agreement,
            shared_steps: r.shared_steps,
        };
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cstr(s: &str) -> CString {
        CString::new(s).unwrap()
    }

    fn last_error() -> String {
        let p = ckptval_last_error();
        assert!(!p.is_null());
        unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
    }

    #[test]
    fn null_arguments_are_reported() {
        let mut out = ptr::null_mut();
        let status = unsafe { ckptval_qrels_load(ptr::null(), &mut out) };
        assert_eq!(status, CkptvalStatus::NullPointer);
        assert_eq!(last_error(), "path is null");
        assert!(out.is_null());
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let mut out = ptr::null_mut();
        let path = cstr("/nonexistent/qrels.txt");
        assert_eq!(unsafe { ckptval_qrels_load(path.as_ptr(), &mut out) }, CkptvalStatus::Io);
        assert!(last_error().contains("/nonexistent/qrels.txt"));
    }

    #[test]
    fn success_clears_the_last_error() {
        let _ = unsafe { ckptval_qrels_load(ptr::null(), ptr::null_mut()) };
        assert!(!ckptval_last_error().is_null());
        let mut f = CkptvalFidelity::default();
        let steps = [1u64, 2];
        let vals = [0.1f64, 0.2];
        let status = unsafe {
            ckptval_compare_series(steps.as_ptr(), vals.as_ptr(), 2, steps.as_ptr(), vals.as_ptr(), 2, &mut f)
        };
        assert_eq!(status, CkptvalStatus::Ok);
        assert!(ckptval_last_error().is_null());
        assert_eq!(f.kendall_tau, 1.0);
        assert!(f.argmax_agreement);
    }

    #[test]
    fn topk_with_padding_and_ties() {
        // Docs 0 and 2 tie; 0 wins.
        let q = [1.0f32, 0.0];
        let d = [2.0f32, 0.0, 1.0, 5.0, 2.0, 9.0];
        let mut idx = [0i64; 4];
        let mut scores = [0f32; 4];
        let status = unsafe {
            ckptval_search_topk(q.as_ptr(), 1, d.as_ptr(), 3, 2, 4, idx.as_mut_ptr(), scores.as_mut_ptr())
        };
        assert_eq!(status, CkptvalStatus::Ok);
        assert_eq!(idx, [0, 2, 1, -1]);
        assert_eq!(scores, [2.0, 2.0, 1.0, 0.0]);
    }

    #[test]
    fn topk_rejects_zero_k() {
        let q = [1.0f32];
        let status = unsafe {
            ckptval_search_topk(q.as_ptr(), 1, q.as_ptr(), 1, 1, 0, ptr::null_mut(), ptr::null_mut())
        };
        assert_eq!(status, CkptvalStatus::InvalidArgument);
    }

    #[test]
    fn builtin_encode_matches_the_library() {
        let tokens = [101, 7, 0, 5, 0, 0];
        let mask = [1u8, 1, 0, 1, 0, 0];
        let mut out = [0f32; 8];
        let status = unsafe { ckptval_builtin_encode(tokens.as_ptr(), mask.as_ptr(), 2, 3, 4, 42, out.as_mut_ptr()) };
        assert_eq!(status, CkptvalStatus::Ok);
        let batch = TokenBatch {
            ids: vec!["a".into(), "b".into()],
            tokens: tokens.to_vec(),
            mask: mask.to_vec(),
            max_len: 3,
        };
        assert_eq!(out.to_vec(), builtin_encode(EncodeKind::Query, &batch, 4, 42).vectors);
    }

    #[test]
    fn checkpoint_seed_uses_the_step() {
        let name = cstr("checkpoint-1234");
        assert_eq!(unsafe { ckptval_checkpoint_seed(name.as_ptr()) }, 1234);
        assert_eq!(unsafe { ckptval_checkpoint_seed(ptr::null()) }, 0);
    }

    #[test]
    fn version_is_the_crate_version() {
        let v = unsafe { CStr::from_ptr(ckptval_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn freeing_null_is_a_no_op() {
        unsafe {
            ckptval_qrels_free(ptr::null_mut());
            ckptval_run_free(ptr::null_mut());
        }
        assert_eq!(unsafe { ckptval_run_num_queries(ptr::null()) }, 0);
    }
}
