//! Exact top-k maximum inner product search over streamed embedding blocks.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus_io::{canonical_cmp, RankedDoc, Ranking, RunMap};
use crate::encoder::EmbeddingBlock;

#[derive(Debug, Error, PartialEq)]
pub enum MipsError {
    #[error("dimension mismatch: queries have dim {queries}, block has dim {block}")]
    DimMismatch { queries: usize, block: usize },
    #[error("doc id `{0}` appears in more than one block")]
    DuplicateDoc(String),
    #[error("duplicate query id `{0}`")]
    DuplicateQuery(String),
    #[error("k must be at least 1")]
    ZeroK,
}

/// Dot product accumulated left to right in f32.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Row-major `queries.rows() x block.rows()` matrix of inner products.
pub fn score_block(queries: &EmbeddingBlock, block: &EmbeddingBlock) -> Result<Vec<f32>, MipsError> {
    if queries.dim != block.dim {
        return Err(MipsError::DimMismatch {
            queries: queries.dim,
            block: block.dim,
        });
    }
    let mut scores = vec![0f32; queries.rows() * block.rows()];
    if block.rows() == 0 {
        return Ok(scores);
    }
    scores
        .par_chunks_mut(block.rows())
        .enumerate()
        .for_each(|(i, row)| {
            let q = queries.row(i);
            for (j, s) in row.iter_mut().enumerate() {
                *s = dot(q, block.row(j));
            }
        });
    Ok(scores)
}

#[derive(Debug, Clone)]
struct Candidate {
    score: f32,
    doc_id: String,
}

// Ordered so that the heap's maximum is the worst candidate kept.
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        canonical_cmp(
            f64::from(self.score),
            &self.doc_id,
            f64::from(other.score),
            &other.doc_id,
        )
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

/// Best `k` candidates seen so far for one query.
#[derive(Debug, Clone)]
pub struct TopKAccumulator {
    query_id: String,
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl TopKAccumulator {
    pub fn new(query_id: impl Into<String>, k: usize) -> Self {
        assert!(k >= 1, "k must be at least 1");
        Self {
            query_id: query_id.into(),
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn push(&mut self, score: f32, doc_id: &str) {
        if self.heap.len() < self.k {
            self.heap.push(Candidate {
                score,
                doc_id: doc_id.to_string(),
            });
            return;
        }
        let worst = self.heap.peek().expect("k >= 1");
        if canonical_cmp(f64::from(score), doc_id, f64::from(worst.score), &worst.doc_id)
            == Ordering::Less
        {
            self.heap.pop();
            self.heap.push(Candidate {
                score,
                doc_id: doc_id.to_string(),
            });
        }
    }

    /// Folds `other` into `self`. The result is the top-k of the union and does
    /// not depend on merge order.
    pub fn merge(&mut self, other: TopKAccumulator) {
        debug_assert_eq!(self.query_id, other.query_id);
        for c in other.heap {
            self.push(c.score, &c.doc_id);
        }
    }

    pub fn into_ranking(self) -> Ranking {
        let entries = self
            .heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| RankedDoc {
                doc_id: c.doc_id,
                score: f64::from(c.score),
            })
            .collect();
        Ranking::from_sorted(self.query_id, entries)
    }
}

/// Incremental exact retrieval: feed corpus blocks in any order and partition.
pub struct TopKRetriever {
    queries: EmbeddingBlock,
    accumulators: Vec<TopKAccumulator>,
    seen_docs: HashSet<String>,
}

impl TopKRetriever {
    pub fn new(queries: EmbeddingBlock, k: usize) -> Result<Self, MipsError> {
        if k == 0 {
            return Err(MipsError::ZeroK);
        }
        let mut ids = HashSet::with_capacity(queries.rows());
        for id in &queries.ids {
            if !ids.insert(id.as_str()) {
                return Err(MipsError::DuplicateQuery(id.clone()));
            }
        }
        let accumulators = queries
            .ids
            .iter()
            .map(|q| TopKAccumulator::new(q.clone(), k))
            .collect();
        Ok(Self {
            queries,
            accumulators,
            seen_docs: HashSet::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.queries.dim
    }

    pub fn docs_seen(&self) -> usize {
        self.seen_docs.len()
    }

    pub fn add_block(&mut self, block: &EmbeddingBlock) -> Result<(), MipsError> {
        if block.dim != self.queries.dim {
            return Err(MipsError::DimMismatch {
                queries: self.queries.dim,
                block: block.dim,
            });
        }
        let mut fresh = HashSet::with_capacity(block.rows());
        for id in &block.ids {
            if self.seen_docs.contains(id) || !fresh.insert(id.as_str()) {
                return Err(MipsError::DuplicateDoc(id.clone()));
            }
        }
        self.seen_docs.extend(block.ids.iter().cloned());
        let queries = &self.queries;
        self.accumulators
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, acc)| {
                let q = queries.row(i);
                for (j, doc_id) in block.ids.iter().enumerate() {
                    acc.push(dot(q, block.row(j)), doc_id);
                }
            });
        Ok(())
    }

    pub fn finish(self) -> RunMap {
        self.accumulators
            .into_iter()
            .map(|acc| (acc.query_id.clone(), acc.into_ranking()))
            .collect()
    }
}

/// Top-`k` documents per query under (score desc, doc id asc).
pub fn retrieve_topk<I>(queries: &EmbeddingBlock, blocks: I, k: usize) -> Result<RunMap, MipsError>
where
    I: IntoIterator,
    I::Item: std::borrow::Borrow<EmbeddingBlock>,
{
    let mut retriever = TopKRetriever::new(queries.clone(), k)?;
    for block in blocks {
        retriever.add_block(std::borrow::Borrow::borrow(&block))?;
    }
    Ok(retriever.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn block(ids: &[&str], rows: &[&[f32]]) -> EmbeddingBlock {
        let dim = rows[0].len();
        EmbeddingBlock::new(
            ids.iter().map(|s| s.to_string()).collect(),
            rows.iter().flat_map(|r| r.iter().copied()).collect(),
            dim,
        )
    }

    fn ids_of(r: &Ranking) -> Vec<&str> {
        r.top(usize::MAX).collect()
    }

    #[test]
    fn orthogonal_and_hand_dot() {
        let q = block(&["q"], &[&[1.0, 0.0]]);
        let d = block(&["d"], &[&[0.0, 1.0]]);
        assert_eq!(score_block(&q, &d).unwrap(), vec![0.0]);
        let q = block(&["q"], &[&[1.0, 2.0]]);
        let d = block(&["d"], &[&[3.0, 4.0]]);
        assert_eq!(score_block(&q, &d).unwrap(), vec![11.0]);
    }

    #[test]
    fn dim_mismatch() {
        let q = block(&["q"], &[&[1.0, 0.0]]);
        let d = block(&["d"], &[&[0.0, 1.0, 2.0]]);
        assert!(matches!(score_block(&q, &d), Err(MipsError::DimMismatch { .. })));
    }

    #[test]
    fn constructed_scores_topk() {
        let q = block(&["q1"], &[&[1.0, 0.0]]);
        let docs = block(&["dA", "dB", "dC"], &[&[3.0, 1.0], &[5.0, -2.0], &[4.0, 0.0]]);
        let run = retrieve_topk(&q, [&docs], 2).unwrap();
        let r = &run["q1"];
        assert_eq!(ids_of(r), vec!["dB", "dC"]);
        assert_eq!(r.entries()[0].score, 5.0);
        assert_eq!(r.entries()[1].score, 4.0);
    }

    #[test]
    fn k_larger_than_corpus() {
        let q = block(&["q1"], &[&[1.0]]);
        let docs = block(&["a", "b", "c"], &[&[1.0], &[2.0], &[3.0]]);
        let run = retrieve_topk(&q, [&docs], 10).unwrap();
        assert_eq!(ids_of(&run["q1"]), vec!["c", "b", "a"]);
    }

    #[test]
    fn identical_vectors_tie_to_smaller_id() {
        let q = block(&["q1"], &[&[0.3, 0.7]]);
        let docs = block(&["z9", "a1", "m5"], &[&[1.0, 1.0], &[1.0, 1.0], &[0.0, 0.0]]);
        let run = retrieve_topk(&q, [&docs], 1).unwrap();
        assert_eq!(ids_of(&run["q1"]), vec!["a1"]);
        let run = retrieve_topk(&q, [&docs], 3).unwrap();
        assert_eq!(ids_of(&run["q1"]), vec!["a1", "z9", "m5"]);
    }

    #[test]
    fn duplicate_doc_across_blocks() {
        let q = block(&["q1"], &[&[1.0]]);
        let a = block(&["a"], &[&[1.0]]);
        let b = block(&["b", "a"], &[&[1.0], &[2.0]]);
        assert_eq!(
            retrieve_topk(&q, [&a, &b], 2).unwrap_err(),
            MipsError::DuplicateDoc("a".into())
        );
    }

    #[test]
    fn empty_corpus_yields_empty_rankings() {
        let q = block(&["q1", "q2"], &[&[1.0], &[2.0]]);
        let run = retrieve_topk(&q, std::iter::empty::<EmbeddingBlock>(), 5).unwrap();
        assert_eq!(run.len(), 2);
        assert!(run.values().all(|r| r.is_empty()));
    }

    #[test]
    fn random_scores_match_f64_reference() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mk = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| -> Vec<f32> {
            (0..n * 8).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
        };
        let q = EmbeddingBlock::new((0..5).map(|i| format!("q{i}")).collect(), mk(&mut rng, 5), 8);
        let d = EmbeddingBlock::new((0..7).map(|i| format!("d{i}")).collect(), mk(&mut rng, 7), 8);
        let scores = score_block(&q, &d).unwrap();
        for i in 0..5 {
            for j in 0..7 {
                let reference: f64 = q
                    .row(i)
                    .iter()
                    .zip(d.row(j))
                    .map(|(a, b)| f64::from(*a) * f64::from(*b))
                    .sum();
                assert!((f64::from(scores[i * 7 + j]) - reference).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn merge_is_order_independent() {
        let mut a = TopKAccumulator::new("q", 3);
        let mut b = TopKAccumulator::new("q", 3);
        for (s, id) in [(1.0, "a"), (5.0, "b"), (3.0, "c")] {
            a.push(s, id);
        }
        for (s, id) in [(4.0, "d"), (5.0, "a0"), (0.5, "e")] {
            b.push(s, id);
        }
        let mut ab = a.clone();
        ab.merge(b.clone());
        let mut ba = b;
        ba.merge(a);
        let (ab, ba) = (ab.into_ranking(), ba.into_ranking());
        assert_eq!(ab, ba);
        assert_eq!(ids_of(&ab), vec!["a0", "b", "d"]);
    }

    proptest! {
        #[test]
        fn topk_is_prefix_of_topk_plus_one(
            scores in proptest::collection::vec(-4i8..4, 1..40),
            k in 1usize..20,
        ) {
            // Small integer scores force plenty of ties.
            let q = EmbeddingBlock::new(vec!["q".into()], vec![1.0], 1);
            let docs = EmbeddingBlock::new(
                (0..scores.len()).map(|i| format!("d{i:03}")).collect(),
                scores.iter().map(|&s| f32::from(s)).collect(),
                1,
            );
            let small = retrieve_topk(&q, [&docs], k).unwrap();
            let large = retrieve_topk(&q, [&docs], k + 1).unwrap();
            let small = small["q"].entries().to_vec();
            let large = large["q"].entries().to_vec();
            prop_assert_eq!(small.len(), k.min(scores.len()));
            prop_assert_eq!(&large[..small.len()], &small[..]);
        }

        #[test]
        fn block_partition_does_not_matter(
            scores in proptest::collection::vec(-3i8..3, 1..30),
            cut in 0usize..30,
            k in 1usize..10,
        ) {
            let q = EmbeddingBlock::new(vec!["q".into()], vec![0.5], 1);
            let ids: Vec<String> = (0..scores.len()).map(|i| format!("d{i}")).collect();
            let vals: Vec<f32> = scores.iter().map(|&s| f32::from(s)).collect();
            let cut = cut.min(scores.len());
            let whole = EmbeddingBlock::new(ids.clone(), vals.clone(), 1);
            let left = EmbeddingBlock::new(ids[..cut].to_vec(), vals[..cut].to_vec(), 1);
            let right = EmbeddingBlock::new(ids[cut..].to_vec(), vals[cut..].to_vec(), 1);
            let a = retrieve_topk(&q, [&whole], k).unwrap();
            let b = retrieve_topk(&q, [&right, &left], k).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
