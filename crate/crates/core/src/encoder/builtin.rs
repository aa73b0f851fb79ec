//! Deterministic stand-in encoder.
//!
//! Each token id `t` maps to a pseudo-random vector `e(t)` whose component
//! `j` is `2u - 1`, with `u` the top 53 bits of
//! `splitmix64(seed ^ t*0x9E3779B97F4A7C15 ^ j*0xC2B2AE3D27D4EB4F)` scaled to
//! `[0, 1)`. A row embeds as the L2-normalized sum of `e(t)` over its unmasked
//! tokens. Arithmetic is done in f64 and rounded to f32 once at the end, so
//! the output is identical on every platform.

use crate::corpus_io::TokenBatch;

use super::{EmbeddingBlock, EncodeKind, Encoder, EncoderError};

const TOKEN_MIX: u64 = 0x9E37_79B9_7F4A_7C15;
const DIM_MIX: u64 = 0xC2B2_AE3D_27D4_EB4F;

/// One step of the splitmix64 generator applied to state `x`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Component `j` of the token vector for token id `t`.
pub fn token_component(step_seed: u64, token: i32, j: usize) -> f64 {
    let t = token as u32 as u64;
    let x = step_seed ^ t.wrapping_mul(TOKEN_MIX) ^ (j as u64).wrapping_mul(DIM_MIX);
    let u = (splitmix64(x) >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    u * 2.0 - 1.0
}

/// Embeds every row of `batch`. `kind` does not influence the result: queries
/// and passages share one embedding space.
pub fn builtin_encode(
    _kind: EncodeKind,
    batch: &TokenBatch,
    dim: usize,
    step_seed: u64,
) -> EmbeddingBlock {
    assert!(dim >= 1, "dim must be at least 1");
    let mut vectors = Vec::with_capacity(batch.rows() * dim);
    let mut acc = vec![0f64; dim];
    for row in 0..batch.rows() {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (&tok, &m) in batch.token_row(row).iter().zip(batch.mask_row(row)) {
            if m == 0 {
                continue;
            }
            for (j, a) in acc.iter_mut().enumerate() {
                *a += token_component(step_seed, tok, j);
            }
        }
        let norm = acc.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 0.0 {
            vectors.extend(acc.iter().map(|a| (a / norm) as f32));
        } else {
            vectors.extend(std::iter::repeat_n(0f32, dim));
        }
    }
    EmbeddingBlock {
        ids: batch.ids.clone(),
        vectors,
        dim,
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seed used for a checkpoint: its step number when the name carries one,
/// otherwise a hash of the name.
pub fn checkpoint_seed(name: &str) -> u64 {
    crate::orchestrator::parse_step(name).unwrap_or_else(|| fnv1a64(name.as_bytes()))
}

/// In-process encoder backed by [`builtin_encode`].
#[derive(Debug, Clone)]
pub struct BuiltinEncoder {
    dim: usize,
    seed: u64,
}

impl BuiltinEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim >= 1, "dim must be at least 1");
        Self { dim, seed }
    }
}

impl Encoder for BuiltinEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&mut self, kind: EncodeKind, batch: &TokenBatch) -> Result<EmbeddingBlock, EncoderError> {
        Ok(builtin_encode(kind, batch, self.dim, self.seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus_io::{build_batch, TokenizedText};

    // Reference splitmix64 written as the usual stateful generator.
    struct SplitMix {
        state: u64,
    }

    impl SplitMix {
        fn next(&mut self) -> u64 {
            self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
            let mut z = self.state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
            z ^ (z >> 31)
        }
    }

    fn oracle_embed(tokens: &[i32], dim: usize, seed: u64) -> Vec<f32> {
        let mut v = vec![0f64; dim];
        for &t in tokens {
            for (j, vj) in v.iter_mut().enumerate() {
                let x = seed
                    ^ (t as u64).wrapping_mul(0x9E3779B97F4A7C15)
                    ^ (j as u64).wrapping_mul(0xC2B2AE3D27D4EB4F);
                let mut g = SplitMix { state: x };
                let u = (g.next() >> 11) as f64 / 9007199254740992.0;
                *vj += 2.0 * u - 1.0;
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| if n > 0.0 { (x / n) as f32 } else { 0.0 }).collect()
    }

    #[test]
    fn splitmix_known_values() {
        // First outputs of the reference generator seeded with 0.
        let mut g = SplitMix { state: 0 };
        assert_eq!(g.next(), 0xe220a8397b1dcdaf);
        assert_eq!(splitmix64(0), 0xe220a8397b1dcdaf);
        assert_eq!(splitmix64(0x9e3779b97f4a7c15), g.next());
    }

    #[test]
    fn matches_reference_chain() {
        let texts = vec![
            TokenizedText::new("a", vec![101, 2054, 2003, 102]),
            TokenizedText::new("b", vec![7, 7, 9]),
        ];
        let batch = build_batch(&texts, 6, 0);
        let block = builtin_encode(EncodeKind::Passage, &batch, 16, 42);
        for (i, t) in texts.iter().enumerate() {
            assert_eq!(block.row(i), oracle_embed(&t.tokens, 16, 42).as_slice());
        }
    }

    #[test]
    fn all_pad_row_is_zero() {
        let batch = build_batch(&[TokenizedText::new("a", vec![])], 4, 0);
        let block = builtin_encode(EncodeKind::Query, &batch, 8, 1);
        assert!(block.row(0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn pad_tokens_do_not_contribute() {
        let short = build_batch(&[TokenizedText::new("a", vec![3, 4])], 2, 0);
        let padded = build_batch(&[TokenizedText::new("a", vec![3, 4])], 8, 0);
        let a = builtin_encode(EncodeKind::Query, &short, 8, 5);
        let b = builtin_encode(EncodeKind::Query, &padded, 8, 5);
        assert_eq!(a.vectors, b.vectors);
    }

    #[test]
    fn identical_rows_identical_vectors() {
        let t = TokenizedText::new("x", vec![11, 12, 13]);
        let u = TokenizedText::new("y", vec![11, 12, 13]);
        let block = builtin_encode(EncodeKind::Passage, &build_batch([&t, &u], 4, 0), 32, 9);
        assert_eq!(block.row(0), block.row(1));
        let norm: f32 = block.row(0).iter().map(|x| x * x).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn seeds_change_vectors() {
        let t = TokenizedText::new("x", vec![2054, 2003, 1996]);
        let batch = build_batch([&t], 4, 0);
        let a = builtin_encode(EncodeKind::Passage, &batch, 32, 1);
        let b = builtin_encode(EncodeKind::Passage, &batch, 32, 2);
        assert_ne!(a.vectors, b.vectors);
        let oa = oracle_embed(&t.tokens, 32, 1);
        let ob = oracle_embed(&t.tokens, 32, 2);
        let cos: f64 = oa.iter().zip(&ob).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
        let got: f64 = a.row(0).iter().zip(b.row(0)).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
        assert!((cos - got).abs() < 1e-12);
        assert!(cos < 0.99, "unrelated seeds should give dissimilar vectors, cos={cos}");
    }

    #[test]
    fn checkpoint_seed_prefers_step() {
        assert_eq!(checkpoint_seed("checkpoint-10000"), 10000);
        assert_eq!(checkpoint_seed("final"), fnv1a64(b"final"));
    }
}
