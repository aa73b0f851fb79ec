//! Fixture builders shared by the integration tests.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ckptval::corpus_io::TokenizedText;
use ckptval::orchestrator::{EncoderChoice, ValidateConfig, SENTINEL};

pub fn mock_encoder() -> &'static str {
    env!("CARGO_BIN_EXE_ckptval-mock-encoder")
}

pub fn cli_binary() -> &'static str {
    env!("CARGO_BIN_EXE_ckptval")
}

/// Mock plugin command line with extra flags.
pub fn mock_cmd(flags: &str) -> String {
    format!("{} {flags}", mock_encoder()).trim().to_string()
}

pub fn write_jsonl(path: &Path, texts: &[TokenizedText]) {
    let mut body = String::new();
    for t in texts {
        body.push_str(&t.to_json_line());
        body.push('\n');
    }
    fs::write(path, body).unwrap();
}

pub fn write_qrels(path: &Path, lines: &[(String, String, i32)]) {
    let body: String = lines
        .iter()
        .map(|(q, d, g)| format!("{q} 0 {d} {g}\n"))
        .collect();
    fs::write(path, body).unwrap();
}

/// Paths of a generated retrieval fixture.
pub struct Fixture {
    pub root: PathBuf,
    pub query_file: PathBuf,
    pub candidate_dir: PathBuf,
    pub qrel_file: PathBuf,
    pub ckpts_dir: PathBuf,
    pub logging_dir: PathBuf,
    pub output_dir: PathBuf,
    pub corpus: Vec<TokenizedText>,
    pub queries: Vec<TokenizedText>,
    /// (query, gold doc, grade)
    pub qrels: Vec<(String, String, i32)>,
}

pub type Judgments = Vec<(String, String, i32)>;

/// Random documents over a small vocabulary; each query copies a few tokens
/// of its gold document so the built-in encoder ranks it reasonably well.
pub fn random_texts(
    rng: &mut ChaCha8Rng,
    n_docs: usize,
    n_queries: usize,
) -> (Vec<TokenizedText>, Vec<TokenizedText>, Judgments) {
    let corpus: Vec<TokenizedText> = (0..n_docs)
        .map(|i| {
            let len = rng.gen_range(3..12);
            TokenizedText::new(format!("d{i}"), (0..len).map(|_| rng.gen_range(1..500)).collect())
        })
        .collect();
    let mut queries = Vec::new();
    let mut qrels = Vec::new();
    for q in 0..n_queries {
        let gold = &corpus[rng.gen_range(0..n_docs)];
        let mut tokens: Vec<i32> = gold.tokens.choose_multiple(rng, 2).copied().collect();
        tokens.push(rng.gen_range(1..500));
        queries.push(TokenizedText::new(format!("q{q}"), tokens));
        qrels.push((format!("q{q}"), gold.text_id.clone(), 1));
    }
    (corpus, queries, qrels)
}

pub fn write_fixture(root: &Path, n_docs: usize, n_queries: usize, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (corpus, queries, qrels) = random_texts(&mut rng, n_docs, n_queries);
    let candidate_dir = root.join("corpus");
    let ckpts_dir = root.join("ckpts");
    fs::create_dir_all(&candidate_dir).unwrap();
    fs::create_dir_all(&ckpts_dir).unwrap();
    // Split the corpus over two files to exercise multi-file loading.
    let half = corpus.len() / 2;
    write_jsonl(&candidate_dir.join("part-0.jsonl"), &corpus[..half]);
    write_jsonl(&candidate_dir.join("part-1.jsonl"), &corpus[half..]);
    let query_file = root.join("queries.jsonl");
    write_jsonl(&query_file, &queries);
    let qrel_file = root.join("qrels.txt");
    write_qrels(&qrel_file, &qrels);
    Fixture {
        root: root.to_path_buf(),
        query_file,
        candidate_dir,
        qrel_file,
        ckpts_dir,
        logging_dir: root.join("logs"),
        output_dir: root.join("runs"),
        corpus,
        queries,
        qrels,
    }
}

impl Fixture {
    pub fn config(&self, encoder: EncoderChoice) -> ValidateConfig {
        let mut c = ValidateConfig::new(
            vec![self.query_file.clone()],
            &self.candidate_dir,
            &self.ckpts_dir,
            &self.qrel_file,
            encoder,
        );
        c.logging_dir = self.logging_dir.clone();
        c.poll_interval = Duration::from_millis(50);
        c.quiescence = Duration::from_secs(60);
        c.q_max_len = 8;
        c.p_max_len = 16;
        c.batch_size = 7;
        c
    }
}

/// A checkpoint directory holding one file plus the readiness sentinel.
pub fn make_ready_checkpoint(ckpts_dir: &Path, name: &str) -> PathBuf {
    let dir = ckpts_dir.join(name);
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join("weights.bin"), name.as_bytes()).unwrap();
    fs::write(dir.join(SENTINEL), b"").unwrap();
    dir
}
