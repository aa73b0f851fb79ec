mod common;

use std::time::{Duration, Instant};

use ckptval::corpus_io::{build_batch, TokenizedText};
use ckptval::encoder::{
    builtin_encode, checkpoint_seed, open_session, EncodeKind, Encoder, EncoderError,
    SessionConfig, SessionState,
};

use common::mock_cmd;

fn cfg() -> SessionConfig {
    SessionConfig::new(4, 6)
}

fn texts() -> Vec<TokenizedText> {
    vec![
        TokenizedText::new("a", vec![101, 7, 8, 102]),
        TokenizedText::new("b", vec![101, 9]),
        TokenizedText::new("c", vec![]),
        TokenizedText::new("d", vec![5, 5, 5, 5, 5, 5, 5, 5]),
    ]
}

#[test]
fn handshake_reports_dim() {
    let s = open_session(&mock_cmd(""), "/ckpts/checkpoint-1", &cfg()).unwrap();
    assert_eq!(s.dim(), 64);
    assert_eq!(s.state(), SessionState::Ready);
    let s = open_session(&mock_cmd("--dim 5"), "/ckpts/checkpoint-1", &cfg()).unwrap();
    assert_eq!(s.dim(), 5);
}

#[test]
fn plugin_error_at_handshake() {
    let err = open_session(&mock_cmd("--error-on bad"), "/ckpts/bad-3", &cfg()).unwrap_err();
    match &err {
        EncoderError::Handshake(m) => assert!(m.starts_with("bad ckpt"), "{m}"),
        other => panic!("unexpected {other:?}"),
    }
    // Plugin stderr is attached to the diagnostic.
    assert!(err.to_string().contains("refusing checkpoint"), "{err}");
}

#[test]
fn silent_plugin_times_out() {
    let mut c = cfg();
    c.handshake_timeout = Duration::from_millis(300);
    let started = Instant::now();
    let err = open_session(&mock_cmd("--hang"), "/ckpts/c-1", &c).unwrap_err();
    assert!(matches!(err, EncoderError::Handshake(ref m) if m.contains("timeout")), "{err}");
    assert!(started.elapsed() < Duration::from_secs(5));
}

#[test]
fn non_f32_dtype_is_rejected() {
    let err = open_session(&mock_cmd("--dtype f16"), "/ckpts/c-1", &cfg()).unwrap_err();
    assert!(matches!(err, EncoderError::Handshake(ref m) if m.contains("f16")), "{err}");
}

#[test]
fn spawn_failure() {
    let err = open_session("/nonexistent/encoder-binary", "/ckpts/c-1", &cfg()).unwrap_err();
    assert!(matches!(err, EncoderError::Spawn(_)), "{err}");
}

#[test]
fn plugin_vectors_equal_builtin() {
    let ckpt = "/ckpts/checkpoint-700";
    let mut s = open_session(&mock_cmd("--dim 16"), ckpt, &cfg()).unwrap();
    let batch = build_batch(&texts(), 6, 0);
    let got = s.encode(EncodeKind::Passage, &batch).unwrap();
    let want = builtin_encode(EncodeKind::Passage, &batch, 16, checkpoint_seed("checkpoint-700"));
    assert_eq!(got.ids, want.ids);
    assert_eq!(
        got.vectors.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        want.vectors.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    s.close().unwrap();
    assert_eq!(s.state(), SessionState::Closed);
}

#[test]
fn repeated_request_is_deterministic() {
    let mut s = open_session(&mock_cmd("--dim 8"), "/ckpts/c-9", &cfg()).unwrap();
    let batch = build_batch(&texts(), 4, 0);
    let a = s.encode(EncodeKind::Query, &batch).unwrap();
    let b = s.encode(EncodeKind::Query, &batch).unwrap();
    assert_eq!(a, b);
}

#[test]
fn batch_size_invariance() {
    let mut s = open_session(&mock_cmd("--dim 8"), "/ckpts/c-2", &cfg()).unwrap();
    let all = texts();
    let whole = s.encode(EncodeKind::Passage, &build_batch(&all, 6, 0)).unwrap();
    let mut parts = s.encode(EncodeKind::Passage, &build_batch(&all[..1], 6, 0)).unwrap();
    parts.extend(s.encode(EncodeKind::Passage, &build_batch(&all[1..], 6, 0)).unwrap());
    assert_eq!(whole, parts);
}

#[test]
fn order_equivariance() {
    let mut s = open_session(&mock_cmd("--dim 8"), "/ckpts/c-2", &cfg()).unwrap();
    let all = texts();
    let perm = [2usize, 0, 3, 1];
    let shuffled: Vec<TokenizedText> = perm.iter().map(|&i| all[i].clone()).collect();
    let base = s.encode(EncodeKind::Passage, &build_batch(&all, 6, 0)).unwrap();
    let moved = s.encode(EncodeKind::Passage, &build_batch(&shuffled, 6, 0)).unwrap();
    for (row, &src) in perm.iter().enumerate() {
        assert_eq!(moved.ids[row], base.ids[src]);
        assert_eq!(moved.row(row), base.row(src));
    }
}

#[test]
fn empty_batch_skips_the_wire() {
    // The plugin would exit on its first encode request; an empty batch never reaches it.
    let mut s = open_session(&mock_cmd("--exit-on-request 1"), "/ckpts/c-1", &cfg()).unwrap();
    let block = s.encode(EncodeKind::Query, &build_batch(&[], 4, 0)).unwrap();
    assert_eq!(block.rows(), 0);
    assert_eq!(block.dim, 64);
    assert_eq!(s.state(), SessionState::Ready);
}

#[test]
fn large_batch() {
    let mut s = open_session(&mock_cmd("--dim 4"), "/ckpts/c-1", &cfg()).unwrap();
    let many: Vec<TokenizedText> = (0..5000)
        .map(|i| TokenizedText::new(format!("t{i}"), vec![i, i + 1, i + 2]))
        .collect();
    let block = s.encode(EncodeKind::Passage, &build_batch(&many, 6, 0)).unwrap();
    assert_eq!(block.rows(), 5000);
    assert_eq!(block.vectors.len(), 5000 * 4);
}

#[test]
fn wrong_batch_length_is_rejected_locally() {
    let mut s = open_session(&mock_cmd(""), "/ckpts/c-1", &cfg()).unwrap();
    let err = s.encode(EncodeKind::Query, &build_batch(&texts(), 6, 0)).unwrap_err();
    assert!(matches!(err, EncoderError::BatchLength { expected: 4, got: 6, .. }), "{err}");
    assert_eq!(s.state(), SessionState::Ready);
}

#[test]
fn wrong_count_in_reply_is_a_protocol_error() {
    let mut s = open_session(&mock_cmd("--bad-count"), "/ckpts/c-1", &cfg()).unwrap();
    let err = s.encode(EncodeKind::Query, &build_batch(&texts()[..2], 4, 0)).unwrap_err();
    assert!(matches!(err, EncoderError::Protocol(_)), "{err}");
    assert_eq!(s.state(), SessionState::Failed);
    let again = s.encode(EncodeKind::Query, &build_batch(&texts()[..2], 4, 0)).unwrap_err();
    assert!(matches!(again, EncoderError::NotReady(SessionState::Failed)));
}

#[test]
fn nan_in_reply_fails_the_session() {
    let mut s = open_session(&mock_cmd("--nan"), "/ckpts/c-1", &cfg()).unwrap();
    let err = s.encode(EncodeKind::Query, &build_batch(&texts(), 4, 0)).unwrap_err();
    assert!(matches!(err, EncoderError::NonFinite { row: 0, component: 0 }), "{err}");
    assert_eq!(s.state(), SessionState::Failed);
}

#[test]
fn plugin_dying_mid_session() {
    let mut s = open_session(&mock_cmd("--exit-on-request 2"), "/ckpts/c-1", &cfg()).unwrap();
    let batch = build_batch(&texts(), 4, 0);
    s.encode(EncodeKind::Query, &batch).unwrap();
    let err = s.encode(EncodeKind::Query, &batch).unwrap_err();
    assert!(
        matches!(err, EncoderError::Exited(_) | EncoderError::Protocol(_)),
        "{err}"
    );
    assert_eq!(s.state(), SessionState::Failed);
}

#[test]
fn request_timeout() {
    let mut c = cfg();
    c.request_timeout = Some(Duration::from_millis(200));
    let mut s = open_session(&mock_cmd("--encode-delay-ms 3000"), "/ckpts/c-1", &c).unwrap();
    let started = Instant::now();
    let err = s.encode(EncodeKind::Query, &build_batch(&texts(), 4, 0)).unwrap_err();
    assert!(matches!(err, EncoderError::Timeout(_)), "{err}");
    assert!(started.elapsed() < Duration::from_secs(2));
    assert_eq!(s.state(), SessionState::Failed);
}

#[test]
fn close_then_encode() {
    let mut s = open_session(&mock_cmd(""), "/ckpts/c-1", &cfg()).unwrap();
    s.close().unwrap();
    let err = s.encode(EncodeKind::Query, &build_batch(&texts(), 4, 0)).unwrap_err();
    assert!(matches!(err, EncoderError::NotReady(SessionState::Closed)));
}

#[test]
fn dropping_a_session_reaps_the_plugin() {
    let s = open_session(&mock_cmd("--encode-delay-ms 60000"), "/ckpts/c-1", &cfg()).unwrap();
    let started = Instant::now();
    drop(s);
    assert!(started.elapsed() < Duration::from_secs(3));
}
