//! Wire protocol v1 between the harness and an encoder plugin.
//!
//! Every message is a single-line UTF-8 JSON header terminated by `\n`,
//! optionally followed by a raw little-endian binary block whose size is
//! implied by the header:
//!
//! * `encode` is followed by `count*len` i32 token ids, then `count*len` mask bytes.
//! * `vectors` is followed by `count*dim` f32 values.

use std::io::{self, BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use super::EncodeKind;

pub const PROTOCOL_VERSION: u32 = 1;

/// Upper bound on rows per message; larger headers are treated as corrupt.
pub const MAX_ROWS: usize = 1 << 20;
/// Upper bound on vector dimensionality.
pub const MAX_DIM: usize = 1 << 16;
/// Upper bound on a header line, in bytes.
const MAX_HEADER_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Message {
    Init {
        protocol: u32,
        ckpt: String,
        q_max_len: usize,
        p_max_len: usize,
    },
    Ready {
        dim: usize,
        dtype: String,
    },
    Encode {
        kind: EncodeKind,
        count: usize,
        len: usize,
    },
    Vectors {
        count: usize,
        dim: usize,
    },
    Error {
        message: String,
    },
    Close,
}

/// Writes a header line and its optional payload, then flushes.
pub fn write_message<W: Write>(out: &mut W, msg: &Message, payload: &[u8]) -> io::Result<()> {
    let mut line = serde_json::to_vec(msg).map_err(io::Error::other)?;
    line.push(b'\n');
    out.write_all(&line)?;
    if !payload.is_empty() {
        out.write_all(payload)?;
    }
    out.flush()
}

#[derive(Debug)]
pub enum ReadError {
    Io(io::Error),
    Malformed(String),
}

impl std::fmt::Display for ReadError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReadError::Io(e) => write!(f, "{e}"),
            ReadError::Malformed(m) => write!(f, "malformed header: {m}"),
        }
    }
}

/// Reads one header line. `Ok(None)` on clean end of stream.
pub fn read_header<R: BufRead>(input: &mut R) -> Result<Option<Message>, ReadError> {
    let mut line = Vec::new();
    let n = input
        .take(MAX_HEADER_BYTES as u64 + 1)
        .read_until(b'\n', &mut line)
        .map_err(ReadError::Io)?;
    if n == 0 {
        return Ok(None);
    }
    if line.last() != Some(&b'\n') {
        return Err(if line.len() > MAX_HEADER_BYTES {
            ReadError::Malformed("header line too long".into())
        } else {
            ReadError::Io(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                "stream ended inside a header line",
            ))
        });
    }
    let text = std::str::from_utf8(&line)
        .map_err(|e| ReadError::Malformed(e.to_string()))?
        .trim();
    serde_json::from_str(text)
        .map(Some)
        .map_err(|e| ReadError::Malformed(format!("{e}: {text}")))
}

pub fn read_exact_vec<R: Read>(input: &mut R, len: usize) -> io::Result<Vec<u8>> {
    let mut buf = vec![0u8; len];
    input.read_exact(&mut buf)?;
    Ok(buf)
}

/// Token ids then mask bytes, row-major.
pub fn encode_payload(tokens: &[i32], mask: &[u8]) -> Vec<u8> {
    debug_assert_eq!(tokens.len(), mask.len());
    let mut out = Vec::with_capacity(tokens.len() * 5);
    for t in tokens {
        out.extend_from_slice(&t.to_le_bytes());
    }
    out.extend_from_slice(mask);
    out
}

pub fn encode_payload_len(count: usize, len: usize) -> usize {
    count * len * 5
}

/// Splits an `encode` payload back into token ids and mask.
pub fn decode_encode_payload(bytes: &[u8], cells: usize) -> (Vec<i32>, Vec<u8>) {
    let (ids, mask) = bytes.split_at(cells * 4);
    let tokens = ids
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    (tokens, mask.to_vec())
}

pub fn vectors_payload(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_vectors(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}
