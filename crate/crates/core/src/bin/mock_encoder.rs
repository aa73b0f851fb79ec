//! Encoder plugin speaking protocol v1 with the built-in deterministic
//! embeddings. Used as a conformance and fault-injection fixture.

use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;
use std::thread;
use std::time::Duration;

use clap::Parser;

use ckptval::corpus_io::TokenBatch;
use ckptval::encoder::protocol::{
    decode_encode_payload, encode_payload_len, read_exact_vec, read_header, vectors_payload,
    write_message, Message, ReadError, MAX_ROWS,
};
use ckptval::encoder::{builtin_encode, checkpoint_seed};

#[derive(Parser)]
#[command(name = "ckptval-mock-encoder")]
struct Opts {
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Seed for every checkpoint; by default derived from the checkpoint name.
    #[arg(long)]
    seed: Option<u64>,
    /// Sleep before answering init.
    #[arg(long, default_value_t = 0)]
    delay_ms: u64,
    /// Sleep before answering each encode request.
    #[arg(long, default_value_t = 0)]
    encode_delay_ms: u64,
    /// Reply with an error to init when the checkpoint path contains this.
    #[arg(long)]
    error_on: Option<String>,
    /// Never answer init.
    #[arg(long)]
    hang: bool,
    /// Announce one more row than requested.
    #[arg(long)]
    bad_count: bool,
    /// Put a NaN in the first component of every reply.
    #[arg(long)]
    nan: bool,
    /// dtype announced at handshake.
    #[arg(long, default_value = "f32")]
    dtype: String,
    /// Exit without replying on this encode request (1-based).
    #[arg(long)]
    exit_on_request: Option<usize>,
}

fn reply<W: Write>(out: &mut W, msg: &Message, payload: &[u8]) -> io::Result<()> {
    write_message(out, msg, payload)
}

fn serve(opts: &Opts) -> io::Result<ExitCode> {
    let stdin = io::stdin();
    let mut input = BufReader::new(stdin.lock());
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());

    let ckpt = match read_header(&mut input) {
        Ok(Some(Message::Init { ckpt, .. })) => ckpt,
        Ok(Some(other)) => {
            eprintln!("expected init, got {other:?}");
            reply(&mut out, &Message::Error { message: "expected init".into() }, &[])?;
            return Ok(ExitCode::from(2));
        }
        Ok(None) => return Ok(ExitCode::SUCCESS),
        Err(e) => {
            reply(&mut out, &Message::Error { message: e.to_string() }, &[])?;
            return Ok(ExitCode::from(2));
        }
    };
    if opts.hang {
        loop {
            thread::sleep(Duration::from_secs(3600));
        }
    }
    thread::sleep(Duration::from_millis(opts.delay_ms));
    if let Some(pattern) = &opts.error_on {
        if ckpt.contains(pattern.as_str()) {
            eprintln!("refusing checkpoint {ckpt}");
            reply(&mut out, &Message::Error { message: "bad ckpt".into() }, &[])?;
            return Ok(ExitCode::from(1));
        }
    }
    let name = Path::new(&ckpt)
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| ckpt.clone());
    let seed = opts.seed.unwrap_or_else(|| checkpoint_seed(&name));
    reply(
        &mut out,
        &Message::Ready {
            dim: opts.dim,
            dtype: opts.dtype.clone(),
        },
        &[],
    )?;

    let mut requests = 0usize;
    loop {
        let header = match read_header(&mut input) {
            Ok(Some(h)) => h,
            Ok(None) => return Ok(ExitCode::SUCCESS),
            Err(ReadError::Io(e)) => return Err(e),
            Err(e @ ReadError::Malformed(_)) => {
                reply(&mut out, &Message::Error { message: e.to_string() }, &[])?;
                return Ok(ExitCode::from(2));
            }
        };
        match header {
            Message::Encode { kind, count, len } => {
                requests += 1;
                if count > MAX_ROWS || len == 0 {
                    let message = format!("unsupported batch shape {count}x{len}");
                    reply(&mut out, &Message::Error { message }, &[])?;
                    return Ok(ExitCode::from(2));
                }
                let bytes = read_exact_vec(&mut input, encode_payload_len(count, len))?;
                if opts.exit_on_request == Some(requests) {
                    return Ok(ExitCode::from(3));
                }
                let (tokens, mask) = decode_encode_payload(&bytes, count * len);
                let batch = TokenBatch {
                    ids: (0..count).map(|i| i.to_string()).collect(),
                    tokens,
                    mask,
                    max_len: len,
                };
                let mut block = builtin_encode(kind, &batch, opts.dim, seed);
                if opts.nan && !block.vectors.is_empty() {
                    block.vectors[0] = f32::NAN;
                }
                thread::sleep(Duration::from_millis(opts.encode_delay_ms));
                let announced = if opts.bad_count { count + 1 } else { count };
                reply(
                    &mut out,
                    &Message::Vectors {
                        count: announced,
                        dim: opts.dim,
                    },
                    &vectors_payload(&block.vectors),
                )?;
            }
            Message::Close => return Ok(ExitCode::SUCCESS),
            other => {
                let message = format!("unexpected message {other:?}");
                reply(&mut out, &Message::Error { message }, &[])?;
                return Ok(ExitCode::from(2));
            }
        }
    }
}

fn main() -> ExitCode {
    let opts = Opts::parse();
    match serve(&opts) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("mock encoder: {e}");
            ExitCode::from(1)
        }
    }
}
