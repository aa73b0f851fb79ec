use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::corpus_io::TokenBatch;

use super::protocol::{self, Message, ReadError, MAX_DIM, MAX_ROWS, PROTOCOL_VERSION};
use super::{EmbeddingBlock, EncodeKind, Encoder, EncoderError};

const STDERR_TAIL_BYTES: usize = 4096;
const CLOSE_GRACE: Duration = Duration::from_secs(5);

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub q_max_len: usize,
    pub p_max_len: usize,
    pub handshake_timeout: Duration,
    /// Per-request reply timeout; `None` waits indefinitely.
    pub request_timeout: Option<Duration>,
}

impl SessionConfig {
    pub fn new(q_max_len: usize, p_max_len: usize) -> Self {
        Self {
            q_max_len,
            p_max_len,
            handshake_timeout: Duration::from_secs(120),
            request_timeout: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    Ready,
    Closed,
    Failed,
}

/// Why the reader thread stopped.
enum StreamFailure {
    /// The plugin sent something the protocol forbids.
    Violation(String),
    /// The stream ended or could not be read.
    Broken(String),
}

enum Reply {
    Header(Message),
    Vectors { count: usize, dim: usize, values: Vec<f32> },
}

/// A running encoder plugin speaking protocol v1 over stdin/stdout.
pub struct PluginSession {
    child: Child,
    stdin: Option<ChildStdin>,
    replies: Receiver<Result<Reply, StreamFailure>>,
    /// Shape (rows, dim) of the reply the reader should accept next.
    expected_shape: Arc<Mutex<Option<(usize, usize)>>>,
    reader: Option<JoinHandle<()>>,
    stderr_tail: Arc<Mutex<VecDeque<u8>>>,
    stderr_reader: Option<JoinHandle<()>>,
    dim: usize,
    state: SessionState,
    q_max_len: usize,
    p_max_len: usize,
    request_timeout: Option<Duration>,
}

/// Splits `command` shell-style and substitutes `{ckpt}` in every word.
pub fn build_command(command: &str, checkpoint_path: &str) -> Result<Vec<String>, EncoderError> {
    if command.trim().is_empty() {
        return Err(EncoderError::Spawn("empty encoder command".into()));
    }
    let words = shlex::split(command)
        .ok_or_else(|| EncoderError::Spawn(format!("cannot parse encoder command `{command}`")))?;
    if words.is_empty() {
        return Err(EncoderError::Spawn("empty encoder command".into()));
    }
    Ok(words
        .into_iter()
        .map(|w| w.replace("{ckpt}", checkpoint_path))
        .collect())
}

/// Forwards replies from the plugin. A vectors header whose shape differs from
/// the pending request is reported without reading its payload, so a lying
/// plugin cannot stall the session on a payload it never sends.
fn reader_loop<R: Read>(
    stdout: R,
    expected_shape: Arc<Mutex<Option<(usize, usize)>>>,
    tx: mpsc::Sender<Result<Reply, StreamFailure>>,
) {
    let mut input = BufReader::new(stdout);
    loop {
        let msg = match protocol::read_header(&mut input) {
            Ok(Some(msg)) => msg,
            Ok(None) => {
                let _ = tx.send(Err(StreamFailure::Broken("plugin closed its stdout".into())));
                return;
            }
            Err(ReadError::Io(e)) => {
                let _ = tx.send(Err(StreamFailure::Broken(format!("reading plugin stdout: {e}"))));
                return;
            }
            Err(e @ ReadError::Malformed(_)) => {
                let _ = tx.send(Err(StreamFailure::Violation(e.to_string())));
                return;
            }
        };
        let reply = match msg {
            Message::Vectors { count, dim } => {
                if count > MAX_ROWS || dim == 0 || dim > MAX_DIM {
                    let _ = tx.send(Err(StreamFailure::Violation(format!(
                        "implausible vectors header count={count} dim={dim}"
                    ))));
                    return;
                }
                let expected = *expected_shape.lock().unwrap_or_else(|p| p.into_inner());
                match expected {
                    Some((rows, d)) if (rows, d) != (count, dim) => {
                        let _ = tx.send(Err(StreamFailure::Violation(format!(
                            "reply announces {count}x{dim} vectors for a {rows}-row request of dim {d}"
                        ))));
                        return;
                    }
                    None => {
                        let _ = tx.send(Err(StreamFailure::Violation(
                            "vectors reply without a pending request".into(),
                        )));
                        return;
                    }
                    _ => {}
                }
                match protocol::read_exact_vec(&mut input, count * dim * 4) {
                    Ok(bytes) => Reply::Vectors {
                        count,
                        dim,
                        values: protocol::decode_vectors(&bytes),
                    },
                    Err(e) => {
                        let _ = tx.send(Err(StreamFailure::Broken(format!(
                            "short vector payload (expected {} bytes): {e}",
                            count * dim * 4
                        ))));
                        return;
                    }
                }
            }
            other => Reply::Header(other),
        };
        if tx.send(Ok(reply)).is_err() {
            return;
        }
    }
}

fn stderr_loop<R: Read>(stderr: R, tail: Arc<Mutex<VecDeque<u8>>>) {
    let mut input = BufReader::new(stderr);
    let mut line = Vec::new();
    loop {
        line.clear();
        match input.read_until(b'\n', &mut line) {
            Ok(0) | Err(_) => return,
            Ok(_) => {
                log::debug!("encoder stderr: {}", String::from_utf8_lossy(&line).trim_end());
                let mut t = tail.lock().unwrap_or_else(|p| p.into_inner());
                t.extend(line.iter().copied());
                while t.len() > STDERR_TAIL_BYTES {
                    t.pop_front();
                }
            }
        }
    }
}

/// Spawns the plugin for `checkpoint_path`, sends `init` and waits for `ready`.
pub fn open_session(
    command: &str,
    checkpoint_path: &str,
    config: &SessionConfig,
) -> Result<PluginSession, EncoderError> {
    let argv = build_command(command, checkpoint_path)?;
    let mut child = Command::new(&argv[0])
        .args(&argv[1..])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| EncoderError::Spawn(format!("{}: {e}", argv[0])))?;

    let stdin = child.stdin.take();
    let stdout = child.stdout.take().expect("piped stdout");
    let stderr = child.stderr.take().expect("piped stderr");
    let (tx, rx) = mpsc::channel();
    let expected_shape = Arc::new(Mutex::new(None));
    let shape = Arc::clone(&expected_shape);
    let reader = thread::Builder::new()
        .name("encoder-stdout".into())
        .spawn(move || reader_loop(stdout, shape, tx))
        .map_err(|e| EncoderError::Spawn(e.to_string()))?;
    let stderr_tail = Arc::new(Mutex::new(VecDeque::new()));
    let tail = Arc::clone(&stderr_tail);
    let stderr_reader = thread::Builder::new()
        .name("encoder-stderr".into())
        .spawn(move || stderr_loop(stderr, tail))
        .map_err(|e| EncoderError::Spawn(e.to_string()))?;

    let mut session = PluginSession {
        child,
        stdin,
        replies: rx,
        expected_shape,
        reader: Some(reader),
        stderr_tail,
        stderr_reader: Some(stderr_reader),
        dim: 0,
        state: SessionState::Ready,
        q_max_len: config.q_max_len,
        p_max_len: config.p_max_len,
        request_timeout: config.request_timeout,
    };
    session.handshake(checkpoint_path, config.handshake_timeout)?;
    Ok(session)
}

impl PluginSession {
    fn handshake(&mut self, checkpoint_path: &str, timeout: Duration) -> Result<(), EncoderError> {
        let init = Message::Init {
            protocol: PROTOCOL_VERSION,
            ckpt: checkpoint_path.to_string(),
            q_max_len: self.q_max_len,
            p_max_len: self.p_max_len,
        };
        if let Err(e) = self.send(&init, &[]) {
            return Err(self.fail(EncoderError::Handshake(format!("sending init: {e}"))));
        }
        let reply = match self.recv(Some(timeout)) {
            Ok(r) => r,
            Err(EncoderError::Timeout(d)) => {
                return Err(self.fail(EncoderError::Handshake(format!("timeout after {d:?}"))))
            }
            Err(e) => return Err(self.fail(EncoderError::Handshake(e.to_string()))),
        };
        match reply {
            Reply::Header(Message::Ready { dim, dtype }) => {
                if dtype != "f32" {
                    return Err(self.fail(EncoderError::Handshake(format!(
                        "unsupported dtype `{dtype}` (protocol v1 supports f32 only)"
                    ))));
                }
                if dim == 0 || dim > MAX_DIM {
                    return Err(self.fail(EncoderError::Handshake(format!("invalid dim {dim}"))));
                }
                self.dim = dim;
                Ok(())
            }
            Reply::Header(Message::Error { message }) => {
                Err(self.fail(EncoderError::Handshake(message)))
            }
            Reply::Header(other) => Err(self.fail(EncoderError::Handshake(format!(
                "expected ready, got {other:?}"
            )))),
            Reply::Vectors { .. } => Err(self.fail(EncoderError::Handshake(
                "expected ready, got vectors".into(),
            ))),
        }
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    /// Last few KiB the plugin wrote to stderr.
    pub fn stderr_tail(&self) -> String {
        let t = self.stderr_tail.lock().unwrap_or_else(|p| p.into_inner());
        let (a, b) = t.as_slices();
        let mut bytes = a.to_vec();
        bytes.extend_from_slice(b);
        String::from_utf8_lossy(&bytes).trim().to_string()
    }

    fn send(&mut self, msg: &Message, payload: &[u8]) -> std::io::Result<()> {
        match self.stdin.as_mut() {
            Some(stdin) => protocol::write_message(stdin, msg, payload),
            None => Err(std::io::Error::new(std::io::ErrorKind::BrokenPipe, "stdin closed")),
        }
    }

    fn recv(&mut self, timeout: Option<Duration>) -> Result<Reply, EncoderError> {
        let received = match timeout {
            Some(t) => self.replies.recv_timeout(t),
            None => self.replies.recv().map_err(|_| RecvTimeoutError::Disconnected),
        };
        match received {
            Ok(Ok(reply)) => Ok(reply),
            Ok(Err(StreamFailure::Violation(msg))) => Err(EncoderError::Protocol(msg)),
            Ok(Err(StreamFailure::Broken(msg))) => Err(self.exit_or_protocol(msg)),
            Err(RecvTimeoutError::Timeout) => Err(EncoderError::Timeout(timeout.unwrap_or_default())),
            Err(RecvTimeoutError::Disconnected) => {
                Err(self.exit_or_protocol("reply channel closed".into()))
            }
        }
    }

    /// Classifies a stream failure as a plugin exit when the process is gone.
    fn exit_or_protocol(&mut self, msg: String) -> EncoderError {
        let deadline = Instant::now() + Duration::from_millis(200);
        loop {
            if let Ok(Some(status)) = self.child.try_wait() {
                return EncoderError::Exited(format!("{status} ({msg})"));
            }
            if Instant::now() >= deadline {
                return EncoderError::Protocol(msg);
            }
            thread::sleep(Duration::from_millis(10));
        }
    }

    /// Marks the session failed, kills the plugin and attaches its stderr.
    fn fail(&mut self, err: EncoderError) -> EncoderError {
        self.state = SessionState::Failed;
        self.stdin = None;
        let _ = self.child.kill();
        let _ = self.child.wait();
        if let Some(h) = self.stderr_reader.take() {
            join_within(h, Duration::from_millis(500));
        }
        let tail = self.stderr_tail();
        if tail.is_empty() {
            return err;
        }
        let with = |s: String| format!("{s} [stderr: {tail}]");
        match err {
            EncoderError::Spawn(s) => EncoderError::Spawn(with(s)),
            EncoderError::Handshake(s) => EncoderError::Handshake(with(s)),
            EncoderError::Plugin(s) => EncoderError::Plugin(with(s)),
            EncoderError::Protocol(s) => EncoderError::Protocol(with(s)),
            EncoderError::Exited(s) => EncoderError::Exited(with(s)),
            other => other,
        }
    }

    fn expected_len(&self, kind: EncodeKind) -> usize {
        match kind {
            EncodeKind::Query => self.q_max_len,
            EncodeKind::Passage => self.p_max_len,
        }
    }
}

impl Encoder for PluginSession {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&mut self, kind: EncodeKind, batch: &TokenBatch) -> Result<EmbeddingBlock, EncoderError> {
        if self.state != SessionState::Ready {
            return Err(EncoderError::NotReady(self.state));
        }
        let expected = self.expected_len(kind);
        if batch.max_len != expected {
            return Err(EncoderError::BatchLength {
                kind,
                expected,
                got: batch.max_len,
            });
        }
        if batch.is_empty() {
            return Ok(EmbeddingBlock::empty(self.dim));
        }
        let count = batch.rows();
        let header = Message::Encode {
            kind,
            count,
            len: batch.max_len,
        };
        let payload = protocol::encode_payload(&batch.tokens, &batch.mask);
        *self.expected_shape.lock().unwrap_or_else(|p| p.into_inner()) = Some((count, self.dim));
        if let Err(e) = self.send(&header, &payload) {
            let err = self.exit_or_protocol(format!("sending encode request: {e}"));
            return Err(self.fail(err));
        }
        let reply = match self.recv(self.request_timeout) {
            Ok(r) => r,
            Err(e) => return Err(self.fail(e)),
        };
        match reply {
            Reply::Vectors { count: c, dim, values } => {
                if c != count {
                    return Err(self.fail(EncoderError::Protocol(format!(
                        "reply carries {c} vectors for a {count}-row request"
                    ))));
                }
                if dim != self.dim {
                    return Err(self.fail(EncoderError::Protocol(format!(
                        "reply dim {dim} differs from handshake dim {}",
                        self.dim
                    ))));
                }
                let block = EmbeddingBlock::new(batch.ids.clone(), values, dim);
                if let Some((row, component)) = block.first_non_finite() {
                    return Err(self.fail(EncoderError::NonFinite { row, component }));
                }
                Ok(block)
            }
            Reply::Header(Message::Error { message }) => Err(self.fail(EncoderError::Plugin(message))),
            Reply::Header(other) => Err(self.fail(EncoderError::Protocol(format!(
                "expected vectors, got {other:?}"
            )))),
        }
    }

    /// Sends `close` and waits briefly for a clean exit, killing the plugin otherwise.
    fn close(&mut self) -> Result<(), EncoderError> {
        if self.state != SessionState::Ready {
            return Ok(());
        }
        let sent = self.send(&Message::Close, &[]);
        self.stdin = None;
        self.state = SessionState::Closed;
        let deadline = Instant::now() + CLOSE_GRACE;
        let status = loop {
            match self.child.try_wait() {
                Ok(Some(status)) => break Some(status),
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
                _ => break None,
            }
        };
        match status {
            Some(s) if s.success() => Ok(()),
            Some(s) => {
                log::warn!("encoder plugin exited with {s} after close");
                Ok(())
            }
            None => {
                let _ = self.child.kill();
                let _ = self.child.wait();
                match sent {
                    Ok(()) => Err(EncoderError::Protocol(format!(
                        "plugin did not exit within {CLOSE_GRACE:?} of close"
                    ))),
                    Err(e) => Err(EncoderError::Exited(e.to_string())),
                }
            }
        }
    }
}

impl std::fmt::Debug for PluginSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PluginSession")
            .field("pid", &self.child.id())
            .field("dim", &self.dim)
            .field("state", &self.state)
            .finish_non_exhaustive()
    }
}

impl Drop for PluginSession {
    fn drop(&mut self) {
        self.stdin = None;
        if !matches!(self.child.try_wait(), Ok(Some(_))) {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
        if let Some(h) = self.reader.take() {
            join_within(h, Duration::from_millis(500));
        }
        if let Some(h) = self.stderr_reader.take() {
            join_within(h, Duration::from_millis(500));
        }
    }
}

/// Joins `handle` if it finishes within `limit`; otherwise leaves it detached.
fn join_within(handle: JoinHandle<()>, limit: Duration) {
    let deadline = Instant::now() + limit;
    while !handle.is_finished() {
        if Instant::now() >= deadline {
            return;
        }
        thread::sleep(Duration::from_millis(5));
    }
    let _ = handle.join();
}
