//! JSON request/response transports shared by the model client and remote
//! skill agents: live HTTP, transcript replay, and recording.
//!
//! A transcript is a JSONL file, one `{"key","request","response"}` object
//! per line. `key` is the SHA-256 of the canonical request JSON, so replay
//! is a pure lookup and independent of call order.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("http request to {endpoint} failed: {message}")]
    Http { endpoint: String, message: String },
    #[error("no transcript entry for request {0}")]
    NotRecorded(String),
    #[error("transcript {path}: line {line}: {message}")]
    Transcript {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid response payload: {0}")]
    Payload(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Hex SHA-256 of the canonical JSON encoding of `value`.
pub fn content_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable value");
    hex::encode(Sha256::digest(&bytes))
}

/// How a transport was sourced; replayed responses are marked in provenance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranscriptMode {
    Live,
    Record,
    Replay,
}

pub trait JsonTransport: Send + Sync {
    fn call(&self, request: &Value) -> Result<Value, TransportError>;

    fn mode(&self) -> TranscriptMode {
        TranscriptMode::Live
    }
}

/// POSTs the request body as JSON and parses the JSON reply.
pub struct HttpTransport {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            agent,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl JsonTransport for HttpTransport {
    fn call(&self, request: &Value) -> Result<Value, TransportError> {
        let http_err = |e: ureq::Error| TransportError::Http {
            endpoint: self.endpoint.clone(),
            message: e.to_string(),
        };
        let mut resp = self.agent.post(&self.endpoint).send_json(request).map_err(http_err)?;
        resp.body_mut().read_json::<Value>().map_err(http_err)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub key: String,
    pub request: Value,
    pub response: Value,
}

impl TranscriptEntry {
    pub fn new(request: Value, response: Value) -> Self {
        Self {
            key: content_hash(&request),
            request,
            response,
        }
    }
}

/// Read every entry of a transcript file.
pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptEntry>, TransportError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: TranscriptEntry =
            serde_json::from_str(&line).map_err(|e| TransportError::Transcript {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        out.push(entry);
    }
    Ok(out)
}

/// Answers requests from a recorded transcript.
#[derive(Debug, Default, Clone)]
pub struct ReplayTransport {
    entries: HashMap<String, Value>,
}

impl ReplayTransport {
    pub fn from_entries(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        // later lines win, so a re-recorded exchange supersedes the old one
        Self {
            entries: entries.into_iter().map(|e| (e.key, e.response)).collect(),
        }
    }

    pub fn open(path: &Path) -> Result<Self, TransportError> {
        Ok(Self::from_entries(read_transcript(path)?))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl JsonTransport for ReplayTransport {
    fn call(&self, request: &Value) -> Result<Value, TransportError> {
        let key = content_hash(request);
        self.entries
            .get(&key)
            .cloned()
            .ok_or(TransportError::NotRecorded(key))
    }

    fn mode(&self) -> TranscriptMode {
        TranscriptMode::Replay
    }
}

/// Forwards to an inner transport and appends each successful exchange to a
/// transcript file.
pub struct RecordingTransport<T> {
    inner: T,
    sink: Mutex<File>,
}

impl<T: JsonTransport> RecordingTransport<T> {
    pub fn new(inner: T, path: &Path) -> Result<Self, TransportError> {
        let sink = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            inner,
            sink: Mutex::new(sink),
        })
    }
}

impl<T: JsonTransport> JsonTransport for RecordingTransport<T> {
    fn call(&self, request: &Value) -> Result<Value, TransportError> {
        let response = self.inner.call(request)?;
        let entry = TranscriptEntry::new(request.clone(), response.clone());
        let mut line = serde_json::to_string(&entry).expect("serializable entry");
        line.push('\n');
        let mut sink = self.sink.lock().expect("transcript sink poisoned");
        sink.write_all(line.as_bytes())?;
        sink.flush()?;
        Ok(response)
    }

    fn mode(&self) -> TranscriptMode {
        TranscriptMode::Record
    }
}

/// Build a transport for an endpoint according to the transcript mode.
pub fn open_transport(
    mode: TranscriptMode,
    endpoint: Option<&str>,
    transcript: Option<&Path>,
    timeout: Duration,
) -> Result<Box<dyn JsonTransport>, TransportError> {
    let missing = |what: &str| TransportError::Payload(format!("{what} required for {mode:?} mode"));
    match mode {
        TranscriptMode::Replay => {
            let path = transcript.ok_or_else(|| missing("transcript path"))?;
            Ok(Box::new(ReplayTransport::open(path)?))
        }
        TranscriptMode::Live => {
            let ep = endpoint.ok_or_else(|| missing("endpoint"))?;
            Ok(Box::new(HttpTransport::new(ep, timeout)))
        }
        TranscriptMode::Record => {
            let ep = endpoint.ok_or_else(|| missing("endpoint"))?;
            let path = transcript.ok_or_else(|| missing("transcript path"))?;
            Ok(Box::new(RecordingTransport::new(HttpTransport::new(ep, timeout), path)?))
        }
    }
}
