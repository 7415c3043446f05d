//! Transcript capture and replay.
//!
//! A recording run appends one JSONL line per solved request, keyed by the
//! request's canonical hash; a replay run answers from that file alone, which
//! makes remote-solver analyses reproducible offline.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::llm::parse_llm_reply;
use super::{SolverBackend, SolverError, SolverRequest, SolverResponse};

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct TranscriptLine {
    request_hash: String,
    reply: String,
}

/// Answers every request from a previously recorded transcript.
#[derive(Debug)]
pub struct ReplayBackend {
    replies: BTreeMap<String, String>,
}

impl ReplayBackend {
    pub fn from_jsonl(path: &Path) -> Result<ReplayBackend, SolverError> {
        let file = File::open(path).map_err(|e| {
            SolverError::Config(format!("cannot open transcript {}: {e}", path.display()))
        })?;
        let mut replies = BTreeMap::new();
        for (number, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| {
                SolverError::Config(format!("cannot read transcript line {}: {e}", number + 1))
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TranscriptLine = serde_json::from_str(&line).map_err(|e| {
                SolverError::Config(format!("malformed transcript line {}: {e}", number + 1))
            })?;
            replies.insert(parsed.request_hash, parsed.reply);
        }
        Ok(ReplayBackend { replies })
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }
}

impl SolverBackend for ReplayBackend {
    fn solve(&self, request: &SolverRequest) -> Result<SolverResponse, SolverError> {
        let hash = request.hash();
        let reply = self.replies.get(&hash).ok_or(SolverError::MalformedReply {
            message: format!("transcript has no reply for request {hash}"),
        })?;
        parse_llm_reply(reply, &request.target_slots, request.kind)
    }

    fn name(&self) -> &'static str {
        "replay"
    }
}

/// Wraps another backend and appends every reply to a transcript file.
pub struct RecordingBackend {
    inner: Box<dyn SolverBackend>,
    sink: Mutex<File>,
}

impl RecordingBackend {
    pub fn new(inner: Box<dyn SolverBackend>, path: &Path) -> Result<RecordingBackend, SolverError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| {
                SolverError::Config(format!("cannot open transcript {}: {e}", path.display()))
            })?;
        Ok(RecordingBackend {
            inner,
            sink: Mutex::new(file),
        })
    }
}

impl SolverBackend for RecordingBackend {
    fn solve(&self, request: &SolverRequest) -> Result<SolverResponse, SolverError> {
        let response = self.inner.solve(request)?;
        let line = TranscriptLine {
            request_hash: request.hash(),
            reply: response.raw.clone(),
        };
        let mut sink = self.sink.lock().expect("transcript lock");
        let encoded = serde_json::to_string(&line).expect("transcript line serializes");
        writeln!(sink, "{encoded}").map_err(|e| SolverError::Config(format!(
            "cannot append to transcript: {e}"
        )))?;
        Ok(response)
    }

    fn name(&self) -> &'static str {
        self.inner.name()
    }
}
