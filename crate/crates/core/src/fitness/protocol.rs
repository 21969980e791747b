//! Newline-delimited JSON messages exchanged with a training worker over
//! its standard input/output. One message per line, `type` tag first.
//!
//! Session: engine `hello` -> worker `hello`, then any number of
//! `evaluate` -> `result` exchanges, then `shutdown`. Full field reference
//! lives in `docs/protocol.md`.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use super::surrogate::surrogate_sdr;
use super::Split;
use crate::message::ArchitectureMessage;

pub const PROTOCOL_NAME: &str = "emrp-fitness";
pub const PROTOCOL_VERSION: u32 = 1;

/// Partial-training iterations per request unless configured otherwise.
pub const DEFAULT_TRAIN_ITERATIONS: u32 = 1500;
pub const DEFAULT_BATCH_SIZE: u32 = 2;

/// Which separated sources the fitness SDR averages over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SdrSources {
    /// Mean of the vocal and accompaniment SDRs.
    #[default]
    Both,
    Vocal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessRequest {
    /// Unique per request on a connection; echoed in the result.
    pub request_id: u64,
    /// Engine-side individual id. A validation request carries the same
    /// id as the test request that scored the individual.
    pub eval_id: u64,
    pub architecture: ArchitectureMessage,
    pub train_iterations: u32,
    pub batch_size: u32,
    pub split: Split,
    pub rng_seed: u64,
    #[serde(default)]
    pub sdr_sources: SdrSources,
    /// `eval_id` whose trained weights the worker may reuse instead of
    /// retraining (set for validation scoring). A hint only: workers
    /// without those weights train from scratch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reuse_from: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResultStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessResult {
    pub request_id: u64,
    pub status: ResultStatus,
    /// Mean SDR in dB over the split's clips and the requested sources.
    #[serde(default)]
    pub mean_sdr_db: Option<f64>,
    #[serde(default)]
    pub diagnostics: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EngineMessage {
    Hello { protocol: String, version: u32 },
    Evaluate(FitnessRequest),
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WorkerMessage {
    Hello {
        protocol: String,
        version: u32,
        worker: String,
        #[serde(default)]
        echo: bool,
    },
    Result(FitnessResult),
    /// Reply to a line the worker could not interpret.
    Error {
        message: String,
    },
}

impl EngineMessage {
    pub fn hello() -> Self {
        EngineMessage::Hello {
            protocol: PROTOCOL_NAME.to_string(),
            version: PROTOCOL_VERSION,
        }
    }
}

pub fn encode_line<T: Serialize>(msg: &T) -> String {
    serde_json::to_string(msg).expect("protocol messages serialize")
}

/// Worker side of the protocol that answers every request with the
/// surrogate score. Used for protocol conformance checks.
#[derive(Debug, Default)]
pub struct EchoWorker {
    greeted: bool,
}

impl EchoWorker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Handles one input line; `None` means the session is over.
    pub fn handle(&mut self, line: &str) -> Option<String> {
        let msg: EngineMessage = match serde_json::from_str(line) {
            Ok(m) => m,
            Err(e) => {
                return Some(encode_line(&WorkerMessage::Error {
                    message: format!("malformed line: {e}"),
                }))
            }
        };
        let reply = match msg {
            EngineMessage::Hello { protocol, version } => {
                if protocol != PROTOCOL_NAME || version != PROTOCOL_VERSION {
                    WorkerMessage::Error {
                        message: format!("unsupported protocol {protocol} v{version}"),
                    }
                } else {
                    self.greeted = true;
                    WorkerMessage::Hello {
                        protocol,
                        version,
                        worker: "emrp-echo".to_string(),
                        echo: true,
                    }
                }
            }
            EngineMessage::Evaluate(req) if !self.greeted => WorkerMessage::Result(FitnessResult {
                request_id: req.request_id,
                status: ResultStatus::Error,
                mean_sdr_db: None,
                diagnostics: "handshake required".to_string(),
            }),
            EngineMessage::Evaluate(req) => WorkerMessage::Result(FitnessResult {
                request_id: req.request_id,
                status: ResultStatus::Ok,
                mean_sdr_db: Some(surrogate_sdr(&req.architecture.architecture)),
                diagnostics: format!(
                    "echo: surrogate score, {} iterations x batch {} not run",
                    req.train_iterations, req.batch_size
                ),
            }),
            EngineMessage::Shutdown => return None,
        };
        Some(encode_line(&reply))
    }
}

/// Runs `worker` over a line stream until shutdown or end of input.
pub fn serve<R: BufRead, W: Write>(
    reader: R,
    mut writer: W,
    worker: &mut EchoWorker,
) -> io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match worker.handle(&line) {
            Some(reply) => {
                writer.write_all(reply.as_bytes())?;
                writer.write_all(b"\n")?;
                writer.flush()?;
            }
            None => break,
        }
    }
    Ok(())
}
