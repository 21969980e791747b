//! Client for an external training worker.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};

use super::protocol::{
    encode_line, EngineMessage, FitnessRequest, ResultStatus, SdrSources, WorkerMessage,
    DEFAULT_BATCH_SIZE, DEFAULT_TRAIN_ITERATIONS, PROTOCOL_NAME, PROTOCOL_VERSION,
};
use super::{Capabilities, EvalError, EvalJob, Evaluator};
use crate::message::ArchitectureMessage;

/// A bidirectional line channel to one worker.
pub trait Transport: Send {
    fn send(&mut self, line: &str) -> Result<(), EvalError>;
    /// Next line from the worker; `EvalError::Timeout` uses request id 0 and
    /// is re-labelled by the caller.
    fn recv(&mut self, timeout: Duration) -> Result<String, EvalError>;
}

/// Opens fresh worker connections (initially and after a failure).
pub trait Connector: Send + Sync {
    fn connect(&self) -> Result<Box<dyn Transport>, EvalError>;
    fn describe(&self) -> String;
}

/// Worker launched as a child process speaking over stdin/stdout.
pub struct ChildTransport {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl ChildTransport {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, EvalError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let end = line.is_err();
                if tx.send(line).is_err() || end {
                    break;
                }
            }
        });
        Ok(Self {
            child,
            stdin,
            lines,
        })
    }
}

impl Transport for ChildTransport {
    fn send(&mut self, line: &str) -> Result<(), EvalError> {
        self.stdin.write_all(line.as_bytes())?;
        self.stdin.write_all(b"\n")?;
        self.stdin.flush()?;
        Ok(())
    }

    fn recv(&mut self, timeout: Duration) -> Result<String, EvalError> {
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(EvalError::Io(e)),
            Err(RecvTimeoutError::Timeout) => Err(EvalError::Timeout {
                request_id: 0,
                seconds: timeout.as_secs_f64(),
            }),
            Err(RecvTimeoutError::Disconnected) => {
                let status = self.child.try_wait().ok().flatten();
                Err(EvalError::WorkerExited(match status {
                    Some(s) => s.to_string(),
                    None => "stdout closed".to_string(),
                }))
            }
        }
    }
}

impl Drop for ChildTransport {
    fn drop(&mut self) {
        let _ = self.send(&encode_line(&EngineMessage::Shutdown));
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[derive(Debug, Clone)]
pub struct CommandConnector {
    pub program: String,
    pub args: Vec<String>,
}

impl Connector for CommandConnector {
    fn connect(&self) -> Result<Box<dyn Transport>, EvalError> {
        Ok(Box::new(ChildTransport::spawn(&self.program, &self.args)?))
    }

    fn describe(&self) -> String {
        std::iter::once(self.program.as_str())
            .chain(self.args.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Per-request deadline. A fixed value wins; otherwise the deadline is
/// `multiplier` times the median of completed request durations, never
/// below `floor`, and `initial` until the first request completes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeoutPolicy {
    pub fixed: Option<Duration>,
    pub multiplier: u32,
    pub floor: Duration,
    pub initial: Duration,
}

impl Default for TimeoutPolicy {
    fn default() -> Self {
        Self {
            fixed: None,
            multiplier: 10,
            floor: Duration::from_secs(60),
            initial: Duration::from_secs(3600),
        }
    }
}

impl TimeoutPolicy {
    pub fn fixed(d: Duration) -> Self {
        Self {
            fixed: Some(d),
            ..Self::default()
        }
    }

    pub fn deadline(&self, observed: &[Duration]) -> Duration {
        if let Some(d) = self.fixed {
            return d;
        }
        if observed.is_empty() {
            return self.initial;
        }
        let mut sorted = observed.to_vec();
        sorted.sort();
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2
        };
        (median * self.multiplier).max(self.floor)
    }
}

#[derive(Debug, Clone)]
pub struct WorkerSettings {
    pub train_iterations: u32,
    pub batch_size: u32,
    pub rng_seed: u64,
    pub sdr_sources: SdrSources,
    pub timeout: TimeoutPolicy,
    /// Dataset tag folded into the evaluator identity.
    pub dataset: String,
    /// Number of worker processes kept open.
    pub workers: usize,
}

impl Default for WorkerSettings {
    fn default() -> Self {
        Self {
            train_iterations: DEFAULT_TRAIN_ITERATIONS,
            batch_size: DEFAULT_BATCH_SIZE,
            rng_seed: 0,
            sdr_sources: SdrSources::Both,
            timeout: TimeoutPolicy::default(),
            dataset: "MIR".to_string(),
            workers: 1,
        }
    }
}

/// FNV-1a over the genome bits, mixed with the run seed.
fn request_seed(run_seed: u64, bits: &[bool]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ run_seed;
    for &b in bits {
        h ^= b as u64 + 1;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Evaluator backed by one or more worker processes. Failed requests are
/// retried once on a fresh connection before the error is surfaced.
pub struct RemoteEvaluator {
    connector: Box<dyn Connector>,
    settings: WorkerSettings,
    sessions: Vec<Mutex<Option<Box<dyn Transport>>>>,
    next_request: AtomicU64,
    durations: Mutex<Vec<Duration>>,
}

impl RemoteEvaluator {
    pub fn new(connector: Box<dyn Connector>, settings: WorkerSettings) -> Self {
        let sessions = (0..settings.workers.max(1))
            .map(|_| Mutex::new(None))
            .collect();
        Self {
            connector,
            settings,
            sessions,
            next_request: AtomicU64::new(1),
            durations: Mutex::new(Vec::new()),
        }
    }

    fn deadline(&self) -> Duration {
        self.settings
            .timeout
            .deadline(&self.durations.lock().unwrap())
    }

    fn handshake(&self, transport: &mut dyn Transport) -> Result<(), EvalError> {
        transport.send(&encode_line(&EngineMessage::hello()))?;
        let line = transport.recv(self.deadline())?;
        match serde_json::from_str::<WorkerMessage>(&line) {
            Ok(WorkerMessage::Hello {
                protocol,
                version,
                worker,
                ..
            }) if protocol == PROTOCOL_NAME && version == PROTOCOL_VERSION => {
                debug!("connected to worker {worker}");
                Ok(())
            }
            Ok(other) => Err(EvalError::Protocol {
                request_id: 0,
                message: format!("unexpected handshake reply {other:?}"),
            }),
            Err(e) => Err(EvalError::Protocol {
                request_id: 0,
                message: format!("malformed handshake reply: {e}"),
            }),
        }
    }

    /// Connects and performs the version handshake without sending work.
    pub fn check(&self) -> Result<(), EvalError> {
        let mut t = self.connector.connect()?;
        self.handshake(t.as_mut())
    }

    fn attempt(
        &self,
        slot: &mut Option<Box<dyn Transport>>,
        request: &FitnessRequest,
    ) -> Result<f64, EvalError> {
        if slot.is_none() {
            let mut t = self.connector.connect()?;
            self.handshake(t.as_mut())?;
            *slot = Some(t);
        }
        let transport = slot.as_mut().expect("connected");
        let id = request.request_id;
        let started = Instant::now();
        transport.send(&encode_line(&EngineMessage::Evaluate(request.clone())))?;
        let line = transport.recv(self.deadline()).map_err(|e| match e {
            EvalError::Timeout { seconds, .. } => EvalError::Timeout {
                request_id: id,
                seconds,
            },
            other => other,
        })?;
        let reply: WorkerMessage =
            serde_json::from_str(&line).map_err(|e| EvalError::Protocol {
                request_id: id,
                message: format!("malformed reply: {e}"),
            })?;
        let result = match reply {
            WorkerMessage::Result(r) => r,
            WorkerMessage::Error { message } => {
                return Err(EvalError::Protocol {
                    request_id: id,
                    message,
                })
            }
            other => {
                return Err(EvalError::Protocol {
                    request_id: id,
                    message: format!("unexpected reply {other:?}"),
                })
            }
        };
        if result.request_id != id {
            return Err(EvalError::Protocol {
                request_id: id,
                message: format!("reply carries request_id {}", result.request_id),
            });
        }
        match (result.status, result.mean_sdr_db) {
            (ResultStatus::Ok, Some(sdr)) if sdr.is_finite() => {
                self.durations.lock().unwrap().push(started.elapsed());
                Ok(sdr)
            }
            (ResultStatus::Ok, other) => Err(EvalError::Protocol {
                request_id: id,
                message: format!("ok status with mean_sdr_db {other:?}"),
            }),
            (ResultStatus::Error, _) => Err(EvalError::Failed {
                request_id: id,
                diagnostics: result.diagnostics,
            }),
        }
    }
}

impl Evaluator for RemoteEvaluator {
    fn identity(&self) -> String {
        let id = format!(
            "worker:{}:{}:{}x{}",
            self.connector.describe(),
            self.settings.dataset,
            self.settings.train_iterations,
            self.settings.batch_size
        );
        match self.settings.sdr_sources {
            SdrSources::Both => id,
            SdrSources::Vocal => id + ":vocal",
        }
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_validation_split: true,
            concurrent_safe: self.sessions.len() > 1,
        }
    }

    fn evaluate(&self, job: &EvalJob<'_>) -> Result<f64, EvalError> {
        let session = &self.sessions[(job.eval_id as usize) % self.sessions.len()];
        let mut slot = session.lock().unwrap();
        let mut request = FitnessRequest {
            request_id: self.next_request.fetch_add(1, Ordering::SeqCst),
            eval_id: job.eval_id,
            architecture: ArchitectureMessage::new(job.architecture),
            train_iterations: self.settings.train_iterations,
            batch_size: self.settings.batch_size,
            split: job.split,
            rng_seed: request_seed(self.settings.rng_seed, job.genome.bits()),
            sdr_sources: self.settings.sdr_sources,
            reuse_from: job.reuse_from,
        };
        match self.attempt(&mut slot, &request) {
            Ok(sdr) => Ok(sdr),
            Err(first) => {
                warn!(
                    "evaluation {} failed ({first}); retrying on a fresh worker",
                    job.eval_id
                );
                *slot = None;
                request.request_id = self.next_request.fetch_add(1, Ordering::SeqCst);
                let outcome = self.attempt(&mut slot, &request);
                if outcome.is_err() {
                    *slot = None;
                }
                outcome
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitness::protocol::{EchoWorker, FitnessResult};
    use crate::fitness::{FitnessCache, FitnessService, Split, SurrogateEvaluator};
    use crate::genome::{Genome, GenomeLayout};
    use std::collections::VecDeque;
    use std::sync::Arc;

    /// In-process worker; `mangle` can rewrite or drop replies.
    struct Loopback {
        worker: EchoWorker,
        queue: VecDeque<String>,
        mangle: Arc<dyn Fn(String) -> Option<String> + Send + Sync>,
    }

    impl Transport for Loopback {
        fn send(&mut self, line: &str) -> Result<(), EvalError> {
            if let Some(reply) = self.worker.handle(line) {
                if let Some(r) = (self.mangle)(reply) {
                    self.queue.push_back(r);
                }
            }
            Ok(())
        }

        fn recv(&mut self, timeout: Duration) -> Result<String, EvalError> {
            self.queue.pop_front().ok_or(EvalError::Timeout {
                request_id: 0,
                seconds: timeout.as_secs_f64(),
            })
        }
    }

    struct LoopbackConnector {
        connects: Arc<AtomicU64>,
        /// Mangler applied to connections whose ordinal is below `bad_connections`.
        bad_connections: u64,
        mangle: Arc<dyn Fn(String) -> Option<String> + Send + Sync>,
    }

    impl Connector for LoopbackConnector {
        fn connect(&self) -> Result<Box<dyn Transport>, EvalError> {
            let n = self.connects.fetch_add(1, Ordering::SeqCst);
            let mangle: Arc<dyn Fn(String) -> Option<String> + Send + Sync> =
                if n < self.bad_connections {
                    self.mangle.clone()
                } else {
                    Arc::new(Some)
                };
            Ok(Box::new(Loopback {
                worker: EchoWorker::new(),
                queue: VecDeque::new(),
                mangle,
            }))
        }

        fn describe(&self) -> String {
            "loopback".into()
        }
    }

    fn remote(
        bad: u64,
        mangle: impl Fn(String) -> Option<String> + Send + Sync + 'static,
    ) -> (RemoteEvaluator, Arc<AtomicU64>) {
        let connects = Arc::new(AtomicU64::new(0));
        let connector = LoopbackConnector {
            connects: connects.clone(),
            bad_connections: bad,
            mangle: Arc::new(mangle),
        };
        let settings = WorkerSettings {
            timeout: TimeoutPolicy::fixed(Duration::from_millis(10)),
            ..WorkerSettings::default()
        };
        (
            RemoteEvaluator::new(Box::new(connector), settings),
            connects,
        )
    }

    fn drop_results(line: String) -> Option<String> {
        if line.contains("\"result\"") {
            None
        } else {
            Some(line)
        }
    }

    #[test]
    fn echo_worker_matches_in_process_surrogate() {
        let layout = GenomeLayout::default();
        let (ev, _) = remote(0, Some);
        let svc_remote = FitnessService::new(Box::new(ev), FitnessCache::in_memory(), layout);
        let svc_local = FitnessService::new(
            Box::new(SurrogateEvaluator),
            FitnessCache::in_memory(),
            layout,
        );
        let zero = Genome::zeros(&layout);
        for (i, g) in [Genome::seed(), zero].iter().enumerate() {
            let a = svc_remote
                .evaluate_one(i as u64, g, Split::Test, None)
                .unwrap()
                .0;
            let b = svc_local
                .evaluate_one(i as u64, g, Split::Test, None)
                .unwrap()
                .0;
            assert_eq!(a, b);
        }
    }

    #[test]
    fn timeout_is_retried_on_fresh_worker() {
        let (ev, connects) = remote(1, drop_results);
        let layout = GenomeLayout::default();
        let svc = FitnessService::new(Box::new(ev), FitnessCache::in_memory(), layout);
        let (obj, _) = svc
            .evaluate_one(0, &Genome::seed(), Split::Test, None)
            .unwrap();
        assert_eq!(obj.sdr_db, 7.6768497203312025);
        assert_eq!(connects.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn second_failure_is_surfaced() {
        let (ev, connects) = remote(u64::MAX, drop_results);
        let layout = GenomeLayout::default();
        let svc = FitnessService::new(Box::new(ev), FitnessCache::in_memory(), layout);
        let err = svc
            .evaluate_one(5, &Genome::seed(), Split::Test, None)
            .unwrap_err();
        assert_eq!(err.eval_id(), Some(5));
        assert!(err.to_string().contains("timed out"), "{err}");
        assert_eq!(connects.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn mismatched_request_id_is_a_protocol_error() {
        let (ev, _) = remote(u64::MAX, |line: String| {
            match serde_json::from_str::<WorkerMessage>(&line).unwrap() {
                WorkerMessage::Result(r) => {
                    Some(encode_line(&WorkerMessage::Result(FitnessResult {
                        request_id: r.request_id + 100,
                        ..r
                    })))
                }
                _ => Some(line),
            }
        });
        let arch = crate::phenotype::build_architecture(
            &crate::genome::decode_genome(&Genome::seed(), &GenomeLayout::default()).unwrap(),
        );
        let seed = Genome::seed();
        let job = EvalJob {
            eval_id: 0,
            genome: &seed,
            architecture: &arch,
            split: Split::Test,
            reuse_from: None,
        };
        match ev.evaluate(&job) {
            Err(EvalError::Protocol { message, .. }) => assert!(message.contains("request_id")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validation_requests_carry_split() {
        let seen = Arc::new(Mutex::new(Vec::new()));
        struct Spy {
            seen: Arc<Mutex<Vec<String>>>,
            inner: Loopback,
        }
        impl Transport for Spy {
            fn send(&mut self, line: &str) -> Result<(), EvalError> {
                self.seen.lock().unwrap().push(line.to_string());
                self.inner.send(line)
            }
            fn recv(&mut self, t: Duration) -> Result<String, EvalError> {
                self.inner.recv(t)
            }
        }
        struct SpyConnector(Arc<Mutex<Vec<String>>>);
        impl Connector for SpyConnector {
            fn connect(&self) -> Result<Box<dyn Transport>, EvalError> {
                Ok(Box::new(Spy {
                    seen: self.0.clone(),
                    inner: Loopback {
                        worker: EchoWorker::new(),
                        queue: VecDeque::new(),
                        mangle: Arc::new(Some),
                    },
                }))
            }
            fn describe(&self) -> String {
                "spy".into()
            }
        }
        let ev = RemoteEvaluator::new(
            Box::new(SpyConnector(seen.clone())),
            WorkerSettings::default(),
        );
        let svc = FitnessService::new(
            Box::new(ev),
            FitnessCache::in_memory(),
            GenomeLayout::default(),
        );
        svc.evaluate_one(3, &Genome::seed(), Split::Validation, Some(3))
            .unwrap();
        let lines = seen.lock().unwrap();
        let req: serde_json::Value = serde_json::from_str(&lines[1]).unwrap();
        assert_eq!(req["split"], "validation");
        assert_eq!(req["reuse_from"], 3);
        assert_eq!(req["eval_id"], 3);
        assert_eq!(req["sdr_sources"], "both");
    }

    #[test]
    fn timeout_policy() {
        let p = TimeoutPolicy::default();
        assert_eq!(p.deadline(&[]), Duration::from_secs(3600));
        let secs = |v: &[u64]| {
            v.iter()
                .map(|&s| Duration::from_secs(s))
                .collect::<Vec<_>>()
        };
        assert_eq!(p.deadline(&secs(&[1, 2, 3])), Duration::from_secs(60));
        assert_eq!(
            p.deadline(&secs(&[10, 30, 20, 1000])),
            Duration::from_secs(250)
        );
        assert_eq!(
            TimeoutPolicy::fixed(Duration::from_secs(5)).deadline(&secs(&[100])),
            Duration::from_secs(5)
        );
    }

    #[test]
    fn request_seed_depends_on_genome() {
        let layout = GenomeLayout::default();
        let a = request_seed(1, Genome::seed().bits());
        assert_eq!(a, request_seed(1, Genome::seed().bits()));
        assert_ne!(a, request_seed(1, Genome::zeros(&layout).bits()));
        assert_ne!(a, request_seed(2, Genome::seed().bits()));
    }

    #[test]
    fn vocal_only_fitness_has_its_own_identity() {
        let connector = || {
            Box::new(CommandConnector {
                program: "w".into(),
                args: vec![],
            })
        };
        let both = RemoteEvaluator::new(connector(), WorkerSettings::default());
        let vocal = RemoteEvaluator::new(
            connector(),
            WorkerSettings {
                sdr_sources: SdrSources::Vocal,
                ..WorkerSettings::default()
            },
        );
        assert_eq!(both.identity(), "worker:w:MIR:1500x2");
        assert_eq!(vocal.identity(), "worker:w:MIR:1500x2:vocal");
    }
}
