//! Objective evaluation.
//!
//! Every evaluator only produces the separation score; the parameter count
//! is always computed here from the decoded architecture, so complexity is
//! identical no matter which evaluator is plugged in. Results flow through
//! a [`FitnessCache`] keyed by genome, evaluator identity and data split.

mod cache;
pub mod protocol;
pub mod remote;
mod surrogate;

use std::fmt;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::{decode_genome, CodecError, Genome, GenomeLayout};
use crate::pareto::Sense;
use crate::phenotype::{build_architecture, count_params, ArchitectureSpec};

pub use cache::{CacheEntry, CacheKey, FitnessCache};
pub use surrogate::{
    surrogate_sdr, ComplexityOnlyEvaluator, SurrogateEvaluator, SURROGATE_IDENTITY,
};

/// Orientation of `[sdr_db, params]`.
pub const OBJECTIVE_SENSES: [Sense; 2] = [Sense::Maximize, Sense::Minimize];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objectives {
    /// Mean SDR in dB, higher is better.
    pub sdr_db: f64,
    /// Trainable parameters, lower is better.
    pub params: u64,
}

impl Objectives {
    pub fn point(&self) -> [f64; 2] {
        [self.sdr_db, self.params as f64]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Test,
    Validation,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Test => "test",
            Split::Validation => "validation",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Capabilities {
    pub supports_validation_split: bool,
    pub concurrent_safe: bool,
}

/// One scoring request handed to an [`Evaluator`].
#[derive(Debug, Clone, Copy)]
pub struct EvalJob<'a> {
    pub eval_id: u64,
    pub genome: &'a Genome,
    pub architecture: &'a ArchitectureSpec,
    pub split: Split,
    /// Evaluation whose trained weights may be reused (validation scoring).
    pub reuse_from: Option<u64>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("request {request_id} timed out after {seconds:.1}s")]
    Timeout { request_id: u64, seconds: f64 },
    #[error("worker exited: {0}")]
    WorkerExited(String),
    #[error("protocol error on request {request_id}: {message}")]
    Protocol { request_id: u64, message: String },
    #[error("worker reported failure for request {request_id}: {diagnostics}")]
    Failed {
        request_id: u64,
        diagnostics: String,
    },
    #[error("non-finite SDR {0}")]
    NonFinite(f64),
    #[error("worker i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

/// Produces the SDR objective for one architecture. Implementations must
/// be deterministic: the same genome and split always yield the same value.
pub trait Evaluator: Send + Sync {
    /// Stable name; part of every cache key.
    fn identity(&self) -> String;

    fn capabilities(&self) -> Capabilities {
        Capabilities::default()
    }

    fn evaluate(&self, job: &EvalJob<'_>) -> Result<f64, EvalError>;
}

#[derive(Debug, Error)]
pub enum FitnessError {
    #[error("evaluation {eval_id} failed: {source}")]
    Evaluation {
        eval_id: u64,
        #[source]
        source: EvalError,
    },
    #[error(transparent)]
    Codec(#[from] CodecError),
}

impl FitnessError {
    pub fn eval_id(&self) -> Option<u64> {
        match self {
            FitnessError::Evaluation { eval_id, .. } => Some(*eval_id),
            FitnessError::Codec(_) => None,
        }
    }
}

/// Counters for one batch: `worker_calls + cache_hits == requested`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationStats {
    pub requested: usize,
    pub cache_hits: usize,
    pub worker_calls: usize,
}

impl std::ops::AddAssign for EvaluationStats {
    fn add_assign(&mut self, rhs: Self) {
        self.requested += rhs.requested;
        self.cache_hits += rhs.cache_hits;
        self.worker_calls += rhs.worker_calls;
    }
}

/// Decode, build and count parameters in one step.
pub fn evaluate_complexity(genome: &Genome, layout: &GenomeLayout) -> Result<u64, CodecError> {
    Ok(count_params(&build_architecture(&decode_genome(
        genome, layout,
    )?)))
}

/// Cache-aware front end over an [`Evaluator`].
pub struct FitnessService {
    evaluator: Box<dyn Evaluator>,
    identity: String,
    cache: FitnessCache,
    layout: GenomeLayout,
    parallelism: usize,
    totals: Mutex<EvaluationStats>,
}

impl FitnessService {
    pub fn new(evaluator: Box<dyn Evaluator>, cache: FitnessCache, layout: GenomeLayout) -> Self {
        let identity = evaluator.identity();
        Self {
            evaluator,
            identity,
            cache,
            layout,
            parallelism: 1,
            totals: Mutex::new(EvaluationStats::default()),
        }
    }

    /// Dispatch up to `n` evaluations at once when the evaluator allows it.
    pub fn with_parallelism(mut self, n: usize) -> Self {
        self.parallelism = n.max(1);
        self
    }

    pub fn identity(&self) -> &str {
        &self.identity
    }

    pub fn layout(&self) -> &GenomeLayout {
        &self.layout
    }

    pub fn cache(&self) -> &FitnessCache {
        &self.cache
    }

    pub fn capabilities(&self) -> Capabilities {
        self.evaluator.capabilities()
    }

    /// Running totals across every batch served by this instance.
    pub fn totals(&self) -> EvaluationStats {
        *self.totals.lock().unwrap()
    }

    pub fn evaluate_one(
        &self,
        eval_id: u64,
        genome: &Genome,
        split: Split,
        reuse_from: Option<u64>,
    ) -> Result<(Objectives, EvaluationStats), FitnessError> {
        let (mut objs, stats) = self.evaluate_jobs(&[(eval_id, genome)], split, reuse_from)?;
        Ok((objs.remove(0), stats))
    }

    /// Scores `jobs` in order. Cache hits and repeats inside the batch are
    /// resolved without calling the evaluator; misses may run concurrently
    /// but results are always reported in input order.
    pub fn evaluate_batch(
        &self,
        jobs: &[(u64, &Genome)],
        split: Split,
    ) -> Result<(Vec<Objectives>, EvaluationStats), FitnessError> {
        self.evaluate_jobs(jobs, split, None)
    }

    fn evaluate_jobs(
        &self,
        jobs: &[(u64, &Genome)],
        split: Split,
        reuse_from: Option<u64>,
    ) -> Result<(Vec<Objectives>, EvaluationStats), FitnessError> {
        struct Pending<'a> {
            eval_id: u64,
            genome: &'a Genome,
            key: CacheKey,
            arch: ArchitectureSpec,
            params: u64,
        }

        let mut resolved: Vec<Option<Objectives>> = vec![None; jobs.len()];
        let mut pending: Vec<Pending> = Vec::new();
        let mut waiting: Vec<(usize, usize)> = Vec::new();
        for (slot, &(eval_id, genome)) in jobs.iter().enumerate() {
            let key = CacheKey::new(genome, &self.identity, split);
            if let Some(hit) = self.cache.get(&key) {
                resolved[slot] = Some(hit);
                continue;
            }
            if let Some(p) = pending.iter().position(|p| p.key == key) {
                waiting.push((slot, p));
                continue;
            }
            let arch = build_architecture(&decode_genome(genome, &self.layout)?);
            let params = count_params(&arch);
            waiting.push((slot, pending.len()));
            pending.push(Pending {
                eval_id,
                genome,
                key,
                arch,
                params,
            });
        }

        let run = |p: &Pending| {
            let job = EvalJob {
                eval_id: p.eval_id,
                genome: p.genome,
                architecture: &p.arch,
                split,
                reuse_from,
            };
            self.evaluator.evaluate(&job).and_then(|sdr| {
                if sdr.is_finite() {
                    Ok(sdr)
                } else {
                    Err(EvalError::NonFinite(sdr))
                }
            })
        };
        let concurrent = self.parallelism > 1
            && self.evaluator.capabilities().concurrent_safe
            && pending.len() > 1;
        let outcomes: Vec<Result<f64, EvalError>> = if concurrent {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.parallelism)
                .build()
                .map_err(|e| FitnessError::Evaluation {
                    eval_id: pending[0].eval_id,
                    source: EvalError::Other(e.to_string()),
                })?;
            pool.install(|| pending.par_iter().map(run).collect())
        } else {
            pending.iter().map(run).collect()
        };

        let mut fresh = Vec::with_capacity(pending.len());
        let mut failure = None;
        for (p, outcome) in pending.iter().zip(outcomes) {
            match outcome {
                Ok(sdr_db) => {
                    let objectives = Objectives {
                        sdr_db,
                        params: p.params,
                    };
                    self.cache.put(CacheEntry::new(p.key.clone(), objectives));
                    fresh.push(Some(objectives));
                }
                Err(source) => {
                    if failure.is_none() {
                        failure = Some(FitnessError::Evaluation {
                            eval_id: p.eval_id,
                            source,
                        });
                    }
                    fresh.push(None);
                }
            }
        }
        if let Some(err) = failure {
            return Err(err);
        }
        for (slot, p) in waiting {
            resolved[slot] = fresh[p];
        }
        let stats = EvaluationStats {
            requested: jobs.len(),
            cache_hits: jobs.len() - pending.len(),
            worker_calls: pending.len(),
        };
        *self.totals.lock().unwrap() += stats;
        Ok((
            resolved
                .into_iter()
                .map(|o| o.expect("every slot resolved"))
                .collect(),
            stats,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    struct Counting {
        calls: Arc<AtomicUsize>,
    }

    impl Evaluator for Counting {
        fn identity(&self) -> String {
            "counting".into()
        }

        fn evaluate(&self, job: &EvalJob<'_>) -> Result<f64, EvalError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(match job.split {
                Split::Test => 1.0,
                Split::Validation => 2.0,
            })
        }
    }

    fn service() -> (FitnessService, Arc<AtomicUsize>) {
        let calls = Arc::new(AtomicUsize::new(0));
        let svc = FitnessService::new(
            Box::new(Counting {
                calls: calls.clone(),
            }),
            FitnessCache::in_memory(),
            GenomeLayout::default(),
        );
        (svc, calls)
    }

    #[test]
    fn repeated_genome_hits_cache() {
        let (svc, calls) = service();
        let seed = Genome::seed();
        svc.evaluate_one(0, &seed, Split::Test, None).unwrap();
        let (obj, stats) = svc.evaluate_one(1, &seed, Split::Test, None).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert_eq!(stats.cache_hits, 1);
        assert_eq!(obj.params, 2_327_874);

        svc.cache().clear();
        svc.evaluate_one(2, &seed, Split::Test, None).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn splits_are_cached_separately() {
        let (svc, calls) = service();
        let seed = Genome::seed();
        let (t, _) = svc.evaluate_one(0, &seed, Split::Test, None).unwrap();
        let (v, _) = svc
            .evaluate_one(0, &seed, Split::Validation, Some(0))
            .unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 2);
        assert_eq!((t.sdr_db, v.sdr_db), (1.0, 2.0));
    }

    #[test]
    fn duplicates_inside_batch_cost_one_call() {
        let (svc, calls) = service();
        let seed = Genome::seed();
        let zero = Genome::zeros(&GenomeLayout::default());
        let jobs = [(0, &seed), (1, &zero), (2, &seed), (3, &seed)];
        let (objs, stats) = svc.evaluate_batch(&jobs, Split::Test).unwrap();
        assert_eq!(objs.len(), 4);
        assert_eq!(calls.load(Ordering::SeqCst), 2);
        assert_eq!(
            stats,
            EvaluationStats {
                requested: 4,
                cache_hits: 2,
                worker_calls: 2
            }
        );
        assert_eq!(svc.totals(), stats);
    }

    #[test]
    fn complexity_matches_phenotype() {
        let layout = GenomeLayout::default();
        assert_eq!(
            evaluate_complexity(&Genome::seed(), &layout).unwrap(),
            2_327_874
        );
        // five block PCGs (1->32->32, then 32->32->32) plus the head
        let first = 9 * 32 + 32 + 9 * 32 * 32 + 32;
        let rest = 2 * (9 * 32 * 32 + 32);
        let head = 9 * 32 * 2 + 2;
        assert_eq!(
            evaluate_complexity(&Genome::zeros(&layout), &layout).unwrap(),
            first + 4 * rest + head
        );
    }

    struct Failing;

    impl Evaluator for Failing {
        fn identity(&self) -> String {
            "failing".into()
        }

        fn evaluate(&self, job: &EvalJob<'_>) -> Result<f64, EvalError> {
            if job.eval_id == 7 {
                Err(EvalError::Other("boom".into()))
            } else {
                Ok(f64::NAN)
            }
        }
    }

    #[test]
    fn errors_carry_eval_id() {
        let svc = FitnessService::new(
            Box::new(Failing),
            FitnessCache::in_memory(),
            GenomeLayout::default(),
        );
        let err = svc
            .evaluate_one(7, &Genome::seed(), Split::Test, None)
            .unwrap_err();
        assert_eq!(err.eval_id(), Some(7));
        let err = svc
            .evaluate_one(3, &Genome::seed(), Split::Test, None)
            .unwrap_err();
        assert!(matches!(
            err,
            FitnessError::Evaluation {
                eval_id: 3,
                source: EvalError::NonFinite(_)
            }
        ));
        assert!(svc.cache().is_empty());
    }
}
