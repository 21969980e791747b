//! Run orchestration and persistence.
//!
//! A run directory holds `config.toml`, one `gen-NNNN.jsonl` per completed
//! generation, `fitness_cache.jsonl`, `evaluations.jsonl` (evaluation and
//! cache counters, informational only) and `report.json`. Every generation
//! is on disk before the next starts, so [`Session::run`] on an existing
//! directory continues exactly where the last complete generation left off.

pub mod describe;
mod export;
mod label;
pub mod log;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolution::{
    init_population, step_generation, stopping_check, EvolutionConfig, EvolutionError, Scheme,
    StopDecision, ValidationPoint,
};
use crate::fitness::protocol::{SdrSources, DEFAULT_BATCH_SIZE, DEFAULT_TRAIN_ITERATIONS};
use crate::fitness::remote::{CommandConnector, RemoteEvaluator, TimeoutPolicy, WorkerSettings};
use crate::fitness::{
    ComplexityOnlyEvaluator, EvaluationStats, Evaluator, FitnessCache, FitnessService,
    SurrogateEvaluator,
};
use crate::genome::{CodecError, Genome};

pub use export::{
    export_pareto, export_scatter, front_zero, scatter_csv, write_scatter_csv, ParetoRow,
    ScatterRow,
};
pub use label::{is_dataset_tag, IndividualLabel, LabelError};
pub use log::{GenerationHeader, GenerationLog, LoggedIndividual, Role};

pub const CONFIG_FILE: &str = "config.toml";
pub const CACHE_FILE: &str = "fitness_cache.jsonl";
pub const EVALUATIONS_FILE: &str = "evaluations.jsonl";
pub const REPORT_FILE: &str = "report.json";
/// Overrides the worker executable named in the config.
pub const WORKER_ENV: &str = "EMRP_WORKER";

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("generation {generation} log is corrupt: {reason}")]
    CorruptLog { generation: usize, reason: String },
    #[error("generation {0} does not exist")]
    MissingGeneration(usize),
    #[error("run directory {} already holds a run; use resume", .0.display())]
    AlreadyExists(PathBuf),
    #[error("run directory has no completed generation")]
    EmptyRun,
    #[error("invalid session config: {0}")]
    Config(String),
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl SessionError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvaluatorKind {
    /// Closed-form, non-physical stand-in score for offline testing.
    #[default]
    Surrogate,
    /// Scores every network 0 dB; only the parameter count matters.
    ComplexityOnly,
    /// External training worker over the line protocol.
    Worker,
}

impl FromStr for EvaluatorKind {
    type Err = SessionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "surrogate" => Ok(Self::Surrogate),
            "complexity-only" => Ok(Self::ComplexityOnly),
            "worker" => Ok(Self::Worker),
            other => Err(SessionError::Config(format!("unknown evaluator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerConfig {
    /// Program followed by its arguments.
    #[serde(default)]
    pub command: Vec<String>,
    #[serde(default = "default_train_iterations")]
    pub train_iterations: u32,
    #[serde(default = "default_batch_size")]
    pub batch_size: u32,
    /// Fixed per-request deadline; adaptive when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<f64>,
    /// Sources the fitness SDR averages over.
    #[serde(default)]
    pub sdr_sources: SdrSources,
}

fn default_train_iterations() -> u32 {
    DEFAULT_TRAIN_ITERATIONS
}

fn default_batch_size() -> u32 {
    DEFAULT_BATCH_SIZE
}

impl Default for WorkerConfig {
    fn default() -> Self {
        Self {
            command: Vec::new(),
            train_iterations: DEFAULT_TRAIN_ITERATIONS,
            batch_size: DEFAULT_BATCH_SIZE,
            timeout_secs: None,
            sdr_sources: SdrSources::Both,
        }
    }
}

impl WorkerConfig {
    /// Worker command with the environment override applied to the program.
    pub fn resolved_command(&self) -> Result<(String, Vec<String>), SessionError> {
        let program = std::env::var(WORKER_ENV)
            .ok()
            .filter(|p| !p.is_empty())
            .or_else(|| self.command.first().cloned())
            .ok_or_else(|| {
                SessionError::Config(format!(
                    "no worker command configured and {WORKER_ENV} unset"
                ))
            })?;
        Ok((program, self.command.iter().skip(1).cloned().collect()))
    }
}

fn default_dataset() -> String {
    "MIR".to_string()
}

fn default_parallelism() -> usize {
    1
}

/// Everything needed to start or resume a run; stored as `config.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    #[serde(flatten)]
    pub evolution: EvolutionConfig,
    #[serde(default)]
    pub evaluator: EvaluatorKind,
    /// Tag used in labels and in the worker evaluator identity.
    #[serde(default = "default_dataset")]
    pub dataset: String,
    /// Defaults to the built-in seed architecture.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_genome: Option<Genome>,
    /// Extra single-scheme generations to run after the stopping criterion
    /// fires. The reported output generation is unaffected.
    #[serde(default)]
    pub force_generations: usize,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub worker: WorkerConfig,
}

impl SessionConfig {
    pub fn new(evolution: EvolutionConfig) -> Self {
        Self {
            evolution,
            evaluator: EvaluatorKind::Surrogate,
            dataset: default_dataset(),
            seed_genome: None,
            force_generations: 0,
            parallelism: 1,
            worker: WorkerConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, SessionError> {
        toml::from_str(text).map_err(|e| SessionError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("session config serializes")
    }

    pub fn seed(&self) -> Genome {
        self.seed_genome.clone().unwrap_or_else(Genome::seed)
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        self.evolution
            .validate()
            .map_err(|e| SessionError::Config(e.0))?;
        if !is_dataset_tag(&self.dataset) {
            return Err(SessionError::Config(format!(
                "dataset tag `{}` must be ASCII letters and digits",
                self.dataset
            )));
        }
        if self.parallelism == 0 {
            return Err(SessionError::Config(
                "parallelism must be at least 1".into(),
            ));
        }
        let bits = self.evolution.layout.total_bits();
        if self.seed().len() != bits {
            return Err(SessionError::Config(format!(
                "seed genome has {} bits, layout expects {bits}",
                self.seed().len()
            )));
        }
        if let Some(t) = self.worker.timeout_secs {
            if !(t.is_finite() && t > 0.0) {
                return Err(SessionError::Config(
                    "worker timeout must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn worker_evaluator(&self) -> Result<RemoteEvaluator, SessionError> {
        let (program, args) = self.worker.resolved_command()?;
        let settings = WorkerSettings {
            train_iterations: self.worker.train_iterations,
            batch_size: self.worker.batch_size,
            rng_seed: self.evolution.rng_seed,
            sdr_sources: self.worker.sdr_sources,
            timeout: match self.worker.timeout_secs {
                Some(t) => TimeoutPolicy::fixed(Duration::from_secs_f64(t)),
                None => TimeoutPolicy::default(),
            },
            dataset: self.dataset.clone(),
            workers: self.parallelism,
        };
        Ok(RemoteEvaluator::new(
            Box::new(CommandConnector { program, args }),
            settings,
        ))
    }

    pub fn build_evaluator(&self) -> Result<Box<dyn Evaluator>, SessionError> {
        Ok(match self.evaluator {
            EvaluatorKind::Surrogate => Box::new(SurrogateEvaluator),
            EvaluatorKind::ComplexityOnly => Box::new(ComplexityOnlyEvaluator),
            EvaluatorKind::Worker => Box::new(self.worker_evaluator()?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopInfo {
    pub stop_generation: usize,
    pub output_generation: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub label: String,
    pub eval_id: u64,
    pub sdr_db: f64,
    pub params: u64,
    pub genome: Genome,
}

/// Final summary. Contains no timing or cache counters, so it is identical
/// for a run and any resumed copy of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scheme: Scheme,
    pub dataset: String,
    pub evaluator: String,
    pub generations_completed: usize,
    pub stop: Option<StopInfo>,
    pub output_generation: usize,
    /// Validation score of the output individual (single scheme).
    pub validation_sdr: Option<f64>,
    /// Single scheme: the best individual of the output generation.
    /// Multi scheme: the non-dominated survivors of the final generation.
    pub selected: Vec<ReportEntry>,
}

impl Report {
    pub fn load(dir: &Path) -> Result<Self, SessionError> {
        let path = dir.join(REPORT_FILE);
        let text = fs::read_to_string(&path).map_err(|e| SessionError::io(&path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| SessionError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Serialize)]
struct EvaluationLine {
    generation: usize,
    #[serde(flatten)]
    stats: EvaluationStats,
}

pub struct Session {
    dir: PathBuf,
    config: SessionConfig,
    fitness: FitnessService,
}

impl Session {
    /// Starts a new run directory with the configured evaluator.
    pub fn create(dir: &Path, config: SessionConfig) -> Result<Self, SessionError> {
        let evaluator = config.build_evaluator()?;
        Self::create_with_evaluator(dir, config, evaluator)
    }

    pub fn create_with_evaluator(
        dir: &Path,
        config: SessionConfig,
        evaluator: Box<dyn Evaluator>,
    ) -> Result<Self, SessionError> {
        config.validate()?;
        fs::create_dir_all(dir).map_err(|e| SessionError::io(dir, e))?;
        let config_path = dir.join(CONFIG_FILE);
        if config_path.exists() {
            return Err(SessionError::AlreadyExists(dir.to_path_buf()));
        }
        fs::write(&config_path, config.to_toml()).map_err(|e| SessionError::io(&config_path, e))?;
        Self::with_evaluator(dir, config, evaluator)
    }

    /// Reopens an existing run directory for resumption.
    pub fn open(dir: &Path) -> Result<Self, SessionError> {
        let config = load_config(dir)?;
        let evaluator = config.build_evaluator()?;
        Self::with_evaluator(dir, config, evaluator)
    }

    pub fn open_with_evaluator(
        dir: &Path,
        evaluator: Box<dyn Evaluator>,
    ) -> Result<Self, SessionError> {
        Self::with_evaluator(dir, load_config(dir)?, evaluator)
    }

    fn with_evaluator(
        dir: &Path,
        config: SessionConfig,
        evaluator: Box<dyn Evaluator>,
    ) -> Result<Self, SessionError> {
        let cache_path = dir.join(CACHE_FILE);
        let cache =
            FitnessCache::open(&cache_path).map_err(|e| SessionError::io(&cache_path, e))?;
        let fitness = FitnessService::new(evaluator, cache, config.evolution.layout)
            .with_parallelism(config.parallelism);
        Ok(Self {
            dir: dir.to_path_buf(),
            config,
            fitness,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn fitness(&self) -> &FitnessService {
        &self.fitness
    }

    fn record_stats(&self, generation: usize, stats: EvaluationStats) -> Result<(), SessionError> {
        let path = self.dir.join(EVALUATIONS_FILE);
        let line =
            serde_json::to_string(&EvaluationLine { generation, stats }).expect("stats serialize");
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| SessionError::io(&path, e))?;
        writeln!(f, "{line}").map_err(|e| SessionError::io(&path, e))
    }

    /// Runs generations until the limit or the stopping criterion, starting
    /// after the last generation already on disk, then writes the report.
    pub fn run(&self) -> Result<Report, SessionError> {
        let evo = &self.config.evolution;
        let dataset = &self.config.dataset;
        let existing = log::count_generations(&self.dir)?;
        let mut logs = Vec::with_capacity(existing.max(1));
        for g in 0..existing {
            let l = log::read_generation(&self.dir, g)?;
            if l.header.scheme != evo.scheme {
                return Err(SessionError::CorruptLog {
                    generation: g,
                    reason: format!("logged scheme {} differs from config", l.header.scheme),
                });
            }
            logs.push(l);
        }
        if logs.is_empty() {
            let record = init_population(&self.config.seed(), evo, &self.fitness)?;
            let l = GenerationLog::from_record(&record, evo.scheme, dataset);
            log::write_generation(&self.dir, &l)?;
            self.record_stats(0, record.stats)?;
            logs.push(l);
        }

        let mut history: Vec<ValidationPoint> = logs
            .iter()
            .filter_map(|l| {
                l.header.best_validation_sdr.map(|sdr_db| ValidationPoint {
                    generation: l.header.generation,
                    sdr_db,
                })
            })
            .collect();
        let check = |history: &[ValidationPoint]| match (evo.scheme, evo.stagnation_patience) {
            (Scheme::Single, Some(p)) => match stopping_check(history, p) {
                StopDecision::Stop {
                    stop_generation,
                    output_generation,
                } => Some(StopInfo {
                    stop_generation,
                    output_generation,
                }),
                StopDecision::Continue => None,
            },
            _ => None,
        };
        let mut stop = check(&history);

        loop {
            let last = logs.last().expect("at least generation 0");
            let g = last.header.generation;
            if g >= evo.max_generations {
                break;
            }
            if let Some(s) = stop {
                if g >= s.stop_generation + self.config.force_generations {
                    break;
                }
            }
            let record = step_generation(
                &last.population(),
                g + 1,
                last.header.next_eval_id,
                evo,
                &self.fitness,
            )?;
            let l = GenerationLog::from_record(&record, evo.scheme, dataset);
            log::write_generation(&self.dir, &l)?;
            self.record_stats(g + 1, record.stats)?;
            ::log::info!(
                "generation {} done: best sdr {:.4} dB, {} offspring",
                g + 1,
                record.population[0].objectives.sdr_db,
                record.evaluated.len()
            );
            if let Some(sdr_db) = record.best_validation_sdr {
                history.push(ValidationPoint {
                    generation: g + 1,
                    sdr_db,
                });
                if stop.is_none() {
                    stop = check(&history);
                }
            }
            logs.push(l);
        }

        let report = self.report(&logs, &history, stop);
        let path = self.dir.join(REPORT_FILE);
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        fs::write(&tmp, text).map_err(|e| SessionError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| SessionError::io(&path, e))?;
        Ok(report)
    }

    fn report(
        &self,
        logs: &[GenerationLog],
        history: &[ValidationPoint],
        stop: Option<StopInfo>,
    ) -> Report {
        let last = logs.last().expect("at least generation 0");
        let entry = |ind: &LoggedIndividual| ReportEntry {
            label: ind.label.clone().unwrap_or_default(),
            eval_id: ind.eval_id,
            sdr_db: ind.sdr_db,
            params: ind.params,
            genome: ind.genome.clone(),
        };
        let (output_generation, selected) = match self.config.evolution.scheme {
            Scheme::Single => {
                let output = stop
                    .map(|s| s.output_generation)
                    .unwrap_or_else(|| running_max_generation(history));
                (output, vec![entry(&logs[output].survivors[0])])
            }
            Scheme::Multi => (
                last.header.generation,
                front_zero(last).into_iter().map(entry).collect(),
            ),
        };
        Report {
            scheme: self.config.evolution.scheme,
            dataset: self.config.dataset.clone(),
            evaluator: self.fitness.identity().to_string(),
            generations_completed: last.header.generation,
            stop,
            output_generation,
            validation_sdr: logs[output_generation].header.best_validation_sdr,
            selected,
        }
    }
}

/// Generation holding the first strict running maximum, 0 when empty.
fn running_max_generation(history: &[ValidationPoint]) -> usize {
    let mut best: Option<ValidationPoint> = None;
    for p in history {
        if best.is_none_or(|b| p.sdr_db > b.sdr_db) {
            best = Some(*p);
        }
    }
    best.map_or(0, |b| b.generation)
}

pub fn load_config(dir: &Path) -> Result<SessionConfig, SessionError> {
    let path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&path).map_err(|e| SessionError::io(&path, e))?;
    let config = SessionConfig::from_toml(&text)?;
    config.validate()?;
    Ok(config)
}

/// Starts a fresh run in `dir`.
pub fn run(dir: &Path, config: SessionConfig) -> Result<Report, SessionError> {
    Session::create(dir, config)?.run()
}

/// Continues the run in `dir` from its last complete generation.
pub fn resume(dir: &Path) -> Result<Report, SessionError> {
    Session::open(dir)?.run()
}
