//! Genetic search: initialization from a seed genome, crossover and
//! mutation offspring, and survival selection for both schemes.
//!
//! Random draws for generation `g` come from a ChaCha8 stream seeded with
//! `rng_seed` on stream `g` (stream 0 is initialization), in this order:
//! 1. `o_c` crossovers: two distinct parent positions (first is the
//!    baseline), then one draw per bit;
//! 2. mutation of every current individual in stored order, then of every
//!    crossover child, one draw per bit.
//!
//! Given a deterministic evaluator, a generation is a pure function of the
//! config, the surviving population and the generation index.

mod config;
pub mod operators;
mod stopping;

use std::collections::HashSet;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fitness::{
    EvaluationStats, FitnessError, FitnessService, Objectives, Split, OBJECTIVE_SENSES,
};
use crate::genome::Genome;
use crate::pareto::{crowding_distance, fast_nondominated_sort, Crowding};

pub use config::{ConfigError, EvolutionConfig, Scheme};
pub use operators::{crossover, flip_mutant, mutate};
pub use stopping::{stopping_check, StopDecision, ValidationPoint};

/// Attempts allowed to find `n - 1` distinct seed mutants.
pub const INIT_DRAW_BUDGET: usize = 10_000;

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Fitness(#[from] FitnessError),
    #[error("found only {found} of {wanted} distinct mutants after {draws} draws")]
    InitExhausted {
        found: usize,
        wanted: usize,
        draws: usize,
    },
    #[error("crossover parents differ in length ({baseline} vs {donor})")]
    LengthMismatch { baseline: usize, donor: usize },
    #[error("seed genome has {actual} bits, layout expects {expected}")]
    SeedLength { expected: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub eval_id: u64,
    /// Generation in which this individual was created and scored.
    pub born: usize,
    pub genome: Genome,
    pub objectives: Objectives,
}

/// Outcome of one generation (index 0 is the initial population).
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRecord {
    pub index: usize,
    /// Survivors in stored order: by SDR for the single scheme, by
    /// (front rank, crowding) for the multi scheme.
    pub population: Vec<Individual>,
    /// Pool members ranked below the survivors, in the same order.
    pub discarded: Vec<Individual>,
    /// Individuals created and scored in this generation, by eval id.
    pub evaluated: Vec<Individual>,
    pub stats: EvaluationStats,
    /// Validation score of the best survivor (single scheme, index >= 1).
    pub best_validation_sdr: Option<f64>,
    /// Eval ids of non-dominated survivors (multi scheme).
    pub pareto_front_ids: Option<Vec<u64>>,
    pub next_eval_id: u64,
}

pub fn generation_rng(rng_seed: u64, generation: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    rng.set_stream(generation as u64);
    rng
}

fn cmp_single(a: &Individual, b: &Individual) -> std::cmp::Ordering {
    b.objectives
        .sdr_db
        .total_cmp(&a.objectives.sdr_db)
        .then(a.objectives.params.cmp(&b.objectives.params))
        .then(a.eval_id.cmp(&b.eval_id))
}

/// Orders a pool best-first for the given scheme. Truncating the result to
/// `Z` is survival selection.
pub fn survival_order(scheme: Scheme, mut pool: Vec<Individual>) -> Vec<Individual> {
    match scheme {
        Scheme::Single => {
            pool.sort_by(cmp_single);
            pool
        }
        Scheme::Multi => {
            let points: Vec<[f64; 2]> = pool.iter().map(|i| i.objectives.point()).collect();
            let fronts = fast_nondominated_sort(&points, &OBJECTIVE_SENSES);
            let mut keyed: Vec<(usize, Crowding<f64>, Individual)> = Vec::with_capacity(pool.len());
            let mut slots: Vec<Option<Individual>> = pool.into_iter().map(Some).collect();
            for (rank, front) in fronts.iter().enumerate() {
                let crowd = crowding_distance(&points, front);
                for (&i, c) in front.iter().zip(crowd) {
                    keyed.push((rank, c, slots[i].take().expect("each index in one front")));
                }
            }
            keyed.sort_by(|a, b| {
                a.0.cmp(&b.0)
                    .then(b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal))
                    .then(a.2.eval_id.cmp(&b.2.eval_id))
            });
            keyed.into_iter().map(|(_, _, ind)| ind).collect()
        }
    }
}

/// Eval ids of the non-dominated members of `population`, in stored order.
pub fn pareto_front_ids(population: &[Individual]) -> Vec<u64> {
    let points: Vec<[f64; 2]> = population.iter().map(|i| i.objectives.point()).collect();
    let fronts = fast_nondominated_sort(&points, &OBJECTIVE_SENSES);
    let front0: HashSet<usize> = fronts
        .first()
        .cloned()
        .unwrap_or_default()
        .into_iter()
        .collect();
    population
        .iter()
        .enumerate()
        .filter(|(i, _)| front0.contains(i))
        .map(|(_, ind)| ind.eval_id)
        .collect()
}

fn score(
    genomes: Vec<Genome>,
    first_id: u64,
    born: usize,
    fitness: &FitnessService,
) -> Result<(Vec<Individual>, EvaluationStats), EvolutionError> {
    let jobs: Vec<(u64, &Genome)> = genomes
        .iter()
        .enumerate()
        .map(|(i, g)| (first_id + i as u64, g))
        .collect();
    let (objectives, stats) = fitness.evaluate_batch(&jobs, Split::Test)?;
    let individuals = genomes
        .into_iter()
        .zip(objectives)
        .enumerate()
        .map(|(i, (genome, objectives))| Individual {
            eval_id: first_id + i as u64,
            born,
            genome,
            objectives,
        })
        .collect();
    Ok((individuals, stats))
}

fn finish(
    config: &EvolutionConfig,
    index: usize,
    current: Vec<Individual>,
    evaluated: Vec<Individual>,
    stats: EvaluationStats,
    next_eval_id: u64,
) -> GenerationRecord {
    let mut population = survival_order(config.scheme, current);
    let discarded = population.split_off(config.population_limit.min(population.len()));
    let pareto_front_ids = (config.scheme == Scheme::Multi).then(|| pareto_front_ids(&population));
    GenerationRecord {
        index,
        population,
        discarded,
        evaluated,
        stats,
        best_validation_sdr: None,
        pareto_front_ids,
        next_eval_id,
    }
}

/// Seed plus `n - 1` distinct mutants of it, all scored, truncated to `Z`.
pub fn init_population(
    seed: &Genome,
    config: &EvolutionConfig,
    fitness: &FitnessService,
) -> Result<GenerationRecord, EvolutionError> {
    config.validate()?;
    let expected = config.layout.total_bits();
    if seed.len() != expected {
        return Err(EvolutionError::SeedLength {
            expected,
            actual: seed.len(),
        });
    }
    let mut rng = generation_rng(config.rng_seed, 0);
    let wanted = config.initial_population - 1;
    let mut seen: HashSet<Genome> = HashSet::from([seed.clone()]);
    let mut genomes = vec![seed.clone()];
    let mut draws = 0;
    while genomes.len() <= wanted {
        if draws == INIT_DRAW_BUDGET {
            return Err(EvolutionError::InitExhausted {
                found: genomes.len() - 1,
                wanted,
                draws,
            });
        }
        draws += 1;
        let mutant = flip_mutant(seed, config.max_flips, &mut rng);
        if seen.insert(mutant.clone()) {
            genomes.push(mutant);
        }
    }
    let n = genomes.len() as u64;
    let (evaluated, stats) = score(genomes, 0, 0, fitness)?;
    Ok(finish(config, 0, evaluated.clone(), evaluated, stats, n))
}

/// One generation: crossover, mutation, scoring and survival. On error the
/// caller's population is untouched.
pub fn step_generation(
    current: &[Individual],
    index: usize,
    next_eval_id: u64,
    config: &EvolutionConfig,
    fitness: &FitnessService,
) -> Result<GenerationRecord, EvolutionError> {
    config.validate()?;
    let mut rng = generation_rng(config.rng_seed, index);
    let mut children = Vec::with_capacity(config.crossover_offspring);
    if current.len() >= 2 {
        for _ in 0..config.crossover_offspring {
            let picks = index::sample(&mut rng, current.len(), 2);
            let (baseline, donor) = (
                &current[picks.index(0)].genome,
                &current[picks.index(1)].genome,
            );
            children.push(crossover(baseline, donor, config.crossover_prob, &mut rng)?);
        }
    }
    let mutants: Vec<Genome> = current
        .iter()
        .map(|i| &i.genome)
        .chain(children.iter())
        .map(|g| mutate(g, config.mutation_prob, &mut rng))
        .collect();
    let offspring: Vec<Genome> = children.into_iter().chain(mutants).collect();
    let count = offspring.len() as u64;
    let (evaluated, mut stats) = score(offspring, next_eval_id, index, fitness)?;
    let pool: Vec<Individual> = current
        .iter()
        .cloned()
        .chain(evaluated.iter().cloned())
        .collect();
    let mut record = finish(config, index, pool, evaluated, stats, next_eval_id + count);
    if config.scheme == Scheme::Single {
        let best = &record.population[0];
        let (v, vstats) = fitness.evaluate_one(
            best.eval_id,
            &best.genome,
            Split::Validation,
            Some(best.eval_id),
        )?;
        record.best_validation_sdr = Some(v.sdr_db);
        stats += vstats;
        record.stats = stats;
    }
    Ok(record)
}
