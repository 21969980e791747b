use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::GenomeLayout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// SDR only, truncation by fitness, stagnation stopping.
    Single,
    /// SDR and parameter count under NSGA-II survival.
    Multi,
}

impl Scheme {
    /// One-letter tag used in individual labels.
    pub fn tag(self) -> char {
        match self {
            Scheme::Single => 'S',
            Scheme::Multi => 'M',
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Single => "single",
            Scheme::Multi => "multi",
        })
    }
}

impl FromStr for Scheme {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(Scheme::Single),
            "multi" => Ok(Scheme::Multi),
            other => Err(ConfigError(format!("unknown scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid evolution config: {0}")]
pub struct ConfigError(pub String);

/// Search hyperparameters. Serialized names are descriptive; the short
/// symbols (`n`, `u`, `N`, `Z`, `o_c`, `o_m`, `p1`, `p2`, `S`) are accepted
/// as aliases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub scheme: Scheme,
    /// Initial population size, seed included.
    #[serde(alias = "n")]
    pub initial_population: usize,
    /// Upper bound on bits flipped when mutating the seed.
    #[serde(alias = "u")]
    pub max_flips: usize,
    #[serde(alias = "N")]
    pub max_generations: usize,
    #[serde(alias = "Z")]
    pub population_limit: usize,
    #[serde(alias = "o_c")]
    pub crossover_offspring: usize,
    /// Must equal `crossover_offspring + population_limit`.
    #[serde(alias = "o_m")]
    pub mutation_offspring: usize,
    #[serde(alias = "p1")]
    pub crossover_prob: f64,
    #[serde(alias = "p2")]
    pub mutation_prob: f64,
    /// Generations without validation improvement before stopping; single
    /// scheme only.
    #[serde(alias = "S", default, skip_serializing_if = "Option::is_none")]
    pub stagnation_patience: Option<usize>,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub layout: GenomeLayout,
}

impl EvolutionConfig {
    pub fn single() -> Self {
        Self {
            scheme: Scheme::Single,
            initial_population: 22,
            max_flips: 20,
            max_generations: 100,
            population_limit: 15,
            crossover_offspring: 10,
            mutation_offspring: 25,
            crossover_prob: 0.5,
            mutation_prob: 0.02,
            stagnation_patience: Some(8),
            rng_seed: 0,
            layout: GenomeLayout::default(),
        }
    }

    pub fn multi() -> Self {
        Self {
            scheme: Scheme::Multi,
            initial_population: 37,
            max_flips: 20,
            max_generations: 100,
            population_limit: 25,
            crossover_offspring: 10,
            mutation_offspring: 35,
            crossover_prob: 0.5,
            mutation_prob: 0.02,
            stagnation_patience: None,
            rng_seed: 0,
            layout: GenomeLayout::default(),
        }
    }

    pub fn for_scheme(scheme: Scheme) -> Self {
        match scheme {
            Scheme::Single => Self::single(),
            Scheme::Multi => Self::multi(),
        }
    }

    pub fn offspring_per_generation(&self) -> usize {
        self.crossover_offspring + self.mutation_offspring
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError(m));
        if self.initial_population < 2 {
            return err("initial_population must be at least 2".into());
        }
        if self.population_limit < 2 {
            return err("population_limit must be at least 2".into());
        }
        if self.max_flips == 0 || self.max_flips > self.layout.total_bits() {
            return err(format!(
                "max_flips must lie in 1..={} (genome length)",
                self.layout.total_bits()
            ));
        }
        if self.mutation_offspring != self.crossover_offspring + self.population_limit {
            return err(format!(
                "mutation_offspring ({}) must equal crossover_offspring + population_limit ({})",
                self.mutation_offspring,
                self.crossover_offspring + self.population_limit
            ));
        }
        for (name, p) in [
            ("crossover_prob", self.crossover_prob),
            ("mutation_prob", self.mutation_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return err(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.scheme == Scheme::Single && self.stagnation_patience == Some(0) {
            return err("stagnation_patience must be positive".into());
        }
        Ok(())
    }
}
