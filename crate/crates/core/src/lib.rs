pub mod evolution;
pub mod fitness;
pub mod genome;
pub mod message;
pub mod pareto;
pub mod phenotype;
pub mod scalar;
pub mod session;

pub use evolution::{EvolutionConfig, Individual, Scheme};
pub use fitness::{Evaluator, FitnessService, Objectives, Split};
pub use genome::{decode_genome, encode_record, GeneRecord, Genome, GenomeLayout};
pub use phenotype::{build_architecture, count_flops, count_params, ArchitectureSpec};
pub use session::{Report, Session, SessionConfig};

/// Objective vector `[sdr_db, params]` as used by selection.
pub type ObjectivePoint = [f64; 2];
/// Crowding distance over floating-point objectives.
pub type Crowding = pareto::Crowding<f64>;
/// Exact scalar for hypervolume and dominance checks.
pub type ExactScalar = num_rational::BigRational;
