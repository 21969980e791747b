//! Stand-in fitness functions for exercising the search without training.
//!
//! The surrogate score is NOT a separation measurement. It is a smooth,
//! deterministic function of the architecture so that engine behaviour
//! (selection, caching, persistence) can be tested end to end:
//!
//! ```text
//! sdr = 6.0 + 2.0 * tanh(ln(params / 1e6))
//!           + 0.3 * (distinct active pooling areas T*F)
//!           - 0.2 * (sigmoid activations in live convolutions)
//! ```

use super::{Capabilities, EvalError, EvalJob, Evaluator};
use crate::phenotype::{count_params, distinct_pool_areas, sigmoid_count, ArchitectureSpec};

pub const SURROGATE_IDENTITY: &str = "surrogate-v1";

pub fn surrogate_sdr(arch: &ArchitectureSpec) -> f64 {
    let params = count_params(arch) as f64;
    6.0 + 2.0 * (params / 1e6).ln().tanh() + 0.3 * distinct_pool_areas(arch) as f64
        - 0.2 * sigmoid_count(arch) as f64
}

/// In-process surrogate scorer; ignores the data split.
#[derive(Debug, Default, Clone, Copy)]
pub struct SurrogateEvaluator;

impl Evaluator for SurrogateEvaluator {
    fn identity(&self) -> String {
        SURROGATE_IDENTITY.to_string()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_validation_split: true,
            concurrent_safe: true,
        }
    }

    fn evaluate(&self, job: &EvalJob<'_>) -> Result<f64, EvalError> {
        Ok(surrogate_sdr(job.architecture))
    }
}

/// Scores every architecture at 0 dB, leaving parameter count as the only
/// informative objective.
#[derive(Debug, Default, Clone, Copy)]
pub struct ComplexityOnlyEvaluator;

impl Evaluator for ComplexityOnlyEvaluator {
    fn identity(&self) -> String {
        "complexity-only".to_string()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_validation_split: true,
            concurrent_safe: true,
        }
    }

    fn evaluate(&self, _job: &EvalJob<'_>) -> Result<f64, EvalError> {
        Ok(0.0)
    }
}
