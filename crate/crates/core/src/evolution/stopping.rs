use serde::{Deserialize, Serialize};

/// Validation score of one generation's best individual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub generation: usize,
    pub sdr_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopDecision {
    Continue,
    Stop {
        /// Generation at which the criterion first held.
        stop_generation: usize,
        /// Generation holding the running maximum; the run's result.
        output_generation: usize,
    },
}

/// Stops once the validation score has failed to exceed its running maximum
/// for `patience` consecutive generations. Scans the whole history and
/// reports the first point where this holds.
pub fn stopping_check(history: &[ValidationPoint], patience: usize) -> StopDecision {
    let mut best: Option<ValidationPoint> = None;
    let mut stagnant = 0;
    for point in history {
        match best {
            Some(b) if point.sdr_db <= b.sdr_db => {
                stagnant += 1;
                if stagnant >= patience {
                    return StopDecision::Stop {
                        stop_generation: point.generation,
                        output_generation: b.generation,
                    };
                }
            }
            _ => {
                best = Some(*point);
                stagnant = 0;
            }
        }
    }
    StopDecision::Continue
}
