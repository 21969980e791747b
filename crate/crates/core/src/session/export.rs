use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::log::{count_generations, read_generation, GenerationLog, LoggedIndividual};
use super::SessionError;
use crate::fitness::OBJECTIVE_SENSES;
use crate::genome::Genome;
use crate::pareto::fast_nondominated_sort;

/// One point of the evolution scatter plot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterRow {
    pub generation: usize,
    pub sdr_db: f64,
    pub params: u64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParetoRow {
    pub label: String,
    pub eval_id: u64,
    pub sdr_db: f64,
    pub params: u64,
    pub genome: Genome,
}

/// Rows for every generation: the whole initial population for generation
/// 0, the survivors for every later generation.
pub fn export_scatter(dir: &Path) -> Result<Vec<ScatterRow>, SessionError> {
    let generations = count_generations(dir)?;
    if generations == 0 {
        return Err(SessionError::EmptyRun);
    }
    let mut rows = Vec::new();
    for g in 0..generations {
        let log = read_generation(dir, g)?;
        let members: Vec<&LoggedIndividual> = if g == 0 {
            log.survivors.iter().chain(&log.discarded).collect()
        } else {
            log.survivors.iter().collect()
        };
        for ind in members {
            rows.push(ScatterRow {
                generation: g,
                sdr_db: ind.sdr_db,
                params: ind.params,
                label: ind.label.clone().ok_or_else(|| SessionError::CorruptLog {
                    generation: g,
                    reason: format!("individual {} has no label", ind.eval_id),
                })?,
            });
        }
    }
    Ok(rows)
}

pub fn write_scatter_csv<W: Write>(rows: &[ScatterRow], writer: W) -> Result<(), SessionError> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// CSV with header `generation,sdr_db,params,label`.
pub fn scatter_csv(dir: &Path) -> Result<String, SessionError> {
    let rows = export_scatter(dir)?;
    let mut buf = Vec::new();
    if rows.is_empty() {
        buf.extend_from_slice(b"generation,sdr_db,params,label\n");
    }
    write_scatter_csv(&rows, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

/// Survivors of `log` that no other survivor dominates, in stored order.
pub fn front_zero(log: &GenerationLog) -> Vec<&LoggedIndividual> {
    let points: Vec<[f64; 2]> = log
        .survivors
        .iter()
        .map(|i| i.objectives().point())
        .collect();
    let mut front = fast_nondominated_sort(&points, &OBJECTIVE_SENSES).swap_remove(0);
    front.sort_unstable();
    front.into_iter().map(|i| &log.survivors[i]).collect()
}

pub fn export_pareto(dir: &Path, generation: usize) -> Result<Vec<ParetoRow>, SessionError> {
    let log = read_generation(dir, generation)?;
    Ok(front_zero(&log)
        .into_iter()
        .map(|ind| ParetoRow {
            label: ind.label.clone().unwrap_or_default(),
            eval_id: ind.eval_id,
            sdr_db: ind.sdr_db,
            params: ind.params,
            genome: ind.genome.clone(),
        })
        .collect())
}
