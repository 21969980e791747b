//! Generation log files: `gen-NNNN.jsonl`, one JSON object per line.
//!
//! A log holds a header, the survivors in stored order, the discarded pool
//! members in rank order and a closing `end` line carrying the number of
//! individual lines, so truncated or edited files are detected on read.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::label::IndividualLabel;
use super::SessionError;
use crate::evolution::{GenerationRecord, Individual, Scheme};
use crate::fitness::Objectives;
use crate::genome::Genome;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationHeader {
    pub generation: usize,
    pub scheme: Scheme,
    pub dataset: String,
    pub offspring_evaluated: usize,
    pub best_validation_sdr: Option<f64>,
    pub pareto_front_ids: Option<Vec<u64>>,
    pub next_eval_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Survivor,
    Discarded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedIndividual {
    pub role: Role,
    /// Present for survivors, and for every member of generation 0.
    pub label: Option<String>,
    pub eval_id: u64,
    pub born: usize,
    pub sdr_db: f64,
    pub params: u64,
    pub genome: Genome,
}

impl LoggedIndividual {
    fn new(ind: &Individual, role: Role, label: Option<IndividualLabel>) -> Self {
        Self {
            role,
            label: label.map(|l| l.to_string()),
            eval_id: ind.eval_id,
            born: ind.born,
            sdr_db: ind.objectives.sdr_db,
            params: ind.objectives.params,
            genome: ind.genome.clone(),
        }
    }

    pub fn to_individual(&self) -> Individual {
        Individual {
            eval_id: self.eval_id,
            born: self.born,
            genome: self.genome.clone(),
            objectives: self.objectives(),
        }
    }

    pub fn objectives(&self) -> Objectives {
        Objectives {
            sdr_db: self.sdr_db,
            params: self.params,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Line {
    Header(GenerationHeader),
    Individual(LoggedIndividual),
    End { generation: usize, lines: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationLog {
    pub header: GenerationHeader,
    pub survivors: Vec<LoggedIndividual>,
    pub discarded: Vec<LoggedIndividual>,
}

impl GenerationLog {
    pub fn from_record(record: &GenerationRecord, scheme: Scheme, dataset: &str) -> Self {
        let g = record.index;
        let label = |i: usize| Some(IndividualLabel::new(scheme, g, i + 1, dataset));
        let survivors = record
            .population
            .iter()
            .enumerate()
            .map(|(i, ind)| LoggedIndividual::new(ind, Role::Survivor, label(i)))
            .collect();
        let offset = record.population.len();
        let discarded = record
            .discarded
            .iter()
            .enumerate()
            .map(|(i, ind)| {
                LoggedIndividual::new(
                    ind,
                    Role::Discarded,
                    if g == 0 { label(offset + i) } else { None },
                )
            })
            .collect();
        Self {
            header: GenerationHeader {
                generation: g,
                scheme,
                dataset: dataset.to_string(),
                offspring_evaluated: record.evaluated.len(),
                best_validation_sdr: record.best_validation_sdr,
                pareto_front_ids: record.pareto_front_ids.clone(),
                next_eval_id: record.next_eval_id,
            },
            survivors,
            discarded,
        }
    }

    pub fn population(&self) -> Vec<Individual> {
        self.survivors
            .iter()
            .map(LoggedIndividual::to_individual)
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut push = |line: &Line| {
            out.push_str(&serde_json::to_string(line).expect("log lines serialize"));
            out.push('\n');
        };
        push(&Line::Header(self.header.clone()));
        for ind in self.survivors.iter().chain(&self.discarded) {
            push(&Line::Individual(ind.clone()));
        }
        push(&Line::End {
            generation: self.header.generation,
            lines: self.survivors.len() + self.discarded.len(),
        });
        out
    }

    pub fn parse(text: &str, generation: usize) -> Result<Self, SessionError> {
        let corrupt = |reason: String| SessionError::CorruptLog { generation, reason };
        let mut lines = text.lines().enumerate();
        let header = match lines.next() {
            Some((_, l)) => match serde_json::from_str::<Line>(l) {
                Ok(Line::Header(h)) => h,
                _ => return Err(corrupt("first line is not a header".into())),
            },
            None => return Err(corrupt("empty file".into())),
        };
        if header.generation != generation {
            return Err(corrupt(format!(
                "header names generation {}",
                header.generation
            )));
        }
        let mut survivors = Vec::new();
        let mut discarded = Vec::new();
        for (n, l) in lines.by_ref() {
            match serde_json::from_str::<Line>(l) {
                Ok(Line::Individual(ind)) => {
                    if ind.role == Role::Survivor && !discarded.is_empty() {
                        return Err(corrupt(format!("line {}: survivor after discarded", n + 1)));
                    }
                    match ind.role {
                        Role::Survivor => survivors.push(ind),
                        Role::Discarded => discarded.push(ind),
                    }
                }
                Ok(Line::End {
                    generation: g,
                    lines: count,
                }) => {
                    if g != generation || count != survivors.len() + discarded.len() {
                        return Err(corrupt(format!(
                            "end line expects {count} individuals of generation {g}"
                        )));
                    }
                    if lines.next().is_some() {
                        return Err(corrupt("content after end line".into()));
                    }
                    if survivors.is_empty() {
                        return Err(corrupt("no survivors".into()));
                    }
                    return Ok(Self {
                        header,
                        survivors,
                        discarded,
                    });
                }
                Ok(Line::Header(_)) => {
                    return Err(corrupt(format!("line {}: second header", n + 1)))
                }
                Err(e) => return Err(corrupt(format!("line {}: {e}", n + 1))),
            }
        }
        Err(corrupt("missing end line (truncated?)".into()))
    }
}

pub fn generation_path(dir: &Path, generation: usize) -> PathBuf {
    dir.join(format!("gen-{generation:04}.jsonl"))
}

/// Writes through a temporary file and a rename so readers never observe a
/// partial log.
pub fn write_generation(dir: &Path, log: &GenerationLog) -> Result<(), SessionError> {
    let path = generation_path(dir, log.header.generation);
    let tmp = path.with_extension("jsonl.tmp");
    let io = |e| SessionError::io(&tmp, e);
    let mut file = fs::File::create(&tmp).map_err(io)?;
    file.write_all(log.to_text().as_bytes()).map_err(io)?;
    file.sync_all().map_err(io)?;
    fs::rename(&tmp, &path).map_err(|e| SessionError::io(&path, e))
}

pub fn read_generation(dir: &Path, generation: usize) -> Result<GenerationLog, SessionError> {
    let path = generation_path(dir, generation);
    if !path.exists() {
        return Err(SessionError::MissingGeneration(generation));
    }
    let text = fs::read_to_string(&path).map_err(|e| SessionError::CorruptLog {
        generation,
        reason: e.to_string(),
    })?;
    GenerationLog::parse(&text, generation)
}

/// Number of generation files present, checking that they are contiguous
/// from 0. Individual files are not parsed here.
pub fn count_generations(dir: &Path) -> Result<usize, SessionError> {
    let mut found = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| SessionError::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| SessionError::io(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(num) = name
            .strip_prefix("gen-")
            .and_then(|r| r.strip_suffix(".jsonl"))
        {
            if let Ok(g) = num.parse::<usize>() {
                found.push(g);
            }
        }
    }
    found.sort_unstable();
    for (expected, &g) in found.iter().enumerate() {
        if g != expected {
            return Err(SessionError::CorruptLog {
                generation: expected,
                reason: "generation file missing while later ones exist".into(),
            });
        }
    }
    Ok(found.len())
}
