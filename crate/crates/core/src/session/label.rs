use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::evolution::Scheme;

/// `S|M-generation-index-dataset`, e.g. `S-16-1-MIR`. Indices are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IndividualLabel {
    pub scheme: Scheme,
    pub generation: usize,
    pub index: usize,
    pub dataset: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed label `{0}`")]
pub struct LabelError(pub String);

impl IndividualLabel {
    pub fn new(scheme: Scheme, generation: usize, index: usize, dataset: &str) -> Self {
        Self {
            scheme,
            generation,
            index,
            dataset: dataset.to_string(),
        }
    }
}

impl fmt::Display for IndividualLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}-{}-{}-{}",
            self.scheme.tag(),
            self.generation,
            self.index,
            self.dataset
        )
    }
}

impl FromStr for IndividualLabel {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || LabelError(s.to_string());
        let parts: Vec<&str> = s.splitn(4, '-').collect();
        let [tag, generation, index, dataset] = parts[..] else {
            return Err(bad());
        };
        let scheme = match tag {
            "S" => Scheme::Single,
            "M" => Scheme::Multi,
            _ => return Err(bad()),
        };
        let number = |t: &str| {
            if t.is_empty()
                || !t.bytes().all(|b| b.is_ascii_digit())
                || (t.len() > 1 && t.starts_with('0'))
            {
                None
            } else {
                t.parse::<usize>().ok()
            }
        };
        let generation = number(generation).ok_or_else(bad)?;
        let index = number(index).filter(|&i| i >= 1).ok_or_else(bad)?;
        if !is_dataset_tag(dataset) {
            return Err(bad());
        }
        Ok(Self {
            scheme,
            generation,
            index,
            dataset: dataset.to_string(),
        })
    }
}

/// Dataset tags are non-empty ASCII alphanumerics, so labels split cleanly.
pub fn is_dataset_tag(tag: &str) -> bool {
    !tag.is_empty() && tag.bytes().all(|b| b.is_ascii_alphanumeric())
}
