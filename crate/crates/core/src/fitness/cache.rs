use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use log::warn;
use serde::{Deserialize, Serialize};

use super::{Objectives, Split};
use crate::genome::Genome;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    /// Raw bit string, no separators.
    pub genome: String,
    pub evaluator: String,
    pub split: Split,
}

impl CacheKey {
    pub fn new(genome: &Genome, evaluator: &str, split: Split) -> Self {
        Self {
            genome: genome.to_bit_string(),
            evaluator: evaluator.to_string(),
            split,
        }
    }
}

/// One line of the cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    #[serde(flatten)]
    pub key: CacheKey,
    #[serde(flatten)]
    pub objectives: Objectives,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl CacheEntry {
    pub fn new(key: CacheKey, objectives: Objectives) -> Self {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            key,
            objectives,
            timestamp,
        }
    }
}

/// Genome -> objectives memo, optionally backed by an append-only JSONL
/// file so it survives restarts.
pub struct FitnessCache {
    entries: Mutex<HashMap<CacheKey, Objectives>>,
    file: Option<Mutex<File>>,
}

impl FitnessCache {
    pub fn in_memory() -> Self {
        Self {
            entries: Mutex::new(HashMap::new()),
            file: None,
        }
    }

    /// Loads existing entries from `path` (if present) and appends new ones
    /// to it. Unparseable lines are skipped with a warning.
    pub fn open(path: &Path) -> io::Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheEntry>(&line) {
                    Ok(entry) => {
                        entries.insert(entry.key, entry.objectives);
                    }
                    Err(e) => warn!(
                        "{}:{}: skipping corrupt cache line: {e}",
                        path.display(),
                        n + 1
                    ),
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            entries: Mutex::new(entries),
            file: Some(Mutex::new(file)),
        })
    }

    pub fn get(&self, key: &CacheKey) -> Option<Objectives> {
        self.entries.lock().unwrap().get(key).copied()
    }

    pub fn put(&self, entry: CacheEntry) {
        if let Some(file) = &self.file {
            let mut line = serde_json::to_string(&entry).expect("cache entry serializes");
            line.push('\n');
            let mut f = file.lock().unwrap();
            if let Err(e) = f.write_all(line.as_bytes()).and_then(|_| f.flush()) {
                warn!("failed to persist cache entry: {e}");
            }
        }
        self.entries
            .lock()
            .unwrap()
            .insert(entry.key, entry.objectives);
    }

    /// Forgets in-memory entries; the backing file is left untouched.
    pub fn clear(&self) {
        self.entries.lock().unwrap().clear();
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn survives_reopen_and_skips_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let key = CacheKey::new(&Genome::seed(), "surrogate-v1", Split::Test);
        let obj = Objectives {
            sdr_db: 7.25,
            params: 2_327_874,
        };
        {
            let cache = FitnessCache::open(&path).unwrap();
            cache.put(CacheEntry::new(key.clone(), obj));
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        writeln!(f, "{{\"genome\": truncated").unwrap();
        drop(f);

        let cache = FitnessCache::open(&path).unwrap();
        assert_eq!(cache.len(), 1);
        assert_eq!(cache.get(&key), Some(obj));
        let other = CacheKey::new(&Genome::seed(), "surrogate-v1", Split::Validation);
        assert_eq!(cache.get(&other), None);
    }

    #[test]
    fn entry_line_format() {
        let key = CacheKey::new(
            &Genome::from_bits(vec![true, false]),
            "x",
            Split::Validation,
        );
        let entry = CacheEntry {
            key,
            objectives: Objectives {
                sdr_db: 1.5,
                params: 3,
            },
            timestamp: 9,
        };
        assert_eq!(
            serde_json::to_string(&entry).unwrap(),
            r#"{"genome":"10","evaluator":"x","split":"validation","sdr_db":1.5,"params":3,"timestamp":9}"#
        );
    }
}
