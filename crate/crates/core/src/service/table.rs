use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::numerics::hex;
use crate::ScenarioId;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("scenario {0} appears more than once")]
    Duplicate(ScenarioId),
    #[error("scenario {0} has an empty description")]
    EmptyDescription(ScenarioId),
    #[error("catalog is empty")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One catalog line: a scenario and the solution it maps to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioEntry {
    pub scenario_id: ScenarioId,
    pub description: String,
    /// Canned answer, manual or roadmap reference shown to staff.
    pub solution: String,
    pub domain: String,
}

/// Scenario catalog with exactly one solution per scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSolutionTable {
    entries: BTreeMap<ScenarioId, ScenarioEntry>,
    version: String,
}

impl ScenarioSolutionTable {
    pub fn from_entries(entries: impl IntoIterator<Item = ScenarioEntry>) -> Result<Self, CatalogError> {
        let mut map = BTreeMap::new();
        for e in entries {
            if e.description.trim().is_empty() {
                return Err(CatalogError::EmptyDescription(e.scenario_id));
            }
            if map.contains_key(&e.scenario_id) {
                return Err(CatalogError::Duplicate(e.scenario_id));
            }
            map.insert(e.scenario_id.clone(), e);
        }
        if map.is_empty() {
            return Err(CatalogError::Empty);
        }
        let mut h = Sha256::new();
        for e in map.values() {
            for field in [e.scenario_id.as_str(), &e.description, &e.solution, &e.domain] {
                h.update(field.as_bytes());
                h.update([0]);
            }
        }
        Ok(Self { entries: map, version: hex(&h.finalize()) })
    }

    /// Reads JSON lines `{scenario_id, description, solution, domain}`;
    /// blank lines are skipped.
    pub fn parse<R: Read>(reader: R) -> Result<Self, CatalogError> {
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e = serde_json::from_str(&line).map_err(|e| CatalogError::Parse { line: i + 1, message: e.to_string() })?;
            entries.push(e);
        }
        Self::from_entries(entries)
    }

    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        Self::parse(fs::File::open(path)?)
    }

    pub fn to_jsonl(&self) -> String {
        self.entries.values().map(|e| serde_json::to_string(e).expect("entries serialize") + "\n").collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), CatalogError> {
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    /// Content hash; changes whenever any entry changes.
    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &ScenarioId) -> Option<&ScenarioEntry> {
        self.entries.get(id)
    }

    pub fn contains(&self, id: &ScenarioId) -> bool {
        self.entries.contains_key(id)
    }

    /// Entries in ascending scenario id order.
    pub fn iter(&self) -> impl Iterator<Item = &ScenarioEntry> {
        self.entries.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &ScenarioId> {
        self.entries.keys()
    }
}
