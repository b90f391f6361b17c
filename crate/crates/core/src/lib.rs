//! Two-stage customer-service scenario recognition.
//!
//! A cheap embedding-cosine ranker narrows the scenario catalog to a few
//! candidates, a distilled TextCNN matcher (optionally fused with
//! customer/staff/order features) scores each candidate, and the
//! [`service`] module turns the scores into per-turn recommendations with
//! staff feedback and business metrics.

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod coarse;
pub mod data_prep;
pub mod desk;
pub mod matcher;
pub mod numerics;
pub mod service;
pub mod text;
pub mod trainer;

/// Identifier of a standard service scenario in the catalog.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScenarioId(pub String);

impl ScenarioId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ScenarioId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

impl From<String> for ScenarioId {
    fn from(s: String) -> Self {
        Self(s)
    }
}
