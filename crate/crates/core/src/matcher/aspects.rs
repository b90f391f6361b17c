//! Multi-aspect features: customer, staff and order attributes encoded as a
//! fixed-length vector.
//!
//! Each categorical field takes one slot per category plus a missingness
//! slot; each numeric field takes a min/max scaled slot plus a missingness
//! slot. A missing field encodes as zeros with its missingness slot set.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::MatcherError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AspectField {
    Categorical { name: String, categories: Vec<String> },
    Numeric { name: String, min: f64, max: f64 },
}

impl AspectField {
    pub fn name(&self) -> &str {
        match self {
            AspectField::Categorical { name, .. } | AspectField::Numeric { name, .. } => name,
        }
    }

    fn width(&self) -> usize {
        match self {
            AspectField::Categorical { categories, .. } => categories.len() + 1,
            AspectField::Numeric { .. } => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AspectSchema {
    pub fields: Vec<AspectField>,
}

/// Encoded aspect vector; its length equals the schema width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AspectFeatureVector(pub Vec<f64>);

pub type Attributes = BTreeMap<String, Value>;

fn categorical(name: &str, cats: &[&str]) -> AspectField {
    AspectField::Categorical { name: name.into(), categories: cats.iter().map(|c| c.to_string()).collect() }
}

fn numeric(name: &str, min: f64, max: f64) -> AspectField {
    AspectField::Numeric { name: name.into(), min, max }
}

impl Default for AspectSchema {
    /// 32 slots covering customer profile, staff profile and order details.
    fn default() -> Self {
        Self {
            fields: vec![
                categorical("customer_tier", &["bronze", "silver", "gold", "platinum"]),
                categorical("customer_region", &["domestic", "cross_border", "overseas", "unknown"]),
                categorical("staff_team", &["presales", "aftersales", "logistics", "finance"]),
                categorical("order_status", &["unpaid", "paid", "shipped", "delivered", "returned", "cancelled"]),
                numeric("order_amount", 0.0, 5000.0),
                numeric("customer_tenure_days", 0.0, 3650.0),
                numeric("past_complaints", 0.0, 20.0),
                numeric("staff_experience_years", 0.0, 20.0),
                numeric("days_since_order", 0.0, 90.0),
            ],
        }
    }
}

impl AspectSchema {
    pub fn width(&self) -> usize {
        self.fields.iter().map(AspectField::width).sum()
    }

    pub fn encode(&self, attributes: &Attributes) -> Result<AspectFeatureVector, MatcherError> {
        if let Some(unknown) = attributes.keys().find(|k| !self.fields.iter().any(|f| f.name() == k.as_str())) {
            return Err(MatcherError::Schema { field: unknown.clone(), reason: "not declared in the aspect schema".into() });
        }
        let mut out = Vec::with_capacity(self.width());
        for field in &self.fields {
            let value = attributes.get(field.name()).filter(|v| !v.is_null());
            match (field, value) {
                (AspectField::Categorical { categories, .. }, None) => {
                    out.extend(std::iter::repeat_n(0.0, categories.len()));
                    out.push(1.0);
                }
                (AspectField::Categorical { name, categories }, Some(v)) => {
                    let s = v
                        .as_str()
                        .ok_or_else(|| MatcherError::Schema { field: name.clone(), reason: format!("expected a string, got {v}") })?;
                    let pos = categories
                        .iter()
                        .position(|c| c == s)
                        .ok_or_else(|| MatcherError::Schema { field: name.clone(), reason: format!("unknown category {s:?}") })?;
                    out.extend((0..categories.len()).map(|i| if i == pos { 1.0 } else { 0.0 }));
                    out.push(0.0);
                }
                (AspectField::Numeric { .. }, None) => out.extend([0.0, 1.0]),
                (AspectField::Numeric { name, min, max }, Some(v)) => {
                    let x = v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| MatcherError::Schema {
                        field: name.clone(),
                        reason: format!("expected a finite number, got {v}"),
                    })?;
                    let span = (max - min).max(f64::MIN_POSITIVE);
                    out.extend([((x - min) / span).clamp(0.0, 1.0), 0.0]);
                }
            }
        }
        Ok(AspectFeatureVector(out))
    }

    pub fn check(&self, vector: &AspectFeatureVector) -> Result<(), MatcherError> {
        if vector.0.len() != self.width() {
            return Err(MatcherError::Schema {
                field: "<vector>".into(),
                reason: format!("length {} but schema width is {}", vector.0.len(), self.width()),
            });
        }
        Ok(())
    }
}
