use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::TextError;

/// Document frequencies with smoothed idf: `ln((1 + D) / (1 + df)) + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfIdfModel {
    documents: usize,
    document_frequency: HashMap<String, usize>,
}

impl TfIdfModel {
    pub fn fit<'a, I>(corpus: I) -> Result<Self, TextError>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut documents = 0;
        let mut document_frequency: HashMap<String, usize> = HashMap::new();
        for doc in corpus {
            documents += 1;
            let distinct: HashSet<&String> = doc.iter().collect();
            for t in distinct {
                *document_frequency.entry(t.clone()).or_default() += 1;
            }
        }
        if documents == 0 {
            return Err(TextError::Config("tf-idf corpus is empty".into()));
        }
        Ok(Self { documents, document_frequency })
    }

    pub fn documents(&self) -> usize {
        self.documents
    }

    pub fn idf(&self, token: &str) -> f64 {
        let df = self.document_frequency.get(token).copied().unwrap_or(0) as f64;
        let d = self.documents as f64;
        ((1.0 + d) / (1.0 + df)).ln() + 1.0
    }

    /// `(token, tf·idf)` for each distinct token, in first-occurrence order,
    /// where tf is the raw count within `tokens`.
    pub fn weights<'t>(&self, tokens: &'t [String]) -> Vec<(&'t str, f64)> {
        let mut order: Vec<&str> = Vec::new();
        let mut tf: HashMap<&str, usize> = HashMap::new();
        for t in tokens {
            let c = tf.entry(t.as_str()).or_default();
            if *c == 0 {
                order.push(t);
            }
            *c += 1;
        }
        order.into_iter().map(|t| (t, tf[t] as f64 * self.idf(t))).collect()
    }
}
