use std::collections::HashMap;
use std::fs;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coarse::{CoarseRanker, ScenarioIndex};
use crate::matcher::{AspectFeatureVector, AspectSchema, Attributes, HybridModel, StudentModel};
use crate::numerics::BCE_EPSILON;
use crate::text::{tokenize, EmbeddingTable, TfIdfModel};
use crate::ScenarioId;

use super::{RecommendConfig, ScenarioSolutionTable, ServeConfig, ServiceError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringModel {
    Student,
    Hybrid,
}

/// Output of one pass through both stages.
#[derive(Clone, Debug, PartialEq)]
pub struct Recognition {
    /// Coarse top-K, best first.
    pub coarse: Vec<(ScenarioId, f64)>,
    /// Every coarse candidate with its fine score, best first.
    pub scored: Vec<(ScenarioId, f64)>,
    /// Candidates clearing the threshold, capped at `max_shown`.
    pub shown: Vec<(ScenarioId, f64)>,
    pub model: ScoringModel,
}

impl Recognition {
    pub fn fallback(&self) -> bool {
        self.shown.is_empty()
    }
}

/// Scenario representations precomputed for one fine model.
#[derive(Clone, Debug)]
struct EncodedCatalog {
    reprs: HashMap<ScenarioId, Vec<f64>>,
}

impl EncodedCatalog {
    fn build(
        catalog: &ScenarioSolutionTable,
        encode: impl Fn(&[Vec<String>]) -> Result<Vec<Vec<f64>>, ServiceError>,
    ) -> Result<Self, ServiceError> {
        let ids: Vec<ScenarioId> = catalog.ids().cloned().collect();
        let texts: Vec<Vec<String>> = catalog.iter().map(|e| tokenize(&e.description)).collect();
        let mut reprs = HashMap::with_capacity(ids.len());
        for (chunk_ids, chunk) in ids.chunks(64).zip(texts.chunks(64)) {
            for (id, r) in chunk_ids.iter().zip(encode(chunk)?) {
                reprs.insert(id.clone(), r);
            }
        }
        Ok(Self { reprs })
    }
}

/// Immutable catalog + model bundle; swapped atomically as a whole.
#[derive(Debug)]
pub struct ModelSnapshot {
    catalog: Arc<ScenarioSolutionTable>,
    ranker: CoarseRanker,
    index: ScenarioIndex,
    student: StudentModel,
    student_cache: EncodedCatalog,
    hybrid: Option<(HybridModel, EncodedCatalog)>,
}

impl ModelSnapshot {
    pub fn build(
        catalog: ScenarioSolutionTable,
        ranker: CoarseRanker,
        student: StudentModel,
        hybrid: Option<HybridModel>,
    ) -> Result<Self, ServiceError> {
        if catalog.iter().any(|e| tokenize(&e.description).is_empty()) {
            return Err(ServiceError::Validation("every scenario description needs at least one token".into()));
        }
        let index = ScenarioIndex::build(&ranker, catalog.iter().map(|e| (&e.scenario_id, e.description.as_str())))?;
        let student_cache = EncodedCatalog::build(&catalog, |t| Ok(student.encode_many(t)?))?;
        let hybrid = match hybrid {
            Some(h) => {
                let cache = EncodedCatalog::build(&catalog, |t| Ok(h.encode_many(t)?))?;
                Some((h, cache))
            }
            None => None,
        };
        Ok(Self { catalog: Arc::new(catalog), ranker, index, student, student_cache, hybrid })
    }

    /// Loads every artifact named by a serving config.
    pub fn load(config: &ServeConfig) -> Result<Self, ServiceError> {
        let catalog = ScenarioSolutionTable::load(&config.catalog)?;
        let embeddings = EmbeddingTable::load(&config.word_vectors)?;
        let tfidf: TfIdfModel = serde_json::from_slice(&fs::read(&config.tfidf)?)
            .map_err(|e| ServiceError::Validation(format!("{}: {e}", config.tfidf.display())))?;
        let student = StudentModel::load(&config.student, None)?;
        let hybrid = match &config.hybrid {
            Some(p) => Some(HybridModel::load(p, None)?),
            None => None,
        };
        Self::build(catalog, CoarseRanker::new(embeddings, tfidf), student, hybrid)
    }

    pub fn catalog(&self) -> &Arc<ScenarioSolutionTable> {
        &self.catalog
    }

    pub fn ranker(&self) -> &CoarseRanker {
        &self.ranker
    }

    pub fn index(&self) -> &ScenarioIndex {
        &self.index
    }

    pub fn student(&self) -> &StudentModel {
        &self.student
    }

    pub fn hybrid(&self) -> Option<&HybridModel> {
        self.hybrid.as_ref().map(|(h, _)| h)
    }

    /// Schema sessions' attributes are encoded with, when a hybrid model
    /// is loaded.
    pub fn aspect_schema(&self) -> Option<&AspectSchema> {
        self.hybrid().map(|h| &h.config().aspect_schema)
    }

    pub fn encode_aspects(&self, attributes: &Attributes) -> Result<Option<AspectFeatureVector>, ServiceError> {
        match self.aspect_schema() {
            Some(schema) => Ok(Some(schema.encode(attributes).map_err(|e| ServiceError::Validation(e.to_string()))?)),
            None => Ok(None),
        }
    }

    /// Coarse top-K, fine scoring (hybrid when aspects are given and a
    /// hybrid model is loaded), then threshold and cap.
    pub fn recognize(
        &self,
        text: &str,
        aspects: Option<&AspectFeatureVector>,
        config: &RecommendConfig,
    ) -> Result<Recognition, ServiceError> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(ServiceError::Validation("utterance has no tokens".into()));
        }
        let coarse = self.index.top_k_vector(&self.ranker.represent_tokens(&tokens).values, config.k)?;
        let (scores, model) = match (aspects, &self.hybrid) {
            (Some(a), Some((h, cache))) => {
                let u = h.encode_many(&[&tokens])?.remove(0);
                let cands: Vec<&[f64]> = coarse.iter().map(|(id, _)| cache.reprs[id].as_slice()).collect();
                (h.score_encoded(&u, &cands, a)?, ScoringModel::Hybrid)
            }
            _ => {
                let u = self.student.encode_many(&[&tokens])?.remove(0);
                let cands: Vec<&[f64]> = coarse.iter().map(|(id, _)| self.student_cache.reprs[id].as_slice()).collect();
                (self.student.score_encoded(&u, &cands)?, ScoringModel::Student)
            }
        };
        // keep scores strictly inside (0, 1) so a threshold of 1 never passes
        let scores = scores.into_iter().map(|p| p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON));
        let mut scored: Vec<(ScenarioId, f64)> = coarse.iter().map(|(id, _)| id.clone()).zip(scores).collect();
        scored.sort_by(crate::coarse::rank_order);
        let shown = scored.iter().filter(|(_, s)| *s >= config.threshold).take(config.max_shown).cloned().collect();
        Ok(Recognition { coarse, scored, shown, model })
    }
}
