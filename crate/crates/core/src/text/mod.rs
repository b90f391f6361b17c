//! Tokenization, vocabulary, word vectors and tf-idf statistics.

mod embedding;
mod skipgram;
mod tfidf;
mod vocab;

pub use embedding::{EmbeddedSequence, EmbeddingTable};
pub use skipgram::{train_skipgram, SkipGramConfig};
pub use tfidf::TfIdfModel;
pub use vocab::{pad_ids, Vocabulary, PAD, PAD_TOKEN, UNK, UNK_TOKEN};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Vocabulary, word vectors and tf-idf statistics fitted on one corpus.
#[derive(Clone, Debug)]
pub struct TextArtifacts {
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingTable,
    pub tfidf: TfIdfModel,
}

impl TextArtifacts {
    pub fn fit<S: AsRef<str>>(texts: &[S], min_count: u64, skipgram: &SkipGramConfig) -> Result<Self, TextError> {
        let docs: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t.as_ref())).collect();
        let vocab = Vocabulary::build(docs.iter().map(Vec::as_slice), min_count);
        let embeddings = train_skipgram(&docs, &vocab, skipgram)?;
        let tfidf = TfIdfModel::fit(docs.iter().map(Vec::as_slice))?;
        Ok(Self { vocab, embeddings, tfidf })
    }
}

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase().split(|c: char| !c.is_alphanumeric()).filter(|s| !s.is_empty()).map(String::from).collect()
}
