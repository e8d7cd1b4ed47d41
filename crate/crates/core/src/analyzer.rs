use std::sync::Arc;

use crate::embeddings::{
    Embedding, EmbeddingProvider, HashingProvider, SentimentProvider, SEMANTIC_DIM, SENTIMENT_DIM,
};
use crate::error::{Error, Result};
use crate::text::{self, NormalizedQuery, Stopwords};

/// Normalization plus the two embedding providers. Every stage that turns
/// text into features goes through one shared analyzer.
#[derive(Clone)]
pub struct Analyzer {
    stopwords: Stopwords,
    semantic: Arc<dyn EmbeddingProvider>,
    sentiment: Arc<dyn EmbeddingProvider>,
}

impl std::fmt::Debug for Analyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Analyzer")
            .field("stopwords", &self.stopwords.len())
            .field("semantic", &self.semantic.name())
            .field("sentiment", &self.sentiment.name())
            .finish()
    }
}

impl Default for Analyzer {
    fn default() -> Self {
        Self {
            stopwords: Stopwords::bundled(),
            semantic: Arc::new(HashingProvider::semantic()),
            sentiment: Arc::new(SentimentProvider::default()),
        }
    }
}

/// Per-query features computed once and shared by all pipeline stages.
#[derive(Debug, Clone)]
pub struct QueryFeatures {
    pub normalized: NormalizedQuery,
    pub semantic: Embedding,
    pub sentiment: Embedding,
}

impl Analyzer {
    pub fn new(
        stopwords: Stopwords,
        semantic: Arc<dyn EmbeddingProvider>,
        sentiment: Arc<dyn EmbeddingProvider>,
    ) -> Result<Self> {
        for (p, dim) in [(&semantic, SEMANTIC_DIM), (&sentiment, SENTIMENT_DIM)] {
            if p.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: p.dim(),
                });
            }
        }
        Ok(Self {
            stopwords,
            semantic,
            sentiment,
        })
    }

    pub fn stopwords(&self) -> &Stopwords {
        &self.stopwords
    }

    pub fn semantic_provider(&self) -> &dyn EmbeddingProvider {
        self.semantic.as_ref()
    }

    pub fn sentiment_provider(&self) -> &dyn EmbeddingProvider {
        self.sentiment.as_ref()
    }

    pub fn normalize(&self, text: &str) -> NormalizedQuery {
        text::normalize_text(text, &self.stopwords)
    }

    pub fn semantic(&self, q: &NormalizedQuery) -> Embedding {
        self.semantic.embed(q)
    }

    pub fn sentiment(&self, q: &NormalizedQuery) -> Embedding {
        self.sentiment.embed(q)
    }

    pub fn analyze(&self, text: &str) -> QueryFeatures {
        let normalized = self.normalize(text);
        QueryFeatures {
            semantic: self.semantic(&normalized),
            sentiment: self.sentiment(&normalized),
            normalized,
        }
    }
}
