pub mod aggregator;
pub mod analyzer;
pub mod chat_domain;
pub mod dataset;
pub mod embeddings;
pub mod error;
pub mod generic;
pub mod intent;
pub mod metrics;
pub mod mining;
pub mod moderation;
pub mod nn;
pub mod pipeline;
pub mod specific;
pub mod store;
pub mod synth;
pub mod text;

pub use analyzer::{Analyzer, QueryFeatures};
pub use error::{Error, Result};
