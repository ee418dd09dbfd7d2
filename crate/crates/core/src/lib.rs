//! Event-schema analytics for supply-chain disruption analysis.

pub mod embedding;
pub mod induction;
pub mod ingest;
pub mod matcher;
pub mod merge;
pub mod metric;
pub mod pipeline;
pub mod predictor;
pub mod schema;
pub mod store;
