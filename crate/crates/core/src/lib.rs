//! Rare-event text classification: recurrent (GRU/LSTM, stacked,
//! bidirectional, attention) and TF-IDF/LSA/logistic models, plus
//! threshold calibration and catch-rate evaluation under a review budget.

pub mod baseline;
pub mod benchmark;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod model_io;
pub mod numerics;
pub mod preprocess;
pub mod recurrent;
pub mod registry;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
