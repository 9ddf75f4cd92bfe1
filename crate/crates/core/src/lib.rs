//! Measures whether language models "introspect": whether prompted
//! metalinguistic judgments (ΔMeta) predict a model's own string
//! probabilities (ΔDirect) beyond what an equally similar other model
//! predicts, across pairs of score-providing backends.

pub mod analysis;
pub mod backend;
pub mod config;
pub mod deltas;
pub mod error;
pub mod pipeline;
pub mod prompting;
pub mod registry;
pub mod report;
pub mod seeding;
pub mod stats;
pub mod stimuli;

pub use error::{Error, Result};
