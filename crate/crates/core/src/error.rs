//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

use crate::backend::BackendError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate model id `{0}` in registry")]
    DuplicateModelId(String),

    #[error("model `{model}` references unknown base_id `{base_id}`")]
    DanglingBaseId { model: String, base_id: String },

    #[error("model `{model}` has invalid base link `{base_id}`: {reason}")]
    InvalidBaseLink {
        model: String,
        base_id: String,
        reason: String,
    },

    #[error("seed group `{group}` is inconsistent: {reason}")]
    SeedGroupMismatch { group: String, reason: String },

    #[error("model card `{model}` is invalid: {reason}")]
    InvalidModelCard { model: String, reason: String },

    #[error("{count} minimal pair(s) violate the one-word-difference constraint: {ids:?}")]
    MinimalityViolations { count: usize, ids: Vec<String> },

    #[error("stimulus item `{item}` is invalid: {reason}")]
    InvalidStimulus { item: String, reason: String },

    #[error("lexicon is invalid: {0}")]
    InvalidLexicon(String),

    #[error("word `{0}` is not present in the frequency lexicon")]
    WordNotInLexicon(String),

    #[error("corpus has only {available} qualifying sentences, {requested} requested")]
    InsufficientSentences { available: usize, requested: usize },

    #[error("template `{template}` is invalid: {reason}")]
    InvalidTemplate { template: String, reason: String },

    #[error("template `{template}` does not apply to item `{item}`: {reason}")]
    TemplateItemMismatch {
        template: String,
        item: String,
        reason: String,
    },

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error("cannot recompute delta: {0}")]
    DeltaRecompute(String),

    #[error("vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("degenerate variance in `{0}`")]
    DegenerateVariance(String),

    #[error("need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("design matrix is rank deficient (column `{0}`)")]
    RankDeficient(String),

    #[error("response vector has a single class; cannot fit logistic model")]
    AllSameClass,

    #[error("unknown reference level `{0}`")]
    UnknownReference(String),

    #[error("label `{0}` is not among the declared levels")]
    UnknownLevel(String),

    #[error("no gold labels exist for dataset `{0}`")]
    MissingGold(String),

    #[error("direct and meta answers cover different item sets for model `{model}` ({direct} vs {meta} items)")]
    ItemSetMismatch {
        model: String,
        direct: usize,
        meta: usize,
    },

    #[error("analysis input is incomplete: {0}")]
    IncompleteScores(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{failed} of {total} score requests failed; first failure: {first}")]
    ScoreFailures {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("analysis error: {0}")]
    Analysis(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code category: 2 validation, 3 backend, 4 analysis.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Backend(_) | Error::ScoreFailures { .. } => 3,
            Error::LengthMismatch { .. }
            | Error::DegenerateVariance(_)
            | Error::InsufficientData { .. }
            | Error::RankDeficient(_)
            | Error::AllSameClass
            | Error::UnknownReference(_)
            | Error::UnknownLevel(_)
            | Error::MissingGold(_)
            | Error::ItemSetMismatch { .. }
            | Error::IncompleteScores(_)
            | Error::DeltaRecompute(_)
            | Error::Analysis(_) => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
