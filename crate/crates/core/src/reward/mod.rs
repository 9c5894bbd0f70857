//! Parametric reward functions.
//!
//! A [`RewardTemplate`] is a declarative stand-in for generated reward code:
//! an ordered list of additive terms reading named [`Feature`]s, with every
//! tunable number lifted into a named parameter that carries a range. The
//! text format is documented in `templates/README.md`.

mod features;
mod format;
mod template;

pub use features::{extract_features, task_features, Feature, RewardFeatures};
pub use format::{builtin, parse_template, serialize_template, TemplateVariant};
pub use template::{
    Comparison, CompiledTemplate, ParamRange, RewardTemplate, RewardTerm, Sign, TermKind,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("term {term} references undeclared parameter `{name}`")]
    UndeclaredParam { term: usize, name: String },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("parameter `{0}` has no range")]
    MissingRange(String),
    #[error("parameter `{0}` has an invalid range")]
    InvalidRange(String),
    #[error("parameter `{name}` = {value} outside [{min}, {max}]")]
    OutOfRange {
        name: String,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("term {index}: {reason}")]
    InvalidTerm { index: usize, reason: String },
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("features lack `{0}`")]
    MissingFeature(Feature),
    #[error("observation is missing field `{0}`")]
    MissingObservation(&'static str),
    #[error("could not serialize template: {0}")]
    Serialize(String),
}

#[cfg(test)]
mod tests;
