//! Trajectory ranking and failure analysis.
//!
//! [`ScriptedOracle`] ranks by a ground-truth progress metric and is fully
//! deterministic unless asked to sample a noisy ranking. [`LlmOracle`]
//! sends the same questions to a chat-completion endpoint.

mod llm;
mod scripted;

pub use llm::{parse_failure_hint, parse_ranking, LlmConfig, LlmOracle};
pub use scripted::{ground_truth_score, success_from_features, ClusterConfig, ScriptedOracle};

use std::collections::HashSet;
use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envkit::{TaskId, Trajectory};
use crate::reward::{Feature, RewardTemplate, TermKind};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("need at least 2 trajectories to rank, got {0}")]
    TooFew(usize),
    #[error("invalid ranking: {0}")]
    InvalidRanking(String),
    #[error("invalid hint: {0}")]
    InvalidHint(String),
    #[error("could not parse oracle response: {reason}\n--- response ---\n{raw}")]
    Parse { reason: String, raw: String },
    #[error("oracle request failed: {0}")]
    Http(String),
    #[error("oracle config: {0}")]
    Config(String),
}

/// Oracle ranking of a feedback batch. Indices refer to the input order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingResult {
    pub successes: Vec<usize>,
    /// Best cluster first; the first member of each cluster represents it.
    pub clusters: Vec<Vec<usize>>,
}

impl RankingResult {
    /// Checks that indices are in range and appear at most once, and that
    /// no cluster is empty.
    pub fn validate(&self, n: usize) -> Result<(), OracleError> {
        let mut seen = HashSet::new();
        for &i in self.successes.iter().chain(self.clusters.iter().flatten()) {
            if i >= n {
                return Err(OracleError::InvalidRanking(format!(
                    "index {i} out of range for {n} samples"
                )));
            }
            if !seen.insert(i) {
                return Err(OracleError::InvalidRanking(format!("index {i} appears twice")));
            }
        }
        if self.clusters.iter().any(Vec::is_empty) {
            return Err(OracleError::InvalidRanking("empty cluster".into()));
        }
        Ok(())
    }

    pub fn representatives(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c[0]).collect()
    }

    /// Ordered tiers: successes (if any) first, then each cluster.
    pub fn tiers(&self) -> Vec<&[usize]> {
        let mut out = Vec::with_capacity(self.clusters.len() + 1);
        if !self.successes.is_empty() {
            out.push(self.successes.as_slice());
        }
        out.extend(self.clusters.iter().map(Vec::as_slice));
        out
    }
}

/// Recommended parameter values keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FailureHint(pub IndexMap<String, f64>);

impl FailureHint {
    pub fn validate(&self, template: &RewardTemplate) -> Result<(), OracleError> {
        if self.0.is_empty() {
            return Err(OracleError::InvalidHint("no recommendations".into()));
        }
        for (name, v) in &self.0 {
            if template.param(name).is_none() {
                return Err(OracleError::InvalidHint(format!("unknown parameter `{name}`")));
            }
            if !v.is_finite() {
                return Err(OracleError::InvalidHint(format!("`{name}` is not finite")));
            }
        }
        Ok(())
    }
}

pub trait Oracle: Send + Sync {
    fn rank(
        &self,
        trajs: &[Trajectory],
        task: TaskId,
        template: &RewardTemplate,
    ) -> Result<RankingResult, OracleError>;

    fn analyze_failure(
        &self,
        trajs: &[Trajectory],
        template: &RewardTemplate,
        task: TaskId,
    ) -> Result<FailureHint, OracleError>;
}

fn format_value(feature: Feature, v: f64) -> String {
    if feature.is_flag() {
        if v >= 0.5 { "True" } else { "False" }.to_string()
    } else {
        format!("{v:.4}")
    }
}

/// One line per sample listing the template's features at the final state,
/// e.g. `  - data sample 0: distance_to_target = 0.0235, collision_detected = False.`
pub fn describe_samples(trajs: &[Trajectory], template: &RewardTemplate) -> String {
    let features = template.referenced_features();
    let mut out = String::new();
    for (i, t) in trajs.iter().enumerate() {
        let f = t.final_features();
        let parts: Vec<String> = features
            .iter()
            .filter_map(|&feat| f.get(feat).map(|v| format!("{feat} = {}", format_value(feat, v))))
            .collect();
        let _ = writeln!(out, "  - data sample {i}: {}.", parts.join(", "));
    }
    out
}

/// Python-style rendering of a template, as shown to an LLM oracle.
pub fn render_function(template: &RewardTemplate) -> String {
    let args: Vec<String> = template
        .params()
        .iter()
        .map(|(k, v)| format!("{k}={v:?}"))
        .collect();
    let mut out = format!("def get_reward(obs, {}):\n", args.join(", "));
    let mut names = Vec::new();
    for (i, t) in template.terms().iter().enumerate() {
        let name = format!("term_{i}");
        let sign = if t.sign.factor() < 0.0 { "-" } else { "" };
        let threshold = t
            .aux_param
            .clone()
            .or_else(|| t.threshold.map(|x| format!("{x:?}")))
            .unwrap_or_default();
        let compare = t.compare.map_or(">", |c| c.as_str());
        let line = match t.kind {
            TermKind::WeightedDistance => match t.offset {
                Some(o) => format!("{sign}{} * max(0, {} - {o:?})", t.param, t.feature),
                None => format!("{sign}{} * {}", t.param, t.feature),
            },
            TermKind::ThresholdBonus | TermKind::ThresholdPenalty => format!(
                "{sign}{} if {} {compare} {threshold} else 0",
                t.param, t.feature
            ),
            TermKind::ConditionalConstant | TermKind::CollisionPenalty => {
                format!("{sign}{} if {} else 0", t.param, t.feature)
            }
        };
        let _ = writeln!(out, "    {name} = {line}");
        names.push(name);
    }
    let _ = writeln!(out, "    return {}", names.join(" + "));
    out
}
