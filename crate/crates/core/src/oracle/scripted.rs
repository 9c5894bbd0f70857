use std::sync::atomic::{AtomicU64, Ordering};

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FailureHint, Oracle, OracleError, RankingResult};
use crate::envkit::{TaskId, Trajectory, LIFT_SUCCESS_HEIGHT, PUSH_SUCCESS_THRESHOLD};
use crate::reward::{Feature, RewardFeatures, RewardTemplate};

/// How close final-state scores must be to share a cluster, and how far
/// apart cluster representatives must be to be ranked separately.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    /// Maximum score gap between a cluster's best member and any other.
    pub width: f64,
    /// Adjacent clusters whose representatives differ by at most this
    /// much are merged.
    pub delta: f64,
}

impl ClusterConfig {
    pub fn for_task(task: TaskId) -> Self {
        match task {
            TaskId::Touch | TaskId::Push => Self {
                width: 0.014,
                delta: 0.005,
            },
            TaskId::Grasp => Self {
                width: 0.005,
                delta: 0.002,
            },
        }
    }
}

/// Task success judged from final-state features alone.
pub fn success_from_features(task: TaskId, f: &RewardFeatures) -> bool {
    match task {
        TaskId::Touch => f.flag(Feature::Contacted).unwrap_or(false),
        TaskId::Grasp => {
            f.flag(Feature::Contacted).unwrap_or(false)
                && f.get(Feature::ObjectHeight).is_some_and(|h| h > LIFT_SUCCESS_HEIGHT)
        }
        TaskId::Push => f
            .get(Feature::DistanceToGoal)
            .is_some_and(|d| d <= PUSH_SUCCESS_THRESHOLD),
    }
}

/// Progress toward the task goal at a final state; higher is better.
pub fn ground_truth_score(task: TaskId, f: &RewardFeatures) -> f64 {
    let get = |feat| f.get(feat).unwrap_or(0.0);
    match task {
        TaskId::Touch => {
            let bonus = if f.flag(Feature::Contacted).unwrap_or(false) { 1.0 } else { 0.0 };
            bonus - get(Feature::DistanceToTarget)
        }
        TaskId::Grasp => get(Feature::ObjectHeight),
        TaskId::Push => -get(Feature::DistanceToGoal),
    }
}

/// Ground-truth ranker with optional Boltzmann-rational ordering noise.
#[derive(Debug)]
pub struct ScriptedOracle {
    pub touch: ClusterConfig,
    pub grasp: ClusterConfig,
    pub push: ClusterConfig,
    /// Multiplier applied to recommended parameters in failure analysis.
    pub hint_factor: f64,
    /// Converts score units into the utility units used by the noise model.
    pub score_scale: f64,
    /// Rationality coefficient; `None` ranks without noise.
    pub beta: Option<f64>,
    seed: u64,
    calls: AtomicU64,
}

impl Default for ScriptedOracle {
    fn default() -> Self {
        Self::new()
    }
}

impl ScriptedOracle {
    pub fn new() -> Self {
        Self {
            touch: ClusterConfig::for_task(TaskId::Touch),
            grasp: ClusterConfig::for_task(TaskId::Grasp),
            push: ClusterConfig::for_task(TaskId::Push),
            hint_factor: 2.0,
            score_scale: 1.0,
            beta: None,
            seed: 0,
            calls: AtomicU64::new(0),
        }
    }

    /// An oracle whose `rank` samples cluster order with rationality `beta`.
    pub fn noisy(beta: f64, score_scale: f64, seed: u64) -> Self {
        Self {
            beta: Some(beta),
            score_scale,
            seed,
            ..Self::new()
        }
    }

    pub fn cluster_config(&self, task: TaskId) -> ClusterConfig {
        match task {
            TaskId::Touch => self.touch,
            TaskId::Grasp => self.grasp,
            TaskId::Push => self.push,
        }
    }

    /// Noise-free ranking: successes first, remaining samples clustered by
    /// score and ordered best first.
    pub fn rank_exact(&self, trajs: &[Trajectory], task: TaskId) -> Result<RankingResult, OracleError> {
        if trajs.len() < 2 {
            return Err(OracleError::TooFew(trajs.len()));
        }
        let mut successes = Vec::new();
        let mut scored = Vec::new();
        for (i, t) in trajs.iter().enumerate() {
            let f = t.final_features();
            if success_from_features(task, f) {
                successes.push(i);
            } else {
                scored.push((i, ground_truth_score(task, f)));
            }
        }
        Ok(RankingResult {
            successes,
            clusters: cluster(&scored, self.cluster_config(task)),
        })
    }

    /// Like [`rank_exact`](Self::rank_exact), but the order of clusters is
    /// drawn from a Plackett-Luce model with utilities
    /// `beta * score_scale * score` of each representative.
    pub fn rank_noisy(
        &self,
        trajs: &[Trajectory],
        task: TaskId,
        beta: f64,
        seed: u64,
    ) -> Result<RankingResult, OracleError> {
        let mut exact = self.rank_exact(trajs, task)?;
        if beta.is_infinite() {
            return Ok(exact);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keyed: Vec<(f64, Vec<usize>)> = exact
            .clusters
            .drain(..)
            .map(|c| {
                let s = ground_truth_score(task, trajs[c[0]].final_features());
                let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                (beta * self.score_scale * s - (-u.ln()).ln(), c)
            })
            .collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0));
        exact.clusters = keyed.into_iter().map(|(_, c)| c).collect();
        Ok(exact)
    }

    /// Per-sample blocking features, following the task's stages: reach
    /// and contact first, then the task-specific goal.
    fn blocking_features(task: TaskId, t: &Trajectory) -> &'static [Feature] {
        let last = t.final_features();
        if success_from_features(task, last) {
            return &[];
        }
        let contacted_now = last.flag(Feature::Contacted).unwrap_or(false);
        match task {
            TaskId::Touch => &[Feature::DistanceToTarget, Feature::ForceMagnitude],
            TaskId::Grasp if !contacted_now => &[
                Feature::DistanceToTarget,
                Feature::Contacted,
                Feature::ObjectHeight,
            ],
            TaskId::Grasp => &[Feature::ObjectHeight],
            TaskId::Push => {
                let ever = t
                    .features
                    .iter()
                    .any(|f| f.flag(Feature::Contacted).unwrap_or(false));
                if ever {
                    &[Feature::DistanceToGoal]
                } else {
                    &[Feature::DistanceToTarget]
                }
            }
        }
    }
}

/// Greedy clustering of `(index, score)` pairs, best first, followed by a
/// merge of adjacent clusters whose representatives are within `delta`.
fn cluster(scored: &[(usize, f64)], cfg: ClusterConfig) -> Vec<Vec<usize>> {
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut clusters: Vec<(f64, Vec<usize>)> = Vec::new();
    for (i, s) in sorted {
        match clusters.last_mut() {
            Some((anchor, members)) if *anchor - s <= cfg.width => members.push(i),
            _ => clusters.push((s, vec![i])),
        }
    }
    let mut merged: Vec<(f64, Vec<usize>)> = Vec::new();
    for (s, members) in clusters {
        match merged.last_mut() {
            Some((anchor, prev)) if *anchor - s <= cfg.delta => prev.extend(members),
            _ => merged.push((s, members)),
        }
    }
    merged.into_iter().map(|(_, c)| c).collect()
}

impl Oracle for ScriptedOracle {
    fn rank(
        &self,
        trajs: &[Trajectory],
        task: TaskId,
        _template: &RewardTemplate,
    ) -> Result<RankingResult, OracleError> {
        match self.beta {
            None => self.rank_exact(trajs, task),
            Some(beta) => {
                let call = self.calls.fetch_add(1, Ordering::Relaxed);
                let seed = self.seed ^ call.wrapping_mul(0x9E37_79B9_7F4A_7C15);
                self.rank_noisy(trajs, task, beta, seed)
            }
        }
    }

    /// Counts, over failing samples, how often each non-penalty term acts on
    /// a blocking feature, and recommends scaling the most-mentioned
    /// parameters by `hint_factor`.
    fn analyze_failure(
        &self,
        trajs: &[Trajectory],
        template: &RewardTemplate,
        task: TaskId,
    ) -> Result<FailureHint, OracleError> {
        let mut counts: IndexMap<&str, usize> = IndexMap::new();
        for t in trajs {
            let blocked = Self::blocking_features(task, t);
            let mut mentioned: Vec<&str> = Vec::new();
            for term in template.terms() {
                if !term.is_penalty()
                    && blocked.contains(&term.feature)
                    && !mentioned.contains(&term.param.as_str())
                {
                    mentioned.push(&term.param);
                }
            }
            for p in mentioned {
                *counts.entry(p).or_default() += 1;
            }
        }
        let Some(&max) = counts.values().max() else {
            return Err(OracleError::InvalidHint("no failing sample to analyze".into()));
        };
        let mut hint = IndexMap::new();
        for name in template.param_names() {
            if counts.get(name) == Some(&max) {
                let v = template.param(name).expect("declared");
                hint.insert(name.to_string(), v * self.hint_factor);
            }
        }
        Ok(FailureHint(hint))
    }
}
