//! Reward-parameter updates from oracle rankings.
//!
//! Pairs on which the current reward disagrees with the oracle are combined
//! with an equal number of agreeing pairs, a Bradley-Terry posterior over
//! the parameters is sampled inside a trust region for each step size in a
//! grid, and the candidate that removes the most disagreements is kept.

mod mcmc;

pub use mcmc::{mh_fit, McmcConfig, MhResult};

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envkit::{TaskId, Trajectory};
use crate::oracle::{FailureHint, Oracle, OracleError, RankingResult};
use crate::reward::{CompiledTemplate, RewardTemplate, TemplateError};

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("preference dataset is empty")]
    EmptyDataset,
    #[error("rationality coefficient must be positive, got {0}")]
    InvalidBeta(f64),
    #[error("trust-region grid must hold positive sizes")]
    InvalidGrid,
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Boltzmann-rational preference model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoltzmannModel {
    pub beta: f64,
}

impl Default for BoltzmannModel {
    fn default() -> Self {
        Self { beta: 0.9 }
    }
}

impl BoltzmannModel {
    pub fn new(beta: f64) -> Result<Self, AlignError> {
        if beta > 0.0 && beta.is_finite() {
            Ok(Self { beta })
        } else {
            Err(AlignError::InvalidBeta(beta))
        }
    }

    /// Probability that a trajectory with score `s_i` is preferred over one
    /// with score `s_j`.
    pub fn prob(&self, s_i: f64, s_j: f64) -> f64 {
        self.log_prob(s_i, s_j).exp()
    }

    /// `log P[i ≻ j] = -softplus(-β (s_i - s_j))`.
    pub fn log_prob(&self, s_i: f64, s_j: f64) -> f64 {
        -softplus(-self.beta * (s_i - s_j))
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Sum of rewards over the states reached by a trajectory's actions.
pub fn trajectory_score(template: &RewardTemplate, traj: &Trajectory) -> f64 {
    traj.reward_features().iter().map(|f| template.evaluate(f)).sum()
}

fn compiled_score(c: &CompiledTemplate, theta: &[f64], traj: &Trajectory) -> f64 {
    traj.reward_features().iter().map(|f| c.evaluate(theta, f)).sum()
}

pub fn pref_prob(
    model: &BoltzmannModel,
    template: &RewardTemplate,
    ti: &Trajectory,
    tj: &Trajectory,
) -> f64 {
    model.prob(trajectory_score(template, ti), trajectory_score(template, tj))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairSource {
    Discrepancy,
    Agreement,
}

/// `better ≻ worse`, as indices into the feedback batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub better: usize,
    pub worse: usize,
    pub source: PairSource,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDataset {
    pub pairs: Vec<PreferencePair>,
}

impl PreferenceDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn count(&self, source: PairSource) -> usize {
        self.pairs.iter().filter(|p| p.source == source).count()
    }
}

/// Negative log-likelihood of the dataset.
pub fn loss(
    model: &BoltzmannModel,
    template: &RewardTemplate,
    trajs: &[Trajectory],
    data: &PreferenceDataset,
) -> Result<f64, AlignError> {
    if data.is_empty() {
        return Err(AlignError::EmptyDataset);
    }
    let scores: Vec<f64> = trajs.iter().map(|t| trajectory_score(template, t)).collect();
    Ok(loss_from_scores(model, &scores, data))
}

fn loss_from_scores(model: &BoltzmannModel, scores: &[f64], data: &PreferenceDataset) -> f64 {
    -data
        .pairs
        .iter()
        .map(|p| model.log_prob(scores[p.better], scores[p.worse]))
        .sum::<f64>()
}

/// Analytic gradient of [`loss`] with respect to the template's linear
/// weights, returned as `(parameter index, derivative)` pairs.
pub fn loss_gradient(
    model: &BoltzmannModel,
    template: &RewardTemplate,
    trajs: &[Trajectory],
    data: &PreferenceDataset,
) -> Result<Vec<(usize, f64)>, AlignError> {
    if data.is_empty() {
        return Err(AlignError::EmptyDataset);
    }
    let c = template.compile();
    let linear = c.linear_params();
    let scores: Vec<f64> = trajs.iter().map(|t| trajectory_score(template, t)).collect();
    let coefs: Vec<Vec<f64>> = trajs
        .iter()
        .map(|t| {
            let mut sum = vec![0.0; c.num_params()];
            for f in t.reward_features() {
                for (s, v) in sum.iter_mut().zip(c.linear_coefficients(f)) {
                    *s += v;
                }
            }
            sum
        })
        .collect();
    let mut grad = vec![0.0; linear.len()];
    for p in &data.pairs {
        let prob = model.prob(scores[p.better], scores[p.worse]);
        for (g, &k) in grad.iter_mut().zip(&linear) {
            *g -= model.beta * (1.0 - prob) * (coefs[p.better][k] - coefs[p.worse][k]);
        }
    }
    Ok(linear.into_iter().zip(grad).collect())
}

/// Cross-tier pairs split by whether the template's scores agree with the
/// oracle order. Ties count as disagreement.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub neg: Vec<(usize, usize)>,
    pub agreed: Vec<(usize, usize)>,
}

/// Oracle-ordered tiers used for pairs: all successes form the top tier,
/// then each cluster is represented by its first member.
fn pair_tiers(ranking: &RankingResult) -> Vec<Vec<usize>> {
    let mut tiers = Vec::new();
    if !ranking.successes.is_empty() {
        tiers.push(ranking.successes.clone());
    }
    tiers.extend(ranking.representatives().into_iter().map(|r| vec![r]));
    tiers
}

fn discrepancy_from_scores(ranking: &RankingResult, scores: &[f64]) -> Discrepancy {
    let tiers = pair_tiers(ranking);
    let mut out = Discrepancy::default();
    for (i, hi) in tiers.iter().enumerate() {
        for lo in &tiers[i + 1..] {
            for &a in hi {
                for &b in lo {
                    if scores[a] > scores[b] {
                        out.agreed.push((a, b));
                    } else {
                        out.neg.push((a, b));
                    }
                }
            }
        }
    }
    out
}

pub fn compute_discrepancy(
    template: &RewardTemplate,
    ranking: &RankingResult,
    trajs: &[Trajectory],
) -> Discrepancy {
    let scores: Vec<f64> = trajs.iter().map(|t| trajectory_score(template, t)).collect();
    discrepancy_from_scores(ranking, &scores)
}

/// All discrepancy pairs plus as many randomly chosen agreeing pairs,
/// shuffled.
pub fn build_dataset(disc: &Discrepancy, seed: u64) -> PreferenceDataset {
    if disc.neg.is_empty() {
        return PreferenceDataset::default();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs: Vec<PreferencePair> = disc
        .neg
        .iter()
        .map(|&(a, b)| PreferencePair {
            better: a,
            worse: b,
            source: PairSource::Discrepancy,
        })
        .collect();
    let take = disc.neg.len().min(disc.agreed.len());
    pairs.extend(disc.agreed.choose_multiple(&mut rng, take).map(|&(a, b)| PreferencePair {
        better: a,
        worse: b,
        source: PairSource::Agreement,
    }));
    pairs.shuffle(&mut rng);
    PreferenceDataset { pairs }
}

/// Per-parameter bounds `[max(lo, v - ω), min(hi, v + ω)]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrustRegion {
    pub omega: f64,
    pub bounds: Vec<(f64, f64)>,
}

impl TrustRegion {
    pub fn new(template: &RewardTemplate, omega: f64) -> Self {
        let bounds = template
            .params()
            .iter()
            .map(|(name, &v)| {
                let r = template.range(name).expect("every parameter has a range");
                (r.min.max(v - omega), r.max.min(v + omega))
            })
            .collect();
        Self { omega, bounds }
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta
            .iter()
            .zip(&self.bounds)
            .all(|(&x, &(lo, hi))| x >= lo && x <= hi)
    }

    pub fn clip(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(&self.bounds)
            .map(|(&x, &(lo, hi))| x.clamp(lo, hi))
            .collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.bounds.iter().map(|(lo, hi)| hi - lo).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignConfig {
    pub beta: f64,
    pub grid: Vec<f64>,
    pub mcmc: McmcConfig,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            beta: 0.9,
            grid: vec![1.0, 3.0, 5.0, 10.0],
            mcmc: McmcConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateKind {
    Init,
    Tune,
    Bayesian,
    NoOp,
}

impl UpdateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            UpdateKind::Init => "init",
            UpdateKind::Tune => "tune",
            UpdateKind::Bayesian => "bayesian",
            UpdateKind::NoOp => "no-op",
        }
    }
}

/// Outcome of fitting one trust-region size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub omega: f64,
    pub region: Vec<(f64, f64)>,
    pub sample_min: Vec<f64>,
    pub sample_max: Vec<f64>,
    pub estimate: Vec<f64>,
    pub discrepancy: usize,
    pub converged: bool,
    /// Relative loss change over the tail of the chain; absent when no
    /// proposal was accepted.
    pub loss_change: Option<f64>,
    pub acceptance_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub iteration: usize,
    pub kind: UpdateKind,
    pub old: IndexMap<String, f64>,
    pub new: IndexMap<String, f64>,
    pub omega: Option<f64>,
    pub discrepancy_before: usize,
    pub discrepancy_after: usize,
    pub accepted: bool,
    pub successes: usize,
    pub batch_size: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<CandidateReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hint: Option<FailureHint>,
}

impl UpdateReport {
    pub fn init(template: &RewardTemplate) -> Self {
        Self {
            iteration: 0,
            kind: UpdateKind::Init,
            old: template.params().clone(),
            new: template.params().clone(),
            omega: None,
            discrepancy_before: 0,
            discrepancy_after: 0,
            accepted: true,
            successes: 0,
            batch_size: 0,
            candidates: Vec::new(),
            hint: None,
        }
    }
}

/// Feedback for one alignment step.
pub struct AlignInput<'a> {
    pub iteration: usize,
    pub task: TaskId,
    pub template: &'a RewardTemplate,
    /// Batch shown to the oracle.
    pub trajs: &'a [Trajectory],
    pub seed: u64,
}

/// One outer-loop iteration. Returns the template to use next and a report
/// of what happened.
pub fn align_step(
    input: &AlignInput<'_>,
    oracle: &dyn Oracle,
    config: &AlignConfig,
) -> Result<(RewardTemplate, UpdateReport), AlignError> {
    let model = BoltzmannModel::new(config.beta)?;
    if config.grid.is_empty() || config.grid.iter().any(|w| !(*w > 0.0)) {
        return Err(AlignError::InvalidGrid);
    }
    let template = input.template;
    let trajs = input.trajs;
    let ranking = oracle.rank(trajs, input.task, template)?;
    ranking.validate(trajs.len())?;
    let disc = compute_discrepancy(template, &ranking, trajs);
    let mut report = UpdateReport {
        iteration: input.iteration,
        kind: UpdateKind::NoOp,
        old: template.params().clone(),
        new: template.params().clone(),
        omega: None,
        discrepancy_before: disc.neg.len(),
        discrepancy_after: disc.neg.len(),
        accepted: false,
        successes: ranking.successes.len(),
        batch_size: trajs.len(),
        candidates: Vec::new(),
        hint: None,
    };

    if disc.neg.is_empty() {
        if !ranking.successes.is_empty() {
            return Ok((template.clone(), report));
        }
        let hint = oracle.analyze_failure(trajs, template, input.task)?;
        hint.validate(template)?;
        let chosen = choose_tune_candidate(&model, template, &hint, &config.grid, trajs, &disc.agreed)?;
        report.kind = UpdateKind::Tune;
        report.accepted = true;
        report.new = chosen.params().clone();
        report.hint = Some(hint);
        report.discrepancy_after = compute_discrepancy(&chosen, &ranking, trajs).neg.len();
        return Ok((chosen, report));
    }

    report.kind = UpdateKind::Bayesian;
    let data = build_dataset(&disc, input.seed);
    let compiled = template.compile();
    let current = template.values();
    let candidates: Vec<CandidateReport> = config
        .grid
        .par_iter()
        .enumerate()
        .map(|(k, &omega)| {
            let region = TrustRegion::new(template, omega);
            let seed = input.seed.wrapping_add((k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let fit = mh_fit(&compiled, trajs, &data, &region, &current, &model, &config.mcmc, seed);
            let scores: Vec<f64> = trajs
                .iter()
                .map(|t| compiled_score(&compiled, &fit.estimate, t))
                .collect();
            CandidateReport {
                omega,
                sample_min: fit.sample_min(),
                sample_max: fit.sample_max(),
                region: region.bounds,
                discrepancy: discrepancy_from_scores(&ranking, &scores).neg.len(),
                converged: fit.converged,
                loss_change: fit.loss_change.is_finite().then_some(fit.loss_change),
                acceptance_rate: fit.acceptance_rate,
                estimate: fit.estimate,
            }
        })
        .collect();

    let best = candidates
        .iter()
        .filter(|c| c.converged)
        .min_by(|a, b| {
            a.discrepancy
                .cmp(&b.discrepancy)
                .then(l2(&a.estimate, &current).total_cmp(&l2(&b.estimate, &current)))
        });
    let mut next = template.clone();
    if let Some(best) = best {
        report.omega = Some(best.omega);
        report.discrepancy_after = best.discrepancy;
        if best.discrepancy < disc.neg.len() {
            next = template.with_values(&best.estimate)?;
            report.accepted = true;
            report.new = next.params().clone();
        }
    }
    report.candidates = candidates;
    Ok((next, report))
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Candidates are, for each step size ω, a move of ω from the current
/// value toward each hinted value, plus the hinted values themselves when
/// no further away than the largest ω. The candidate under
/// which the oracle's agreed pairs are most likely wins, i.e. the one that
/// separates preferred from rejected behavior most; ties go to the
/// candidate nearest the current values.
fn choose_tune_candidate(
    model: &BoltzmannModel,
    template: &RewardTemplate,
    hint: &FailureHint,
    grid: &[f64],
    trajs: &[Trajectory],
    agreed: &[(usize, usize)],
) -> Result<RewardTemplate, AlignError> {
    let reach = grid.iter().copied().fold(0.0, f64::max);
    let full = template.set_params(hint.0.iter().map(|(k, &v)| (k.as_str(), v)))?;
    let within = hint
        .0
        .iter()
        .all(|(k, &v)| (v - template.param(k).expect("validated")).abs() <= reach);
    let mut candidates = if within { vec![full] } else { Vec::new() };
    for &omega in grid {
        let moved = hint.0.iter().map(|(k, &target)| {
            let v = template.param(k).expect("validated");
            let step = if target > v { omega } else if target < v { -omega } else { 0.0 };
            let r = template.range(k).expect("validated");
            (k.as_str(), r.clip(v + step))
        });
        let c = template.set_params(moved)?;
        if !candidates.contains(&c) {
            candidates.push(c);
        }
    }
    let data = PreferenceDataset {
        pairs: agreed
            .iter()
            .map(|&(better, worse)| PreferencePair {
                better,
                worse,
                source: PairSource::Agreement,
            })
            .collect(),
    };
    if data.is_empty() {
        return Ok(candidates.swap_remove(0));
    }
    let current = template.values();
    let mut scored = Vec::with_capacity(candidates.len());
    for c in candidates {
        let l = loss(model, &c, trajs, &data)?;
        scored.push((l, l2(&c.values(), &current), c));
    }
    let best = scored
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)))
        .expect("the grid is not empty");
    Ok(best.2)
}
