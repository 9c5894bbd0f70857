//! Experiment driver: the outer self-alignment loop around policy learning,
//! run over several seeds, with CSV, JSON and SVG outputs.

mod plot;
mod summary;

pub use plot::{line_chart, Series};
pub use summary::{summarize, summarize_runs, write_summary, MethodSummary, Summary, SummaryPoint};

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{align_step, AlignConfig, AlignError, AlignInput, UpdateKind, UpdateReport};
use crate::envkit::{is_success, rollout, Env, EnvError, TaskId, Trajectory};
use crate::oracle::{LlmConfig, LlmOracle, Oracle, OracleError, ScriptedOracle};
use crate::policy::{LearnerConfig, PolicyState};
use crate::replay::{
    dump_episodes, sample_feedback_trajectories, ReplayBuffer, ReplayError, RewardHistogram,
    DEFAULT_CAPACITY, FEEDBACK_ROLLOUTS,
};
use crate::reward::{
    builtin, parse_template, serialize_template, Feature, RewardTemplate, TemplateError,
    TemplateVariant,
};

/// Seed offset for held-out evaluation episodes, far from training seeds.
const EVAL_SEED_BASE: u64 = 1 << 40;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("runs mix tasks {0} and {1}")]
    MixedTasks(TaskId, TaskId),
    #[error("no runs found")]
    NoRuns,
}

pub(crate) fn io_error(path: &Path, e: impl fmt::Display) -> HarnessError {
    HarnessError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(
    Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum,
)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Oracle-proposed reward, updated by self-alignment.
    SelfAlign,
    /// Oracle-proposed reward with its initial parameters throughout.
    FixedInitial,
    /// Task success indicator as the only reward.
    Sparse,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::SelfAlign, Method::FixedInitial, Method::Sparse];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::SelfAlign => "self-align",
            Method::FixedInitial => "fixed-initial",
            Method::Sparse => "sparse",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleBackend {
    #[default]
    Scripted,
    Llm,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub backend: OracleBackend,
    /// Rationality coefficient for the scripted ranker; absent means
    /// noise-free ranking.
    pub noise_beta: Option<f64>,
    pub llm: LlmConfig,
}

impl OracleConfig {
    pub fn build(&self, seed: u64) -> Result<Box<dyn Oracle>, HarnessError> {
        Ok(match self.backend {
            OracleBackend::Scripted => match self.noise_beta {
                Some(beta) => Box::new(ScriptedOracle::noisy(beta, 1.0, seed)),
                None => Box::new(ScriptedOracle::new()),
            },
            OracleBackend::Llm => Box::new(LlmOracle::new(self.llm.clone())?),
        })
    }
}

/// Learner settings used by experiments unless overridden.
pub fn desk_learner() -> LearnerConfig {
    LearnerConfig {
        lr: 1e-3,
        target_update_every: 1,
        noise_decay_steps: 5000,
        ..LearnerConfig::default()
    }
}

/// Default environment-step budget for a task.
pub fn default_budget(task: TaskId) -> u64 {
    match task {
        TaskId::Touch | TaskId::Grasp => 30_000,
        TaskId::Push => 60_000,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub task: TaskId,
    pub method: Method,
    /// Number of seeds.
    pub seeds: u64,
    pub first_seed: u64,
    /// Environment steps per run; the task default when absent.
    pub budget: Option<u64>,
    /// Environment steps between evaluations and reward updates.
    pub feedback_period: u64,
    pub eval_episodes: usize,
    /// Template file replacing the built-in proposed template.
    pub template: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub replay_capacity: usize,
    /// Gradient updates per environment step.
    pub updates_per_step: usize,
    /// Fresh policy rollouts added to each feedback batch.
    pub feedback_rollouts: usize,
    /// Keep every feedback batch on disk for `rank-audit`.
    pub save_feedback: bool,
    pub oracle: OracleConfig,
    pub learner: LearnerConfig,
    pub align: AlignConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: TaskId::Touch,
            method: Method::SelfAlign,
            seeds: 5,
            first_seed: 0,
            budget: None,
            feedback_period: 2000,
            eval_episodes: 20,
            template: None,
            output_dir: PathBuf::from("out"),
            replay_capacity: DEFAULT_CAPACITY,
            updates_per_step: 1,
            feedback_rollouts: FEEDBACK_ROLLOUTS,
            save_feedback: true,
            oracle: OracleConfig::default(),
            learner: desk_learner(),
            align: AlignConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn budget(&self) -> u64 {
        self.budget.unwrap_or_else(|| default_budget(self.task))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.seeds == 0 {
            return bad("seeds must be at least 1".into());
        }
        if self.feedback_period == 0 || self.feedback_period >= self.budget() {
            return bad(format!(
                "feedback period {} must be positive and below the budget {}",
                self.feedback_period,
                self.budget()
            ));
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be at least 1".into());
        }
        if self.learner.hidden == 0 || self.learner.batch_size == 0 {
            return bad("learner hidden width and batch size must be positive".into());
        }
        if self.align.grid.is_empty() {
            return bad("the trust-region grid is empty".into());
        }
        Ok(())
    }

    /// Reward used at the start of a run.
    pub fn initial_template(&self) -> Result<RewardTemplate, HarnessError> {
        if self.method == Method::Sparse {
            return Ok(builtin(self.task, TemplateVariant::Sparse));
        }
        match &self.template {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
                Ok(parse_template(&text)?)
            }
            None => Ok(builtin(self.task, TemplateVariant::Proposed)),
        }
    }

    pub fn run_dir(&self, seed: u64) -> PathBuf {
        self.output_dir
            .join(self.task.as_str())
            .join(self.method.as_str())
            .join(format!("seed-{seed}"))
    }
}

/// One evaluation checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: u64,
    pub episodes: u64,
    pub success_rate: f64,
    /// Negative mean final distance: to the goal for push, to the object
    /// otherwise.
    pub neg_final_distance: f64,
    /// Mean evaluation return under the reward in use.
    pub mean_return: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Success,
    Budget,
}

/// An alignment report tagged with the step at which it happened.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub step: u64,
    #[serde(flatten)]
    pub report: UpdateReport,
}

/// Everything a finished run wrote, also stored as `run.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub task: TaskId,
    pub method: Method,
    pub seed: u64,
    pub termination: Termination,
    pub steps: u64,
    pub metrics: Vec<MetricRow>,
    pub final_params: indexmap::IndexMap<String, f64>,
    #[serde(skip)]
    pub updates: Vec<UpdateRecord>,
    #[serde(skip)]
    pub dir: PathBuf,
}

impl RunArtifacts {
    /// First evaluated step with success rate at least `threshold`.
    pub fn steps_to(&self, threshold: f64) -> Option<u64> {
        self.metrics
            .iter()
            .find(|m| m.success_rate >= threshold)
            .map(|m| m.step)
    }

    pub fn last(&self) -> &MetricRow {
        self.metrics.last().expect("a run evaluates at least once")
    }

    pub fn load(dir: &Path) -> Result<Self, HarnessError> {
        let path = dir.join("run.json");
        let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
        let mut run: RunArtifacts = serde_json::from_str(&text).map_err(|e| io_error(&path, e))?;
        run.dir = dir.to_path_buf();
        let updates = dir.join("updates.jsonl");
        if let Ok(text) = fs::read_to_string(&updates) {
            run.updates = text
                .lines()
                .map(|l| serde_json::from_str(l).map_err(|e| io_error(&updates, e)))
                .collect::<Result<_, _>>()?;
        }
        Ok(run)
    }
}

/// Distance reported in the metrics.
pub fn final_distance(task: TaskId, traj: &Trajectory) -> f64 {
    let f = traj.final_features();
    let feature = match task {
        TaskId::Push => Feature::DistanceToGoal,
        TaskId::Touch | TaskId::Grasp => Feature::DistanceToTarget,
    };
    f.get(feature).expect("task features include the distance")
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix(splitmix(seed ^ splitmix(stream)) ^ index)
}

fn evaluate(
    policy: &PolicyState,
    env: &mut Env,
    template: &RewardTemplate,
    episodes: usize,
) -> Result<(f64, f64, f64), HarnessError> {
    let task = env.task();
    let mut trajs = Vec::with_capacity(episodes);
    for i in 0..episodes {
        trajs.push(rollout(env, EVAL_SEED_BASE + i as u64, |o, t| policy.act_greedy(o, t))?);
    }
    let n = episodes as f64;
    let success = trajs.iter().filter(|t| is_success(task, t.final_state())).count() as f64 / n;
    let distance = trajs.iter().map(|t| final_distance(task, t)).sum::<f64>() / n;
    let compiled = template.compile();
    let values = template.values();
    let ret = trajs
        .iter()
        .map(|t| {
            t.reward_features()
                .iter()
                .map(|f| compiled.evaluate(&values, f))
                .sum::<f64>()
        })
        .sum::<f64>()
        / n;
    Ok((success, -distance, ret))
}

/// Runs every seed of `config` in parallel.
pub fn run(config: &ExperimentConfig) -> Result<Vec<RunArtifacts>, HarnessError> {
    config.validate()?;
    (config.first_seed..config.first_seed + config.seeds)
        .into_par_iter()
        .map(|seed| run_seed(config, seed))
        .collect()
}

/// Runs one seed: train for a feedback period, evaluate, stop on full
/// success, otherwise update the reward (self-align only) and repeat.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<RunArtifacts, HarnessError> {
    config.validate()?;
    let task = config.task;
    let budget = config.budget();
    let dir = config.run_dir(seed);
    fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
    let oracle = config.oracle.build(seed)?;
    let mut template = config.initial_template()?;
    let mut env = Env::for_task(task);
    let mut eval_env = Env::for_task(task);
    let horizon = env.horizon();
    let mut policy = PolicyState::new(
        config.learner.clone(),
        task,
        horizon,
        env.config().action_bounds,
        seed,
    );
    let mut buffer = ReplayBuffer::new(config.replay_capacity);
    let mut metrics = Vec::new();
    let mut updates = vec![UpdateRecord {
        step: 0,
        report: UpdateReport::init(&template),
    }];
    let mut steps = 0u64;
    let mut episodes = 0u64;
    let mut termination = Termination::Budget;

    while steps < budget {
        let checkpoint = (steps + config.feedback_period).min(budget);
        while steps < checkpoint {
            let traj = rollout(&mut env, derive_seed(seed, 0, episodes), |o, t| policy.act(o, t, true))?;
            let n = traj.horizon();
            buffer.push_episode(traj)?;
            policy.train_steps(&buffer, &template, n * config.updates_per_step);
            steps += n as u64;
            episodes += 1;
        }
        let (success_rate, neg_final_distance, mean_return) =
            evaluate(&policy, &mut eval_env, &template, config.eval_episodes)?;
        metrics.push(MetricRow {
            step: steps,
            episodes,
            success_rate,
            neg_final_distance,
            mean_return,
        });
        log::info!(
            "{task} {} seed {seed} step {steps}: success {success_rate:.2}, distance {:.4}",
            config.method,
            -neg_final_distance
        );
        if success_rate >= 1.0 {
            termination = Termination::Success;
            break;
        }
        if config.method != Method::SelfAlign || steps >= budget {
            continue;
        }

        let iteration = updates.len();
        let hist = RewardHistogram::build(&buffer, &template);
        let mut feedback_env = Env::for_task(task);
        let mut fresh = |s: u64| rollout(&mut feedback_env, s, |o, t| policy.act_greedy(o, t));
        let batch = sample_feedback_trajectories(
            &buffer,
            &hist,
            Some(&mut fresh),
            config.feedback_rollouts,
            derive_seed(seed, 1, iteration as u64),
        )?;
        if config.save_feedback {
            let batch_dir = dir.join("feedback").join(format!("iter-{iteration:03}"));
            dump_episodes(&batch_dir, &batch)?;
            let path = batch_dir.join("template.toml");
            fs::write(&path, serialize_template(&template)?).map_err(|e| io_error(&path, e))?;
        }
        let input = AlignInput {
            iteration,
            task,
            template: &template,
            trajs: &batch,
            seed: derive_seed(seed, 2, iteration as u64),
        };
        let (next, report) = align_step(&input, oracle.as_ref(), &config.align)?;
        if report.accepted {
            log::info!("{task} seed {seed} iteration {iteration}: {:?} -> {:?}", report.kind, report.new);
        }
        template = next;
        updates.push(UpdateRecord { step: steps, report });
    }

    let artifacts = RunArtifacts {
        task,
        method: config.method,
        seed,
        termination,
        steps,
        metrics,
        final_params: template.params().clone(),
        updates,
        dir,
    };
    write_run(&artifacts)?;
    Ok(artifacts)
}

/// Label used in the update-type column, e.g. `tune(+) reach_weight`.
pub fn update_label(report: &UpdateReport) -> String {
    match report.kind {
        UpdateKind::Tune => {
            let moved: Vec<String> = report
                .new
                .iter()
                .filter_map(|(k, &v)| {
                    let old = report.old[k];
                    (v != old).then(|| format!("tune({}) {k}", if v > old { '+' } else { '-' }))
                })
                .collect();
            if moved.is_empty() {
                "tune".into()
            } else {
                moved.join(" ")
            }
        }
        kind => kind.as_str().into(),
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

/// Writes `metrics.csv`, `params.csv`, `updates.jsonl`, `curves.svg` and
/// `run.json` into the run directory.
pub fn write_run(run: &RunArtifacts) -> Result<(), HarnessError> {
    let dir = &run.dir;
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;

    let mut csv = String::from("step,episodes,success_rate,neg_final_distance,mean_return\n");
    for m in &run.metrics {
        csv += &format!(
            "{},{},{},{},{}\n",
            m.step, m.episodes, m.success_rate, m.neg_final_distance, m.mean_return
        );
    }
    write_file(&dir.join("metrics.csv"), &csv)?;

    let names: Vec<&String> = run.updates[0].report.new.keys().collect();
    let mut csv = String::from("iter,step,update_type");
    for n in &names {
        csv += &format!(",{n}");
    }
    csv += ",omega,discrepancy_before,discrepancy_after,accepted\n";
    for (i, u) in run.updates.iter().enumerate() {
        let r = &u.report;
        csv += &format!("{},{},{}", i + 1, u.step, update_label(r));
        for n in &names {
            csv += &format!(",{}", r.new[n.as_str()]);
        }
        let omega = r.omega.map_or(String::new(), |w| w.to_string());
        csv += &format!(
            ",{omega},{},{},{}\n",
            r.discrepancy_before, r.discrepancy_after, r.accepted
        );
    }
    write_file(&dir.join("params.csv"), &csv)?;

    let path = dir.join("updates.jsonl");
    let mut file = fs::File::create(&path).map_err(|e| io_error(&path, e))?;
    for u in &run.updates {
        let line = serde_json::to_string(u).map_err(|e| io_error(&path, e))?;
        writeln!(file, "{line}").map_err(|e| io_error(&path, e))?;
    }

    let points = |f: fn(&MetricRow) -> f64| -> Vec<(f64, f64)> {
        run.metrics.iter().map(|m| (m.step as f64, f(m))).collect()
    };
    let svg = line_chart(
        &format!("{} {} seed {}", run.task, run.method, run.seed),
        "environment steps",
        &[
            Series::line("success rate", points(|m| m.success_rate)),
            Series::line("negative final distance", points(|m| m.neg_final_distance)),
        ],
    );
    write_file(&dir.join("curves.svg"), &svg)?;

    let json = serde_json::to_string_pretty(run).map_err(|e| io_error(dir, e))?;
    write_file(&dir.join("run.json"), &json)
}

#[cfg(test)]
mod tests;
