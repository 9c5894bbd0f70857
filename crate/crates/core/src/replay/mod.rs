//! Experience replay that stores reward features instead of rewards.
//!
//! Rewards are recomputed from stored features under whatever template is
//! current, so experience collected under older parameters stays usable
//! after every reward update.

use std::collections::{HashSet, VecDeque};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::envkit::{Action, EnvError, Observation, Trajectory};
use crate::reward::{CompiledTemplate, RewardFeatures, RewardTemplate};

/// Number of bins in the return histogram used for feedback sampling.
pub const HISTOGRAM_BINS: usize = 10;
/// Default number of fresh policy rollouts added to each feedback batch.
pub const FEEDBACK_ROLLOUTS: usize = 5;
/// Default capacity in transitions.
pub const DEFAULT_CAPACITY: usize = 100_000;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("replay buffer is empty and no policy was given")]
    Empty,
    #[error("trajectory has no transitions")]
    EmptyTrajectory,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("episode dump: {0}")]
    Io(String),
}

/// One stored transition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReplayEntry {
    pub obs: Observation,
    pub action: Action,
    pub next_obs: Observation,
    pub done: bool,
    /// Features of `next_obs`; the reward for this transition is computed
    /// from these.
    pub features: RewardFeatures,
    pub episode: u64,
    pub step: usize,
}

#[derive(Debug)]
struct Stored {
    /// Absolute index of the first transition, counted since creation.
    start: u64,
    traj: Trajectory,
}

/// Reward function for relabeling: a compiled template and its values.
#[derive(Clone, Debug)]
pub struct Relabeler {
    compiled: CompiledTemplate,
    theta: Vec<f64>,
}

impl Relabeler {
    pub fn new(template: &RewardTemplate) -> Self {
        Self {
            compiled: template.compile(),
            theta: template.values(),
        }
    }

    pub fn reward(&self, features: &RewardFeatures) -> f64 {
        self.compiled.evaluate(&self.theta, features)
    }
}

/// FIFO buffer of whole episodes with a capacity in transitions.
#[derive(Debug)]
pub struct ReplayBuffer {
    episodes: VecDeque<Stored>,
    capacity: usize,
    len: usize,
    next_start: u64,
    next_episode: u64,
    relabels: AtomicU64,
}

impl Default for ReplayBuffer {
    fn default() -> Self {
        Self::new(DEFAULT_CAPACITY)
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            episodes: VecDeque::new(),
            capacity: capacity.max(1),
            len: 0,
            next_start: 0,
            next_episode: 0,
            relabels: AtomicU64::new(0),
        }
    }

    /// Number of stored transitions.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    /// Total number of rewards ever produced by relabeling.
    pub fn relabel_count(&self) -> u64 {
        self.relabels.load(Ordering::Relaxed)
    }

    /// Stores an episode, assigning it a fresh id, and evicts the oldest
    /// episodes while over capacity. Returns the assigned id.
    pub fn push_episode(&mut self, mut traj: Trajectory) -> Result<u64, ReplayError> {
        let n = traj.horizon();
        if n == 0 {
            return Err(ReplayError::EmptyTrajectory);
        }
        let id = self.next_episode;
        self.next_episode += 1;
        traj.episode = Some(id);
        self.episodes.push_back(Stored {
            start: self.next_start,
            traj,
        });
        self.next_start += n as u64;
        self.len += n;
        while self.len > self.capacity && self.episodes.len() > 1 {
            let old = self.episodes.pop_front().expect("non-empty");
            self.len -= old.traj.horizon();
        }
        Ok(id)
    }

    pub fn episodes(&self) -> impl Iterator<Item = &Trajectory> {
        self.episodes.iter().map(|s| &s.traj)
    }

    pub fn episode(&self, id: u64) -> Option<&Trajectory> {
        let first = self.episodes.front()?.traj.episode?;
        let idx = id.checked_sub(first)? as usize;
        self.episodes.get(idx).map(|s| &s.traj)
    }

    /// The `i`-th stored transition, oldest first.
    pub fn get(&self, i: usize) -> Option<ReplayEntry> {
        if i >= self.len {
            return None;
        }
        let abs = self.episodes.front()?.start + i as u64;
        let k = self.episodes.partition_point(|s| s.start <= abs) - 1;
        let stored = &self.episodes[k];
        Some(entry(&stored.traj, (abs - stored.start) as usize))
    }

    pub fn entries(&self) -> impl Iterator<Item = ReplayEntry> + '_ {
        self.episodes
            .iter()
            .flat_map(|s| (0..s.traj.horizon()).map(move |t| entry(&s.traj, t)))
    }

    /// Reward of `entry` under `template`.
    pub fn relabel(&self, entry: &ReplayEntry, template: &RewardTemplate) -> f64 {
        self.relabels.fetch_add(1, Ordering::Relaxed);
        template.evaluate(&entry.features)
    }

    /// Reward of `entry` under a compiled template. Bit-identical to
    /// [`ReplayBuffer::relabel`].
    pub fn relabel_with(&self, entry: &ReplayEntry, reward: &Relabeler) -> f64 {
        self.relabels.fetch_add(1, Ordering::Relaxed);
        reward.reward(&entry.features)
    }

    /// Uniform minibatch of transitions with rewards relabeled under
    /// `reward`.
    pub fn sample_batch<R: Rng>(
        &self,
        rng: &mut R,
        n: usize,
        reward: &Relabeler,
    ) -> Vec<(ReplayEntry, f64)> {
        (0..n)
            .filter_map(|_| self.get(rng.gen_range(0..self.len.max(1))))
            .map(|e| {
                let r = self.relabel_with(&e, reward);
                (e, r)
            })
            .collect()
    }

    /// Episode return under `reward`, summed over the rewarded states.
    pub fn episode_return(&self, traj: &Trajectory, reward: &Relabeler) -> f64 {
        self.relabels
            .fetch_add(traj.horizon() as u64, Ordering::Relaxed);
        traj.reward_features().iter().map(|f| reward.reward(f)).sum()
    }
}

fn entry(traj: &Trajectory, t: usize) -> ReplayEntry {
    ReplayEntry {
        obs: traj.observations[t],
        action: traj.actions[t],
        next_obs: traj.observations[t + 1],
        done: t + 1 == traj.horizon(),
        features: traj.features[t + 1],
        episode: traj.episode.expect("stored episodes have ids"),
        step: t,
    }
}

/// Ten equal-width bins over the episode returns under one template.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardHistogram {
    pub min: f64,
    pub max: f64,
    pub bins: [Vec<u64>; HISTOGRAM_BINS],
}

impl RewardHistogram {
    pub fn build(buffer: &ReplayBuffer, template: &RewardTemplate) -> Self {
        let reward = Relabeler::new(template);
        let returns: Vec<(u64, f64)> = buffer
            .episodes()
            .map(|t| (t.episode.expect("stored"), buffer.episode_return(t, &reward)))
            .collect();
        Self::from_returns(&returns)
    }

    /// Bins `(episode id, return)` pairs. Values on an inner edge go to the
    /// lower bin; the maximum goes to the last bin.
    pub fn from_returns(returns: &[(u64, f64)]) -> Self {
        let mut bins: [Vec<u64>; HISTOGRAM_BINS] = Default::default();
        if returns.is_empty() {
            return Self {
                min: 0.0,
                max: 0.0,
                bins,
            };
        }
        let min = returns.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
        let max = returns.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
        for &(id, r) in returns {
            bins[bin_index(r, min, max)].push(id);
        }
        Self { min, max, bins }
    }

    /// Upper edge of bin `k`.
    pub fn upper_edge(&self, k: usize) -> f64 {
        edge(self.min, self.max, k + 1)
    }

    pub fn non_empty(&self) -> usize {
        self.bins.iter().filter(|b| !b.is_empty()).count()
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(Vec::len).sum()
    }
}

fn edge(min: f64, max: f64, k: usize) -> f64 {
    if k == HISTOGRAM_BINS {
        max
    } else {
        min + (max - min) * k as f64 / HISTOGRAM_BINS as f64
    }
}

fn bin_index(r: f64, min: f64, max: f64) -> usize {
    if r >= max {
        return HISTOGRAM_BINS - 1;
    }
    (0..HISTOGRAM_BINS)
        .find(|&k| r <= edge(min, max, k + 1))
        .unwrap_or(HISTOGRAM_BINS - 1)
}

/// Source of fresh on-policy episodes, called with a rollout seed.
pub type RolloutFn<'a> = dyn FnMut(u64) -> Result<Trajectory, EnvError> + 'a;

/// Feedback batch: one random stored episode from every non-empty bin,
/// followed by `m` fresh rollouts. Duplicate episode ids are dropped.
pub fn sample_feedback_trajectories(
    buffer: &ReplayBuffer,
    hist: &RewardHistogram,
    policy: Option<&mut RolloutFn<'_>>,
    m: usize,
    seed: u64,
) -> Result<Vec<Trajectory>, ReplayError> {
    if buffer.is_empty() && policy.is_none() {
        return Err(ReplayError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for bin in &hist.bins {
        if let Some(&id) = bin.choose(&mut rng) {
            if let Some(t) = buffer.episode(id) {
                if seen.insert(id) {
                    out.push(t.clone());
                }
            }
        }
    }
    if let Some(policy) = policy {
        for _ in 0..m {
            let t = policy(rng.gen())?;
            if let Some(id) = t.episode {
                if !seen.insert(id) {
                    continue;
                }
            }
            out.push(t);
        }
    }
    Ok(out)
}

/// Writes one JSON file per trajectory into `dir`.
pub fn dump_episodes(dir: &Path, trajs: &[Trajectory]) -> Result<(), ReplayError> {
    let io = |e: std::io::Error| ReplayError::Io(e.to_string());
    fs::create_dir_all(dir).map_err(io)?;
    for (i, t) in trajs.iter().enumerate() {
        let name = format!("{i:03}-episode-{}.json", t.episode.map_or("new".into(), |e| e.to_string()));
        let text = serde_json::to_string_pretty(t).map_err(|e| ReplayError::Io(e.to_string()))?;
        fs::write(dir.join(name), text).map_err(io)?;
    }
    Ok(())
}

/// Reads back a directory written by [`dump_episodes`], in file-name order.
pub fn load_episodes(dir: &Path) -> Result<Vec<Trajectory>, ReplayError> {
    let io = |e: std::io::Error| ReplayError::Io(format!("{}: {e}", dir.display()));
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(io)?;
            serde_json::from_str(&text).map_err(|e| ReplayError::Io(format!("{}: {e}", p.display())))
        })
        .collect()
}
