//! Off-policy actor-critic learner with twin critics and target networks.
//!
//! Every reward the learner sees is computed from stored features under
//! the template passed to [`PolicyState::train_steps`].

mod nn;

pub use nn::{Activation, Adam, Gradients, Mlp, MlpData};

use std::path::Path;

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envkit::{Action, Observation, TaskId};
use crate::replay::{Relabeler, ReplayBuffer};
use crate::reward::RewardTemplate;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub hidden: usize,
    pub lr: f64,
    pub discount: f64,
    pub batch_size: usize,
    pub noise_max: f64,
    pub noise_min: f64,
    /// Environment steps over which exploration noise decays.
    pub noise_decay_steps: u64,
    /// Clip on the target-policy smoothing noise.
    pub noise_clip: f64,
    /// Initial environment steps taken with uniform random actions.
    pub exploration_steps: u64,
    pub actor_update_every: u64,
    pub target_update_every: u64,
    pub tau: f64,
    pub grad_clip: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            lr: 1e-4,
            discount: 0.99,
            batch_size: 32,
            noise_max: 1.0,
            noise_min: 0.3,
            noise_decay_steps: 10_000,
            noise_clip: 0.5,
            exploration_steps: 1000,
            actor_update_every: 2,
            target_update_every: 100,
            tau: 0.01,
            grad_clip: 20.0,
        }
    }
}

/// Observation vector fed to the networks. Positions are scaled to roughly
/// unit magnitude; `t` is the index of the current step in the episode.
pub fn encode(obs: &Observation, t: usize, horizon: usize, task: TaskId) -> Vec<f32> {
    let ee = obs.ee_position();
    let obj = obs.target_object_pos;
    let mut v = Vec::with_capacity(obs_dim(task));
    v.extend(ee.iter().map(|x| (x * 10.0) as f32));
    v.push((obs.ee_pose[3] / std::f64::consts::PI) as f32);
    v.push(obs.ee_contact_force as f32);
    v.extend(obj.iter().map(|x| (x * 10.0) as f32));
    v.extend((0..3).map(|i| ((obj[i] - ee[i]) * 10.0) as f32));
    if task == TaskId::Push {
        let g = obs.goal_pos.unwrap_or(obj);
        v.extend(g.iter().map(|x| (x * 10.0) as f32));
        v.extend((0..3).map(|i| ((g[i] - obj[i]) * 10.0) as f32));
    }
    v.push(if obs.collision_flag { 1.0 } else { 0.0 });
    v.push(t as f32 / horizon.max(1) as f32);
    v
}

pub fn obs_dim(task: TaskId) -> usize {
    match task {
        TaskId::Push => 19,
        _ => 13,
    }
}

const ACTION_DIM: usize = 4;

/// Actor, twin critics, their targets, optimizers and schedule counters.
#[derive(Clone, Debug)]
pub struct PolicyState {
    pub config: LearnerConfig,
    pub task: TaskId,
    pub horizon: usize,
    pub action_bounds: [f64; 4],
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critics: [Mlp; 2],
    pub critic_targets: [Mlp; 2],
    actor_opt: Adam,
    critic_opts: [Adam; 2],
    /// Environment steps taken with exploration on.
    pub env_steps: u64,
    /// Gradient updates performed.
    pub updates: u64,
    rng: ChaCha8Rng,
}

impl PolicyState {
    pub fn new(
        config: LearnerConfig,
        task: TaskId,
        horizon: usize,
        action_bounds: [f64; 4],
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = obs_dim(task);
        let h = config.hidden;
        let actor = Mlp::new(&mut rng, &[d, h, h, ACTION_DIM], Activation::Tanh);
        let critic = |rng: &mut ChaCha8Rng| {
            Mlp::new(rng, &[d + ACTION_DIM, h, h, 1], Activation::Identity)
        };
        let critics = [critic(&mut rng), critic(&mut rng)];
        let lr = config.lr as f32;
        Self {
            actor_opt: Adam::new(&actor, lr),
            critic_opts: [Adam::new(&critics[0], lr), Adam::new(&critics[1], lr)],
            actor_target: actor.clone(),
            critic_targets: critics.clone(),
            actor,
            critics,
            config,
            task,
            horizon,
            action_bounds,
            env_steps: 0,
            updates: 0,
            rng,
        }
    }

    /// Exploration noise std at the current environment step.
    pub fn noise_std(&self) -> f64 {
        noise_schedule(&self.config, self.env_steps)
    }

    /// Chooses an action for step `t` of an episode. With `explore`, the
    /// first `exploration_steps` calls act uniformly at random and later
    /// calls add clipped Gaussian noise; each such call advances the
    /// exploration schedule.
    pub fn act(&mut self, obs: &Observation, t: usize, explore: bool) -> Action {
        let mut a = if explore && self.env_steps < self.config.exploration_steps {
            [0.0f32; ACTION_DIM].map(|_| self.rng.gen_range(-1.0f32..=1.0))
        } else {
            let x = Array2::from_shape_vec(
                (1, obs_dim(self.task)),
                encode(obs, t, self.horizon, self.task),
            )
            .expect("encoding has the declared size");
            let y = self.actor.forward(&x);
            let mut a = [0.0f32; ACTION_DIM];
            for (i, v) in a.iter_mut().enumerate() {
                *v = y[[0, i]];
            }
            if explore {
                let std = self.noise_std() as f32;
                for v in &mut a {
                    let n: f32 = self.rng.sample(StandardNormal);
                    *v = (*v + std * n).clamp(-1.0, 1.0);
                }
            }
            a
        };
        if explore {
            self.env_steps += 1;
        }
        for v in &mut a {
            *v = v.clamp(-1.0, 1.0);
        }
        Action::new([0, 1, 2, 3].map(|i| a[i] as f64 * self.action_bounds[i]))
    }

    /// Deterministic action that does not touch any schedule.
    pub fn act_greedy(&self, obs: &Observation, t: usize) -> Action {
        let x = Array2::from_shape_vec(
            (1, obs_dim(self.task)),
            encode(obs, t, self.horizon, self.task),
        )
        .expect("encoding has the declared size");
        let y = self.actor.forward(&x);
        Action::new([0, 1, 2, 3].map(|i| y[[0, i]].clamp(-1.0, 1.0) as f64 * self.action_bounds[i]))
    }

    /// Whether enough data exists for a gradient update.
    pub fn ready(&self, buffer: &ReplayBuffer) -> bool {
        self.env_steps >= self.config.exploration_steps && buffer.len() >= self.config.batch_size
    }

    /// Performs `k` gradient updates on minibatches relabeled under
    /// `template`. Returns the number of updates actually made.
    pub fn train_steps(&mut self, buffer: &ReplayBuffer, template: &RewardTemplate, k: usize) -> usize {
        if k == 0 {
            return 0;
        }
        if !self.ready(buffer) {
            log::debug!(
                "skipping {k} updates: {} env steps, {} stored transitions",
                self.env_steps,
                buffer.len()
            );
            return 0;
        }
        let reward = Relabeler::new(template);
        for _ in 0..k {
            self.update(buffer, &reward);
        }
        k
    }

    fn update(&mut self, buffer: &ReplayBuffer, reward: &Relabeler) {
        let cfg = &self.config;
        let n = cfg.batch_size;
        let d = obs_dim(self.task);
        let batch = buffer.sample_batch(&mut self.rng, n, reward);
        let mut s = Array2::<f32>::zeros((n, d + ACTION_DIM));
        let mut s_next = Array2::<f32>::zeros((n, d));
        let mut r = Array1::<f32>::zeros(n);
        let mut not_done = Array1::<f32>::zeros(n);
        for (i, (e, rew)) in batch.iter().enumerate() {
            let x = encode(&e.obs, e.step, self.horizon, self.task);
            let x2 = encode(&e.next_obs, e.step + 1, self.horizon, self.task);
            for j in 0..d {
                s[[i, j]] = x[j];
                s_next[[i, j]] = x2[j];
            }
            for j in 0..ACTION_DIM {
                s[[i, d + j]] = (e.action.delta[j] / self.action_bounds[j]) as f32;
            }
            r[i] = *rew as f32;
            not_done[i] = if e.done { 0.0 } else { 1.0 };
        }

        // Critic targets with clipped smoothing noise on the target action.
        let std = self.noise_std() as f32;
        let clip = cfg.noise_clip as f32;
        let mut a_next = self.actor_target.forward(&s_next);
        for v in a_next.iter_mut() {
            let noise: f32 = self.rng.sample::<f32, _>(StandardNormal) * std;
            *v = (*v + noise.clamp(-clip, clip)).clamp(-1.0, 1.0);
        }
        let sa_next = ndarray::concatenate![Axis(1), s_next, a_next];
        let q1 = self.critic_targets[0].forward(&sa_next);
        let q2 = self.critic_targets[1].forward(&sa_next);
        let gamma = cfg.discount as f32;
        let y: Array1<f32> = (0..n)
            .map(|i| r[i] + gamma * not_done[i] * q1[[i, 0]].min(q2[[i, 0]]))
            .collect();

        let grad_clip = cfg.grad_clip as f32;
        for c in 0..2 {
            let cache = self.critics[c].forward_cached(&s);
            let q = cache.output();
            let dq = Array2::from_shape_fn((n, 1), |(i, _)| 2.0 * (q[[i, 0]] - y[i]) / n as f32);
            let (mut g, _) = self.critics[c].backward(&cache, &dq);
            g.clip(grad_clip);
            self.critic_opts[c].step(&mut self.critics[c], &g);
        }

        self.updates += 1;
        if self.updates % cfg.actor_update_every.max(1) == 0 {
            let states = s.slice(s![.., ..d]).to_owned();
            let actor_cache = self.actor.forward_cached(&states);
            let sa = ndarray::concatenate![Axis(1), states, actor_cache.output().view()];
            let critic_cache = self.critics[0].forward_cached(&sa);
            let dq = Array2::from_elem((n, 1), -1.0 / n as f32);
            let (_, dsa) = self.critics[0].backward(&critic_cache, &dq);
            let da = dsa.slice(s![.., d..]).to_owned();
            let (mut g, _) = self.actor.backward(&actor_cache, &da);
            g.clip(grad_clip);
            self.actor_opt.step(&mut self.actor, &g);
        }
        if self.updates % cfg.target_update_every.max(1) == 0 {
            let tau = cfg.tau as f32;
            self.actor_target.soft_update(&self.actor, tau);
            for c in 0..2 {
                self.critic_targets[c].soft_update(&self.critics[c], tau);
            }
        }
    }

    /// Q-value estimate of the first critic, for diagnostics.
    pub fn q_value(&self, obs: &Observation, t: usize, action: &Action) -> f64 {
        let mut x = encode(obs, t, self.horizon, self.task);
        x.extend((0..ACTION_DIM).map(|j| (action.delta[j] / self.action_bounds[j]) as f32));
        let x = Array2::from_shape_vec((1, x.len()), x).expect("sized");
        self.critics[0].forward(&x)[[0, 0]] as f64
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        let text = serde_json::to_string(&Checkpoint::from(self))
            .map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| PolicyError::Checkpoint(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
        let ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
        ck.try_into()
    }
}

pub fn noise_schedule(cfg: &LearnerConfig, step: u64) -> f64 {
    if step >= cfg.noise_decay_steps {
        return cfg.noise_min;
    }
    let frac = step as f64 / cfg.noise_decay_steps as f64;
    cfg.noise_max + (cfg.noise_min - cfg.noise_max) * frac
}

#[derive(Serialize, Deserialize)]
struct AdamData {
    t: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl From<&Adam> for AdamData {
    fn from(a: &Adam) -> Self {
        let flat = |x: &Vec<(Array2<f32>, Array1<f32>)>| {
            x.iter()
                .map(|(w, b)| w.iter().chain(b.iter()).copied().collect())
                .collect()
        };
        Self {
            t: a.t,
            m: flat(&a.m),
            v: flat(&a.v),
        }
    }
}

impl AdamData {
    fn restore(self, net: &Mlp, lr: f32) -> Result<Adam, PolicyError> {
        let mut adam = Adam::new(net, lr);
        adam.t = self.t;
        for (dst, src) in [(&mut adam.m, self.m), (&mut adam.v, self.v)] {
            if dst.len() != src.len() {
                return Err(PolicyError::Checkpoint("optimizer layer count".into()));
            }
            for ((w, b), flat) in dst.iter_mut().zip(src) {
                if flat.len() != w.len() + b.len() {
                    return Err(PolicyError::Checkpoint("optimizer size".into()));
                }
                for (x, v) in w.iter_mut().chain(b.iter_mut()).zip(flat) {
                    *x = v;
                }
            }
        }
        Ok(adam)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    config: LearnerConfig,
    task: TaskId,
    horizon: usize,
    action_bounds: [f64; 4],
    env_steps: u64,
    updates: u64,
    nets: Vec<MlpData>,
    optimizers: Vec<AdamData>,
    rng_seed: [u8; 32],
    rng_stream: u64,
    rng_word_pos: u128,
}

impl From<&PolicyState> for Checkpoint {
    fn from(p: &PolicyState) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config: p.config.clone(),
            task: p.task,
            horizon: p.horizon,
            action_bounds: p.action_bounds,
            env_steps: p.env_steps,
            updates: p.updates,
            nets: [
                &p.actor,
                &p.actor_target,
                &p.critics[0],
                &p.critics[1],
                &p.critic_targets[0],
                &p.critic_targets[1],
            ]
            .into_iter()
            .map(MlpData::from)
            .collect(),
            optimizers: [&p.actor_opt, &p.critic_opts[0], &p.critic_opts[1]]
                .into_iter()
                .map(AdamData::from)
                .collect(),
            rng_seed: p.rng.get_seed(),
            rng_stream: p.rng.get_stream(),
            rng_word_pos: p.rng.get_word_pos(),
        }
    }
}

impl TryFrom<Checkpoint> for PolicyState {
    type Error = PolicyError;

    fn try_from(ck: Checkpoint) -> Result<Self, Self::Error> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(PolicyError::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        if ck.nets.len() != 6 || ck.optimizers.len() != 3 {
            return Err(PolicyError::Checkpoint("wrong number of networks".into()));
        }
        let nets: Vec<Mlp> = ck
            .nets
            .into_iter()
            .map(Mlp::try_from)
            .collect::<Result<_, _>>()
            .map_err(PolicyError::Checkpoint)?;
        let [actor, actor_target, c0, c1, t0, t1]: [Mlp; 6] =
            nets.try_into().expect("length checked");
        let lr = ck.config.lr as f32;
        let mut opts = ck.optimizers.into_iter();
        let actor_opt = opts.next().expect("3").restore(&actor, lr)?;
        let o0 = opts.next().expect("3").restore(&c0, lr)?;
        let o1 = opts.next().expect("3").restore(&c1, lr)?;
        let mut rng = ChaCha8Rng::from_seed(ck.rng_seed);
        rng.set_stream(ck.rng_stream);
        rng.set_word_pos(ck.rng_word_pos);
        Ok(Self {
            config: ck.config,
            task: ck.task,
            horizon: ck.horizon,
            action_bounds: ck.action_bounds,
            actor,
            actor_target,
            critics: [c0, c1],
            critic_targets: [t0, t1],
            actor_opt,
            critic_opts: [o0, o1],
            env_steps: ck.env_steps,
            updates: ck.updates,
            rng,
        })
    }
}
