//! Desk-scale manipulation tasks with point-contact kinematics.
//!
//! The end effector is a point with a yaw angle and a small contact radius.
//! Objects are modelled as spheres for contact purposes. Contact force is a
//! linear spring on penetration depth, and the end effector cannot press
//! deeper than a configured maximum.

mod config;

pub use config::EnvConfig;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reward::{extract_features, RewardFeatures, TemplateError};

/// Centroid height of an object resting on the table.
pub const RESTING_HEIGHT: f64 = 0.025;
/// Grasp-lift succeeds once the held object is above this height.
pub const LIFT_SUCCESS_HEIGHT: f64 = 0.05;
/// Push succeeds when the object is within this distance of the goal.
pub const PUSH_SUCCESS_THRESHOLD: f64 = 0.025;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TaskId {
    Touch,
    Grasp,
    Push,
}

impl TaskId {
    pub const ALL: [TaskId; 3] = [TaskId::Touch, TaskId::Grasp, TaskId::Push];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::Touch => "touch",
            TaskId::Grasp => "grasp",
            TaskId::Push => "push",
        }
    }

    /// Natural-language skill name used in oracle prompts.
    pub fn skill(self) -> &'static str {
        match self {
            TaskId::Touch => "touching the target object",
            TaskId::Grasp => "grasping and lifting the target object",
            TaskId::Push => "pushing the target object to the target position",
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "touch" => Ok(TaskId::Touch),
            "grasp" | "grasp-lift" => Ok(TaskId::Grasp),
            "push" => Ok(TaskId::Push),
            other => Err(format!("unknown task `{other}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step called after the episode ended")]
    StepAfterDone,
    #[error("step called before reset")]
    NotReset,
    #[error(transparent)]
    Features(#[from] TemplateError),
    #[error("invalid environment config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// x, y, z (m) and yaw (rad).
    pub ee_pose: [f64; 4],
    /// Magnitude of the external contact force on the end effector (N).
    pub ee_contact_force: f64,
    pub target_object_pos: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_pos: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_height: Option<f64>,
    pub collision_flag: bool,
}

impl Observation {
    pub fn ee_position(&self) -> [f64; 3] {
        [self.ee_pose[0], self.ee_pose[1], self.ee_pose[2]]
    }
}

/// Delta-pose command `(dx, dy, dz, dyaw)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub delta: [f64; 4],
}

impl Action {
    pub fn new(delta: [f64; 4]) -> Self {
        Self { delta }
    }

    pub fn zero() -> Self {
        Self { delta: [0.0; 4] }
    }

    pub fn clipped(self, bounds: &[f64; 4]) -> Self {
        let mut delta = self.delta;
        for (d, b) in delta.iter_mut().zip(bounds) {
            *d = if d.is_nan() { 0.0 } else { d.clamp(-b, *b) };
        }
        Self { delta }
    }
}

/// A complete fixed-horizon episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task: TaskId,
    /// Identifier assigned by whoever produced the episode; used for
    /// de-duplication.
    #[serde(default)]
    pub episode: Option<u64>,
    pub observations: Vec<Observation>,
    pub actions: Vec<Action>,
    pub features: Vec<RewardFeatures>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn final_state(&self) -> &Observation {
        self.observations.last().expect("trajectories are never empty")
    }

    pub fn final_features(&self) -> &RewardFeatures {
        self.features.last().expect("trajectories are never empty")
    }

    /// Features of the states reached by each action, i.e. the ones rewards
    /// are computed from.
    pub fn reward_features(&self) -> &[RewardFeatures] {
        &self.features[1..]
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut a = (a + std::f64::consts::PI) % two_pi;
    if a < 0.0 {
        a += two_pi;
    }
    a - std::f64::consts::PI
}

#[derive(Clone, Debug)]
struct State {
    ee: [f64; 3],
    yaw: f64,
    object: [f64; 3],
    goal: Option<[f64; 3]>,
    grasp_offset: Option<[f64; 3]>,
    force: f64,
    collision: bool,
}

/// One task instance. Cheap to construct; not shared across threads.
#[derive(Clone, Debug)]
pub struct Env {
    config: EnvConfig,
    state: Option<State>,
    t: usize,
}

impl Env {
    pub fn new(config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(Self {
            config,
            state: None,
            t: 0,
        })
    }

    pub fn for_task(task: TaskId) -> Self {
        Self::new(EnvConfig::for_task(task)).expect("default configs are valid")
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn task(&self) -> TaskId {
        self.config.task
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    pub fn steps_taken(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.config.horizon
    }

    pub fn reset(&mut self, seed: u64) -> Observation {
        let c = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut object = [0.0; 3];
        for i in 0..3 {
            object[i] = sample(&mut rng, c.spawn_min[i], c.spawn_max[i]);
        }
        let goal = match c.task {
            TaskId::Push => {
                let mut g = [0.0; 3];
                for i in 0..3 {
                    g[i] = object[i] + sample(&mut rng, c.goal_offset_min[i], c.goal_offset_max[i]);
                }
                Some(g)
            }
            _ => None,
        };
        self.state = Some(State {
            ee: c.home,
            yaw: 0.0,
            object,
            goal,
            grasp_offset: None,
            force: 0.0,
            collision: false,
        });
        self.t = 0;
        self.observe()
    }

    fn observe(&self) -> Observation {
        let s = self.state.as_ref().expect("reset before observe");
        Observation {
            ee_pose: [s.ee[0], s.ee[1], s.ee[2], s.yaw],
            ee_contact_force: s.force,
            target_object_pos: s.object,
            goal_pos: s.goal,
            object_height: (self.config.task == TaskId::Grasp).then_some(s.object[2]),
            collision_flag: s.collision,
        }
    }

    pub fn step(&mut self, action: Action) -> Result<(Observation, bool), EnvError> {
        if self.is_done() {
            return Err(EnvError::StepAfterDone);
        }
        let c = self.config.clone();
        let s = self.state.as_mut().ok_or(EnvError::NotReset)?;
        let a = action.clipped(&c.action_bounds);
        let delta = [a.delta[0], a.delta[1], a.delta[2]];
        s.yaw = wrap_angle(s.yaw + a.delta[3]);

        let ee_old = s.ee;
        let mut ee = add(ee_old, delta);
        for i in 0..3 {
            ee[i] = ee[i].clamp(c.workspace_min[i], c.workspace_max[i]);
        }
        ee[2] = ee[2].max(c.ee_radius);
        let moved = sub(ee, ee_old);

        let contact_dist = c.object_radius + c.ee_radius;
        let to_object = sub(s.object, ee_old);
        let normal = {
            let n = norm(to_object);
            if n > 1e-12 {
                scale(to_object, 1.0 / n)
            } else {
                [0.0; 3]
            }
        };
        let approach = dot(moved, normal);

        if let Some(offset) = s.grasp_offset {
            // Held object follows the end effector but cannot sink into the table.
            let min_ee_z = c.spawn_min[2] - offset[2];
            ee[2] = ee[2].max(min_ee_z);
            s.ee = ee;
            s.object = add(ee, offset);
            s.force = c.grip_force;
            s.collision = false;
        } else {
            if c.task == TaskId::Push {
                let penetration = contact_dist - norm(sub(ee, s.object));
                let normal_xy = {
                    let v = [to_object[0], to_object[1], 0.0];
                    let n = norm(v);
                    if n > 1e-12 {
                        scale(v, 1.0 / n)
                    } else {
                        [0.0; 3]
                    }
                };
                let push = dot(moved, normal_xy);
                if penetration > 0.0 && push > 0.0 {
                    let shift = (penetration - c.rest_penetration).clamp(0.0, push);
                    s.object = add(s.object, scale(normal_xy, shift));
                }
            }
            // The end effector cannot press deeper than `max_penetration`.
            let rel = sub(ee, s.object);
            let dist = norm(rel);
            let min_dist = contact_dist - c.max_penetration;
            if dist < min_dist {
                let dir = if dist > 1e-12 {
                    scale(rel, 1.0 / dist)
                } else {
                    scale(normal, -1.0)
                };
                ee = add(s.object, scale(dir, min_dist));
            }
            s.ee = ee;
            let penetration = (contact_dist - norm(sub(s.ee, s.object))).max(0.0);
            // Guard against round-off right at the limit.
            let penetration = penetration.min(c.max_penetration);
            s.force = c.spring_constant * penetration;
            s.collision = penetration > 0.0 && approach > c.collision_speed;
            if c.task == TaskId::Grasp && penetration > 0.0 {
                s.grasp_offset = Some(sub(s.object, s.ee));
                s.force = s.force.max(c.grip_force);
            }
        }

        self.t += 1;
        Ok((self.observe(), self.is_done()))
    }
}

fn sample(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

/// Ground-truth task success from a final observation.
pub fn is_success(task: TaskId, obs: &Observation) -> bool {
    match task {
        TaskId::Touch => obs.ee_contact_force > 0.0,
        TaskId::Grasp => {
            obs.ee_contact_force > 0.0
                && obs.object_height.map_or(false, |h| h > LIFT_SUCCESS_HEIGHT)
        }
        TaskId::Push => obs.goal_pos.map_or(false, |g| {
            norm(sub(obs.target_object_pos, g)) <= PUSH_SUCCESS_THRESHOLD
        }),
    }
}

/// Runs one full episode and records observations, actions and per-state
/// features. `policy` receives the observation and the step index.
pub fn rollout<P>(env: &mut Env, seed: u64, mut policy: P) -> Result<Trajectory, EnvError>
where
    P: FnMut(&Observation, usize) -> Action,
{
    let task = env.task();
    let mut obs = env.reset(seed);
    let horizon = env.horizon();
    let mut observations = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    let mut features = Vec::with_capacity(horizon + 1);
    features.push(extract_features(&obs, task)?);
    observations.push(obs);
    loop {
        let action = policy(&obs, actions.len()).clipped(&env.config().action_bounds);
        let (next, done) = env.step(action)?;
        actions.push(action);
        features.push(extract_features(&next, task)?);
        observations.push(next);
        obs = next;
        if done {
            break;
        }
    }
    Ok(Trajectory {
        task,
        episode: None,
        observations,
        actions,
        features,
    })
}
