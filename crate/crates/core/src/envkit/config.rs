use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EnvError, TaskId, RESTING_HEIGHT};

/// Geometry and contact parameters for one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub task: TaskId,
    pub horizon: usize,
    /// End-effector start position (m).
    pub home: [f64; 3],
    /// Object spawn box corners (m).
    pub spawn_min: [f64; 3],
    pub spawn_max: [f64; 3],
    /// Goal offset from the spawned object (push only).
    #[serde(default)]
    pub goal_offset_min: [f64; 3],
    #[serde(default)]
    pub goal_offset_max: [f64; 3],
    pub workspace_min: [f64; 3],
    pub workspace_max: [f64; 3],
    pub object_radius: f64,
    pub ee_radius: f64,
    /// Deepest the end effector can press into an object (m).
    pub max_penetration: f64,
    /// Penetration kept while pushing an object along (m).
    #[serde(default)]
    pub rest_penetration: f64,
    /// Contact stiffness (N/m).
    pub spring_constant: f64,
    /// Contact force reported while an object is held (N).
    #[serde(default)]
    pub grip_force: f64,
    /// Per-step bounds on (dx, dy, dz, dyaw) in m and rad.
    pub action_bounds: [f64; 4],
    /// Approach speed into an object (m/step) above which contact counts
    /// as a collision.
    pub collision_speed: f64,
}

impl EnvConfig {
    pub fn for_task(task: TaskId) -> Self {
        let base = EnvConfig {
            task,
            horizon: 25,
            home: [0.0, 0.0, 0.10],
            spawn_min: [0.08, -0.05, RESTING_HEIGHT],
            spawn_max: [0.14, 0.05, RESTING_HEIGHT],
            goal_offset_min: [0.0; 3],
            goal_offset_max: [0.0; 3],
            workspace_min: [-0.15, -0.25, 0.0],
            workspace_max: [0.40, 0.25, 0.30],
            object_radius: 0.025,
            ee_radius: 0.01,
            max_penetration: 0.008,
            rest_penetration: 0.0,
            spring_constant: 100.0,
            grip_force: 0.0,
            action_bounds: [0.02, 0.02, 0.02, 0.1],
            collision_speed: 0.01,
        };
        match task {
            TaskId::Touch => EnvConfig {
                home: [0.0, 0.0, 0.12],
                spawn_min: [0.12, -0.05, RESTING_HEIGHT],
                spawn_max: [0.18, 0.05, RESTING_HEIGHT],
                object_radius: 0.02,
                ..base
            },
            TaskId::Grasp => EnvConfig {
                grip_force: 0.5,
                ..base
            },
            TaskId::Push => EnvConfig {
                home: [0.0, 0.0, 0.06],
                spawn_min: [0.10, -0.05, 0.015],
                spawn_max: [0.14, 0.05, 0.015],
                goal_offset_min: [0.06, -0.03, 0.0],
                goal_offset_max: [0.10, 0.03, 0.0],
                object_radius: 0.015,
                rest_penetration: 0.004,
                ..base
            },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, EnvError> {
        let cfg: EnvConfig = toml::from_str(text).map_err(|e| EnvError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EnvError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let err = |m: &str| Err(EnvError::Config(m.to_string()));
        if self.horizon == 0 {
            return err("horizon must be positive");
        }
        if (0..3).any(|i| self.spawn_min[i] > self.spawn_max[i]) {
            return err("spawn_min must not exceed spawn_max");
        }
        if (0..3).any(|i| self.goal_offset_min[i] > self.goal_offset_max[i]) {
            return err("goal_offset_min must not exceed goal_offset_max");
        }
        if (0..3).any(|i| self.workspace_min[i] >= self.workspace_max[i]) {
            return err("empty workspace");
        }
        if self.action_bounds.iter().any(|b| !(*b > 0.0)) {
            return err("action bounds must be positive");
        }
        if self.max_penetration <= 0.0 || self.max_penetration >= self.object_radius + self.ee_radius {
            return err("max_penetration must lie inside the contact distance");
        }
        if self.rest_penetration < 0.0 || self.rest_penetration > self.max_penetration {
            return err("rest_penetration must lie in [0, max_penetration]");
        }
        if self.spring_constant <= 0.0 || self.grip_force < 0.0 {
            return err("forces must be non-negative");
        }
        Ok(())
    }
}
