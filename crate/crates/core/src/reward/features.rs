//! Named reward features and their extraction from raw observations.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::envkit::{Observation, TaskId, RESTING_HEIGHT};

use super::TemplateError;

/// A quantity a reward term can read. Distances are in meters, forces in
/// newtons, and flags are encoded as 0/1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Feature {
    DistanceToTarget,
    DistanceToGoal,
    ForceMagnitude,
    Contacted,
    ObjectHeight,
    HeldOffFloor,
    CollisionDetected,
}

impl Feature {
    pub const COUNT: usize = 7;

    pub const ALL: [Feature; Feature::COUNT] = [
        Feature::DistanceToTarget,
        Feature::DistanceToGoal,
        Feature::ForceMagnitude,
        Feature::Contacted,
        Feature::ObjectHeight,
        Feature::HeldOffFloor,
        Feature::CollisionDetected,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::DistanceToTarget => "distance_to_target",
            Feature::DistanceToGoal => "distance_to_goal",
            Feature::ForceMagnitude => "force_magnitude",
            Feature::Contacted => "contacted",
            Feature::ObjectHeight => "object_height",
            Feature::HeldOffFloor => "held_off_floor",
            Feature::CollisionDetected => "collision_detected",
        }
    }

    /// Flags are stored as 0.0 / 1.0.
    pub fn is_flag(self) -> bool {
        matches!(
            self,
            Feature::Contacted | Feature::HeldOffFloor | Feature::CollisionDetected
        )
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = TemplateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let feature = match s {
            "distance_to_target" | "distance" => Feature::DistanceToTarget,
            "distance_to_goal" => Feature::DistanceToGoal,
            // Both spellings name the end-effector contact force.
            "force_magnitude" | "ee_contact_force" | "ee_reaction_forece" | "ee_reaction_force" => {
                Feature::ForceMagnitude
            }
            "contacted" => Feature::Contacted,
            "object_height" => Feature::ObjectHeight,
            "held_off_floor" => Feature::HeldOffFloor,
            "collision_detected" | "collision" => Feature::CollisionDetected,
            other => return Err(TemplateError::UnknownFeature(other.to_string())),
        };
        Ok(feature)
    }
}

impl Serialize for Feature {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Feature {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Feature values for one state. Only the features relevant to a task are
/// present.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RewardFeatures {
    values: [Option<f64>; Feature::COUNT],
}

impl RewardFeatures {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, feature: Feature, value: f64) -> Self {
        self.set(feature, value);
        self
    }

    pub fn set(&mut self, feature: Feature, value: f64) {
        self.values[feature.index()] = Some(value);
    }

    pub fn set_flag(&mut self, feature: Feature, on: bool) {
        self.set(feature, if on { 1.0 } else { 0.0 });
    }

    pub fn get(&self, feature: Feature) -> Option<f64> {
        self.values[feature.index()]
    }

    pub fn flag(&self, feature: Feature) -> Option<bool> {
        self.get(feature).map(|v| v >= 0.5)
    }

    pub fn contains(&self, feature: Feature) -> bool {
        self.get(feature).is_some()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Feature, f64)> + '_ {
        Feature::ALL
            .iter()
            .filter_map(|&f| self.get(f).map(|v| (f, v)))
    }

    pub fn len(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Serialize for RewardFeatures {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let map: BTreeMap<&str, f64> = self.iter().map(|(f, v)| (f.name(), v)).collect();
        map.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RewardFeatures {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<String, f64>::deserialize(deserializer)?;
        let mut out = RewardFeatures::new();
        for (name, value) in map {
            let feature: Feature = name.parse().map_err(serde::de::Error::custom)?;
            out.set(feature, value);
        }
        Ok(out)
    }
}

/// Features each task exposes. Templates for a task may reference any subset.
pub fn task_features(task: TaskId) -> &'static [Feature] {
    match task {
        TaskId::Touch => &[
            Feature::DistanceToTarget,
            Feature::ForceMagnitude,
            Feature::Contacted,
            Feature::CollisionDetected,
        ],
        TaskId::Grasp => &[
            Feature::DistanceToTarget,
            Feature::ForceMagnitude,
            Feature::Contacted,
            Feature::ObjectHeight,
            Feature::HeldOffFloor,
            Feature::CollisionDetected,
        ],
        TaskId::Push => &[
            Feature::DistanceToTarget,
            Feature::DistanceToGoal,
            Feature::ForceMagnitude,
            Feature::Contacted,
            Feature::CollisionDetected,
        ],
    }
}

fn norm3(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Maps a raw observation onto the named features the task's templates use.
pub fn extract_features(obs: &Observation, task: TaskId) -> Result<RewardFeatures, TemplateError> {
    let ee = obs.ee_position();
    let contacted = obs.ee_contact_force > 0.0;
    let mut out = RewardFeatures::new();
    for &feature in task_features(task) {
        match feature {
            Feature::DistanceToTarget => out.set(feature, norm3(ee, obs.target_object_pos)),
            Feature::DistanceToGoal => {
                let goal = obs
                    .goal_pos
                    .ok_or(TemplateError::MissingObservation("goal_pos"))?;
                out.set(feature, norm3(obs.target_object_pos, goal));
            }
            Feature::ForceMagnitude => out.set(feature, obs.ee_contact_force.abs()),
            Feature::Contacted => out.set_flag(feature, contacted),
            Feature::ObjectHeight => {
                let h = obs
                    .object_height
                    .ok_or(TemplateError::MissingObservation("object_height"))?;
                out.set(feature, h);
            }
            Feature::HeldOffFloor => {
                let h = obs
                    .object_height
                    .ok_or(TemplateError::MissingObservation("object_height"))?;
                out.set_flag(feature, contacted && h > RESTING_HEIGHT + 1e-3);
            }
            Feature::CollisionDetected => out.set_flag(feature, obs.collision_flag),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(ee: [f64; 3], object: [f64; 3]) -> Observation {
        Observation {
            ee_pose: [ee[0], ee[1], ee[2], 0.0],
            ee_contact_force: 0.0,
            target_object_pos: object,
            goal_pos: None,
            object_height: None,
            collision_flag: false,
        }
    }

    #[test]
    fn touch_distance_is_euclidean() {
        let f = extract_features(&obs([0.0, 0.0, 0.0], [0.3, 0.4, 0.0]), TaskId::Touch).unwrap();
        assert!((f.get(Feature::DistanceToTarget).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(f.flag(Feature::Contacted), Some(false));
    }

    #[test]
    fn push_coincident_points_have_zero_distance() {
        let mut o = obs([0.1, 0.0, 0.015], [0.1, 0.0, 0.015]);
        o.goal_pos = Some([0.1, 0.0, 0.015]);
        let f = extract_features(&o, TaskId::Push).unwrap();
        assert_eq!(f.get(Feature::DistanceToTarget), Some(0.0));
        assert_eq!(f.get(Feature::DistanceToGoal), Some(0.0));
    }

    #[test]
    fn grasp_resting_height() {
        let mut o = obs([0.0, 0.0, 0.1], [0.1, 0.0, 0.025]);
        o.object_height = Some(0.025);
        let f = extract_features(&o, TaskId::Grasp).unwrap();
        assert_eq!(f.get(Feature::ObjectHeight), Some(0.025));
        assert_eq!(f.flag(Feature::HeldOffFloor), Some(false));
    }

    #[test]
    fn missing_field_is_named() {
        let err = extract_features(&obs([0.0; 3], [0.1, 0.0, 0.0]), TaskId::Push).unwrap_err();
        assert!(err.to_string().contains("goal_pos"), "{err}");
        let err = extract_features(&obs([0.0; 3], [0.1, 0.0, 0.0]), TaskId::Grasp).unwrap_err();
        assert!(err.to_string().contains("object_height"), "{err}");
    }

    #[test]
    fn force_aliases_resolve_to_one_feature() {
        for name in ["ee_contact_force", "ee_reaction_forece", "force_magnitude"] {
            assert_eq!(name.parse::<Feature>().unwrap(), Feature::ForceMagnitude);
        }
        assert!("joint_velocity".parse::<Feature>().is_err());
    }

    #[test]
    fn serde_map_round_trip() {
        let f = RewardFeatures::new()
            .with(Feature::DistanceToGoal, 0.1833)
            .with(Feature::CollisionDetected, 0.0);
        let json = serde_json::to_string(&f).unwrap();
        assert_eq!(json, r#"{"collision_detected":0.0,"distance_to_goal":0.1833}"#);
        let back: RewardFeatures = serde_json::from_str(&json).unwrap();
        assert_eq!(back, f);
    }
}
