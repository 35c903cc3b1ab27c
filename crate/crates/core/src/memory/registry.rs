//! Robot registry: static capability profiles plus live state.
//!
//! A robot is busy exactly when it carries a current subtask; that pairing is
//! enforced here so schedulers can trust the registry.

use crate::ids::{NodeId, RobotId, SubtaskId, ToolId};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::MemoryError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Embodiment {
    SingleArm,
    DualArm,
    Wheeled,
    Humanoid,
}

impl fmt::Display for Embodiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Embodiment::SingleArm => "single_arm",
            Embodiment::DualArm => "dual_arm",
            Embodiment::Wheeled => "wheeled",
            Embodiment::Humanoid => "humanoid",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobotStatus {
    Idle,
    Busy,
    Offline,
}

/// Static description of what a robot can do and where it may move.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotProfile {
    pub robot_id: RobotId,
    pub embodiment: Embodiment,
    /// Tools the robot's controller implements.
    pub skills: BTreeSet<ToolId>,
    /// Rooms the robot may enter.
    pub motion_domain: BTreeSet<NodeId>,
    pub home_position: [f64; 3],
}

/// Live state mirrored into shared memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub robot_id: RobotId,
    pub status: RobotStatus,
    /// Charge fraction in [0, 1].
    pub battery: f64,
    #[serde(default)]
    pub joint_summary: BTreeMap<String, f64>,
    pub current_subtask: Option<SubtaskId>,
    pub position: [f64; 3],
}

/// Partial state update; unset fields keep their value.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StatePatch {
    pub status: Option<RobotStatus>,
    pub battery: Option<f64>,
    pub joint_summary: Option<BTreeMap<String, f64>>,
    /// Outer option: whether to touch the field. Inner: the new value.
    pub current_subtask: Option<Option<SubtaskId>>,
    pub position: Option<[f64; 3]>,
}

impl StatePatch {
    pub fn status(status: RobotStatus) -> Self {
        Self {
            status: Some(status),
            ..Self::default()
        }
    }

    pub fn busy_on(subtask: SubtaskId) -> Self {
        Self {
            status: Some(RobotStatus::Busy),
            current_subtask: Some(Some(subtask)),
            ..Self::default()
        }
    }

    pub fn idle() -> Self {
        Self {
            status: Some(RobotStatus::Idle),
            current_subtask: Some(None),
            ..Self::default()
        }
    }

    pub fn at(mut self, position: [f64; 3]) -> Self {
        self.position = Some(position);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    robots: BTreeMap<RobotId, RegisteredRobot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisteredRobot {
    pub profile: RobotProfile,
    pub state: RobotState,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.robots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.robots.is_empty()
    }

    pub fn get(&self, id: &RobotId) -> Option<&RegisteredRobot> {
        self.robots.get(id)
    }

    pub fn profile(&self, id: &RobotId) -> Option<&RobotProfile> {
        self.robots.get(id).map(|r| &r.profile)
    }

    pub fn state(&self, id: &RobotId) -> Option<&RobotState> {
        self.robots.get(id).map(|r| &r.state)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&RobotId, &RegisteredRobot)> {
        self.robots.iter()
    }

    pub fn robot_ids(&self) -> impl Iterator<Item = &RobotId> {
        self.robots.keys()
    }

    /// Register a robot. Re-registering with an identical profile is a no-op;
    /// a changed embodiment under the same id is a conflict; other profile
    /// changes replace the stored profile and keep the live state.
    pub fn register(&mut self, profile: RobotProfile) -> Result<RobotId, MemoryError> {
        if profile.skills.is_empty() {
            return Err(MemoryError::InvalidProfile(format!(
                "{}: empty skill set",
                profile.robot_id
            )));
        }
        if profile.motion_domain.is_empty() {
            return Err(MemoryError::InvalidProfile(format!(
                "{}: empty motion domain",
                profile.robot_id
            )));
        }
        let id = profile.robot_id.clone();
        match self.robots.get_mut(&id) {
            Some(existing) => {
                if existing.profile.embodiment != profile.embodiment {
                    return Err(MemoryError::ConflictingRegistration {
                        robot: id,
                        existing: existing.profile.embodiment,
                        requested: profile.embodiment,
                    });
                }
                existing.profile = profile;
            }
            None => {
                let state = RobotState {
                    robot_id: id.clone(),
                    status: RobotStatus::Idle,
                    battery: 1.0,
                    joint_summary: BTreeMap::new(),
                    current_subtask: None,
                    position: profile.home_position,
                };
                self.robots.insert(id.clone(), RegisteredRobot { profile, state });
            }
        }
        Ok(id)
    }

    /// Apply a partial state update, enforcing battery range and the
    /// busy-iff-assigned rule.
    pub fn update_state(
        &mut self,
        id: &RobotId,
        patch: &StatePatch,
    ) -> Result<RobotState, MemoryError> {
        let robot = self
            .robots
            .get_mut(id)
            .ok_or_else(|| MemoryError::UnknownRobot(id.clone()))?;
        let mut next = robot.state.clone();
        if let Some(status) = patch.status {
            next.status = status;
        }
        if let Some(battery) = patch.battery {
            if !(0.0..=1.0).contains(&battery) || battery.is_nan() {
                return Err(MemoryError::BatteryRange(battery));
            }
            next.battery = battery;
        }
        if let Some(joints) = &patch.joint_summary {
            next.joint_summary = joints.clone();
        }
        if let Some(subtask) = &patch.current_subtask {
            next.current_subtask = subtask.clone();
        }
        if let Some(position) = patch.position {
            next.position = position;
        }
        let busy = next.status == RobotStatus::Busy;
        if busy != next.current_subtask.is_some() {
            return Err(MemoryError::StateInvariant(format!(
                "{id}: status {:?} with current_subtask {:?}",
                next.status, next.current_subtask
            )));
        }
        robot.state = next.clone();
        Ok(next)
    }

    /// Robots whose skills cover `required` and whose motion domain covers
    /// `rooms`, ordered by id.
    pub fn capable_robots(
        &self,
        required: &BTreeSet<ToolId>,
        rooms: &BTreeSet<NodeId>,
    ) -> Vec<RobotId> {
        self.robots
            .values()
            .filter(|r| required.is_subset(&r.profile.skills))
            .filter(|r| rooms.is_subset(&r.profile.motion_domain))
            .map(|r| r.profile.robot_id.clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(id: &str) -> RobotProfile {
        RobotProfile {
            robot_id: RobotId::from(id),
            embodiment: Embodiment::Wheeled,
            skills: [ToolId::from("navigate"), ToolId::from("grasp")]
                .into_iter()
                .collect(),
            motion_domain: [NodeId::from("kitchen"), NodeId::from("living_room")]
                .into_iter()
                .collect(),
            home_position: [0.0, 0.0, 0.0],
        }
    }

    #[test]
    fn register_starts_idle_at_home() {
        let mut reg = Registry::new();
        let id = reg.register(profile("r1")).unwrap();
        let state = reg.state(&id).unwrap();
        assert_eq!(state.status, RobotStatus::Idle);
        assert_eq!(state.battery, 1.0);
        assert_eq!(state.position, [0.0, 0.0, 0.0]);
        assert!(state.current_subtask.is_none());
    }

    #[test]
    fn duplicate_identical_registration_is_idempotent() {
        let mut reg = Registry::new();
        reg.register(profile("r1")).unwrap();
        reg.update_state(
            &RobotId::from("r1"),
            &StatePatch {
                battery: Some(0.5),
                ..StatePatch::default()
            },
        )
        .unwrap();
        reg.register(profile("r1")).unwrap();
        assert_eq!(reg.len(), 1);
        // re-registration does not reset live state
        assert_eq!(reg.state(&RobotId::from("r1")).unwrap().battery, 0.5);
    }

    #[test]
    fn changed_embodiment_is_a_conflict() {
        let mut reg = Registry::new();
        reg.register(profile("r1")).unwrap();
        let mut other = profile("r1");
        other.embodiment = Embodiment::Humanoid;
        let err = reg.register(other).unwrap_err();
        assert!(matches!(err, MemoryError::ConflictingRegistration { .. }));
    }

    #[test]
    fn empty_skills_rejected() {
        let mut reg = Registry::new();
        let mut p = profile("r1");
        p.skills.clear();
        assert!(matches!(
            reg.register(p),
            Err(MemoryError::InvalidProfile(_))
        ));
    }

    #[test]
    fn battery_out_of_range_rejected() {
        let mut reg = Registry::new();
        reg.register(profile("r1")).unwrap();
        let err = reg
            .update_state(
                &RobotId::from("r1"),
                &StatePatch {
                    battery: Some(1.5),
                    ..StatePatch::default()
                },
            )
            .unwrap_err();
        assert!(matches!(err, MemoryError::BatteryRange(_)));
    }

    #[test]
    fn busy_requires_subtask_and_vice_versa() {
        let mut reg = Registry::new();
        reg.register(profile("r1")).unwrap();
        let id = RobotId::from("r1");
        // busy without subtask
        assert!(matches!(
            reg.update_state(&id, &StatePatch::status(RobotStatus::Busy)),
            Err(MemoryError::StateInvariant(_))
        ));
        // busy with subtask is fine
        reg.update_state(&id, &StatePatch::busy_on(SubtaskId::from("s1")))
            .unwrap();
        // idle while still holding a subtask
        let mut bad = StatePatch::status(RobotStatus::Idle);
        bad.current_subtask = None; // leaves the subtask in place
        assert!(matches!(
            reg.update_state(&id, &bad),
            Err(MemoryError::StateInvariant(_))
        ));
        // releasing both together works
        reg.update_state(&id, &StatePatch::idle()).unwrap();
        assert_eq!(reg.state(&id).unwrap().status, RobotStatus::Idle);
    }

    #[test]
    fn failed_patch_changes_nothing() {
        let mut reg = Registry::new();
        reg.register(profile("r1")).unwrap();
        let id = RobotId::from("r1");
        let before = reg.state(&id).unwrap().clone();
        let mut patch = StatePatch::status(RobotStatus::Busy); // missing subtask
        patch.battery = Some(0.4);
        assert!(reg.update_state(&id, &patch).is_err());
        assert_eq!(reg.state(&id).unwrap(), &before);
    }

    #[test]
    fn capability_filter_respects_skills_and_rooms() {
        let mut reg = Registry::new();
        reg.register(profile("r1")).unwrap();
        let mut p2 = profile("r2");
        p2.skills.insert(ToolId::from("pour"));
        reg.register(p2).unwrap();

        let need_pour: BTreeSet<ToolId> = [ToolId::from("pour")].into_iter().collect();
        let kitchen: BTreeSet<NodeId> = [NodeId::from("kitchen")].into_iter().collect();
        assert_eq!(
            reg.capable_robots(&need_pour, &kitchen),
            vec![RobotId::from("r2")]
        );

        let pantry: BTreeSet<NodeId> = [NodeId::from("pantry")].into_iter().collect();
        assert!(reg.capable_robots(&need_pour, &pantry).is_empty());
    }
}
