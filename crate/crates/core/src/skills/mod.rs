//! Skill library: the tool catalog, per-robot skill binding, invocation
//! validation, and deterministic failure injection.
//!
//! Tools are declared once in a catalog with their parameter schema,
//! compatible embodiments, and nominal duration. A robot may only invoke
//! tools that are both in its registered skill list and compatible with its
//! embodiment; every invocation is validated against the profile before it
//! runs. Execution semantics (what a tool does to the world) live with the
//! world model, keeping this module free of environment assumptions.

mod failure;

pub use failure::{FailureInjection, FailurePolicy, InjectedFailure, InjectionMode};

use crate::ids::{InvocationId, RobotId, SubtaskId, Timestamp, ToolId};
use crate::memory::{Embodiment, RobotProfile};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SkillError {
    #[error("tool {0} is already registered")]
    DuplicateTool(ToolId),
    #[error("tool {0} is not in the catalog")]
    UnknownTool(ToolId),
    #[error("robot {robot} has no skill {tool}")]
    NotBound { robot: RobotId, tool: ToolId },
    #[error("tool {tool} is incompatible with {embodiment} robots")]
    IncompatibleEmbodiment {
        tool: ToolId,
        embodiment: Embodiment,
    },
    #[error("tool {tool}: missing required argument `{arg}`")]
    MissingArg { tool: ToolId, arg: String },
    #[error("tool {tool}: unknown argument `{arg}`")]
    UnknownArg { tool: ToolId, arg: String },
    #[error("invalid tool profile: {0}")]
    InvalidProfile(String),
}

/// One declared tool parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub required: bool,
}

impl ParamSpec {
    pub fn required(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            required: true,
        }
    }

    pub fn optional(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            required: false,
        }
    }
}

/// Broad class of a tool, used for display and prompt rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolCategory {
    Manipulation,
    Navigation,
    Perception,
    Special,
}

/// Declared world effect of a successful execution. The simulated world
/// interprets these templates; declaring them on the profile keeps the
/// catalog self-describing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum EffectTemplate {
    /// The robot moves to the target node's location.
    MoveRobot,
    /// The target object becomes held by (supported by) the robot.
    AttachToRobot,
    /// Everything the robot holds re-parents to the target.
    ReleaseHeldTo,
    /// An attribute on the target is set to a fixed value.
    SetAttribute { key: String, value: bool },
    /// The call returns an observation instead of moving anything.
    Perceive,
}

/// Catalog entry describing a tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolProfile {
    pub id: ToolId,
    pub category: ToolCategory,
    pub description: String,
    pub params: Vec<ParamSpec>,
    /// What a successful run does to the world.
    pub effects: Vec<EffectTemplate>,
    /// Embodiments whose hardware can run this tool.
    pub compatible: BTreeSet<Embodiment>,
    /// Nominal wall time of one execution.
    pub duration_ms: u64,
}

/// Registry of tool profiles.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ToolCatalog {
    tools: BTreeMap<ToolId, ToolProfile>,
}

const ALL_EMBODIMENTS: [Embodiment; 4] = [
    Embodiment::SingleArm,
    Embodiment::DualArm,
    Embodiment::Wheeled,
    Embodiment::Humanoid,
];

impl ToolCatalog {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The standard tool set every deployment starts from.
    pub fn builtin() -> Self {
        let mut catalog = Self::default();
        let all: BTreeSet<Embodiment> = ALL_EMBODIMENTS.into_iter().collect();
        let mobile: BTreeSet<Embodiment> = [
            Embodiment::DualArm,
            Embodiment::Wheeled,
            Embodiment::Humanoid,
        ]
        .into_iter()
        .collect();
        let two_handed: BTreeSet<Embodiment> =
            [Embodiment::DualArm, Embodiment::Humanoid].into_iter().collect();

        type Entry = (
            &'static str,
            ToolCategory,
            &'static str,
            Vec<EffectTemplate>,
            BTreeSet<Embodiment>,
            u64,
        );
        let entries: [Entry; 7] = [
            (
                "navigate",
                ToolCategory::Navigation,
                "move to the named node's location",
                vec![EffectTemplate::MoveRobot],
                mobile,
                5000,
            ),
            (
                "detect",
                ToolCategory::Perception,
                "scan the current room for a label",
                vec![EffectTemplate::Perceive],
                all.clone(),
                1000,
            ),
            (
                "grasp",
                ToolCategory::Manipulation,
                "pick up the named object",
                vec![EffectTemplate::AttachToRobot],
                all.clone(),
                3000,
            ),
            (
                "place",
                ToolCategory::Manipulation,
                "put the held object onto or into the named node",
                vec![EffectTemplate::ReleaseHeldTo],
                all.clone(),
                2000,
            ),
            (
                "handover",
                ToolCategory::Manipulation,
                "pass held objects to a robot or deposit them at a fixture",
                vec![EffectTemplate::ReleaseHeldTo],
                all.clone(),
                3000,
            ),
            (
                "open_container",
                ToolCategory::Special,
                "open the named container",
                vec![EffectTemplate::SetAttribute {
                    key: "open".into(),
                    value: true,
                }],
                all,
                2000,
            ),
            (
                "pour",
                ToolCategory::Special,
                "pour from the held container into the named vessel",
                vec![EffectTemplate::SetAttribute {
                    key: "filled".into(),
                    value: true,
                }],
                two_handed,
                3000,
            ),
        ];
        for (id, category, desc, effects, compatible, duration_ms) in entries {
            let mut params = vec![ParamSpec::required("target")];
            match id {
                // barrier token shared by collaborating assignees
                "handover" => params.push(ParamSpec::optional("rendezvous")),
                // what to pour out of; must already be in the gripper
                "pour" => params.push(ParamSpec::required("source")),
                _ => {}
            }
            catalog
                .register(ToolProfile {
                    id: ToolId::from(id),
                    category,
                    description: desc.into(),
                    params,
                    effects,
                    compatible,
                    duration_ms,
                })
                .expect("builtin catalog has unique ids");
        }
        catalog
    }

    pub fn register(&mut self, profile: ToolProfile) -> Result<(), SkillError> {
        if profile.id.as_str().is_empty() {
            return Err(SkillError::InvalidProfile("empty tool id".into()));
        }
        if profile.compatible.is_empty() {
            return Err(SkillError::InvalidProfile(format!(
                "{}: no compatible embodiment",
                profile.id
            )));
        }
        let mut names = BTreeSet::new();
        for param in &profile.params {
            if !names.insert(param.name.clone()) {
                return Err(SkillError::InvalidProfile(format!(
                    "{}: duplicate parameter `{}`",
                    profile.id, param.name
                )));
            }
        }
        let mut effects = BTreeSet::new();
        for effect in &profile.effects {
            if !effects.insert(format!("{effect:?}")) {
                return Err(SkillError::InvalidProfile(format!(
                    "{}: duplicate effect {effect:?}",
                    profile.id
                )));
            }
        }
        if self.tools.contains_key(&profile.id) {
            return Err(SkillError::DuplicateTool(profile.id));
        }
        self.tools.insert(profile.id.clone(), profile);
        Ok(())
    }

    pub fn get(&self, id: &ToolId) -> Option<&ToolProfile> {
        self.tools.get(id)
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &ToolId> {
        self.tools.keys()
    }

    /// Tools this robot may actually invoke: its skill list intersected with
    /// the catalog, restricted to its embodiment.
    pub fn bind(&self, robot: &RobotProfile) -> BTreeSet<ToolId> {
        robot
            .skills
            .iter()
            .filter(|id| {
                self.tools
                    .get(*id)
                    .map(|t| t.compatible.contains(&robot.embodiment))
                    .unwrap_or(false)
            })
            .cloned()
            .collect()
    }

    /// Full invocation check: catalog membership, binding, embodiment, and
    /// argument schema. Returns the tool profile so callers can read its
    /// duration.
    pub fn validate_invocation(
        &self,
        robot: &RobotProfile,
        invocation: &ToolInvocation,
    ) -> Result<&ToolProfile, SkillError> {
        let tool = self
            .tools
            .get(&invocation.tool)
            .ok_or_else(|| SkillError::UnknownTool(invocation.tool.clone()))?;
        if !robot.skills.contains(&invocation.tool) {
            return Err(SkillError::NotBound {
                robot: robot.robot_id.clone(),
                tool: invocation.tool.clone(),
            });
        }
        if !tool.compatible.contains(&robot.embodiment) {
            return Err(SkillError::IncompatibleEmbodiment {
                tool: invocation.tool.clone(),
                embodiment: robot.embodiment,
            });
        }
        for param in &tool.params {
            if param.required && !invocation.args.contains_key(&param.name) {
                return Err(SkillError::MissingArg {
                    tool: invocation.tool.clone(),
                    arg: param.name.clone(),
                });
            }
        }
        for arg in invocation.args.keys() {
            if !tool.params.iter().any(|p| &p.name == arg) {
                return Err(SkillError::UnknownArg {
                    tool: invocation.tool.clone(),
                    arg: arg.clone(),
                });
            }
        }
        Ok(tool)
    }
}

/// One tool call as issued by an agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInvocation {
    pub id: InvocationId,
    pub robot: RobotId,
    pub tool: ToolId,
    pub args: BTreeMap<String, String>,
    pub subtask: Option<SubtaskId>,
    /// Global invocation counter within a run; keys failure draws.
    pub seq: u64,
}

impl ToolInvocation {
    pub fn new(
        seq: u64,
        robot: impl Into<RobotId>,
        tool: impl Into<ToolId>,
        target: impl Into<String>,
    ) -> Self {
        Self {
            id: InvocationId::from(format!("inv-{seq:06}")),
            robot: robot.into(),
            tool: tool.into(),
            args: [("target".to_string(), target.into())].into_iter().collect(),
            subtask: None,
            seq,
        }
    }

    pub fn for_subtask(mut self, subtask: SubtaskId) -> Self {
        self.subtask = Some(subtask);
        self
    }

    pub fn target(&self) -> Option<&str> {
        self.args.get("target").map(|s| s.as_str())
    }
}

/// Why an invocation did not succeed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailReason {
    /// The sought thing is not observable where the robot looked.
    NotFound,
    /// Injected or environmental hiccup; retrying the same call can work.
    Transient,
    /// The world refuses the action (wrong room, closed container, busy
    /// gripper); retrying unchanged will keep failing.
    Blocked(String),
    /// A collaboration partner missed the rendezvous window.
    Rendezvous,
}

/// Terminal state of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum InvocationOutcome {
    Success,
    /// Pre-execution validation failure; consumed no execution time.
    Rejected { reason: String },
    Failure { reason: FailReason },
}

impl InvocationOutcome {
    pub fn is_success(&self) -> bool {
        matches!(self, InvocationOutcome::Success)
    }
}

/// Completion record for one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub invocation: InvocationId,
    pub robot: RobotId,
    pub tool: ToolId,
    pub outcome: InvocationOutcome,
    pub started_at: Timestamp,
    pub completed_at: Timestamp,
    /// Perception payload (node ids seen), present for successful detects.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<serde_json::Value>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::NodeId;

    fn robot(embodiment: Embodiment, skills: &[&str]) -> RobotProfile {
        RobotProfile {
            robot_id: RobotId::from("r1"),
            embodiment,
            skills: skills.iter().map(|s| ToolId::from(*s)).collect(),
            motion_domain: [NodeId::from("kitchen")].into_iter().collect(),
            home_position: [0.0; 3],
        }
    }

    #[test]
    fn builtin_catalog_has_the_expected_tools() {
        let catalog = ToolCatalog::builtin();
        let ids: Vec<&str> = catalog.ids().map(|t| t.as_str()).collect();
        assert_eq!(
            ids,
            vec![
                "detect",
                "grasp",
                "handover",
                "navigate",
                "open_container",
                "place",
                "pour"
            ]
        );
    }

    #[test]
    fn duplicate_registration_is_rejected() {
        let mut catalog = ToolCatalog::builtin();
        let err = catalog
            .register(ToolProfile {
                id: ToolId::from("grasp"),
                category: ToolCategory::Manipulation,
                description: "again".into(),
                params: vec![],
                effects: vec![],
                compatible: [Embodiment::Wheeled].into_iter().collect(),
                duration_ms: 1,
            })
            .unwrap_err();
        assert_eq!(err, SkillError::DuplicateTool(ToolId::from("grasp")));
    }

    #[test]
    fn profile_validation_catches_bad_declarations() {
        let mut catalog = ToolCatalog::empty();
        assert!(matches!(
            catalog.register(ToolProfile {
                id: ToolId::from("x"),
                category: ToolCategory::Special,
                description: String::new(),
                params: vec![],
                effects: vec![],
                compatible: BTreeSet::new(),
                duration_ms: 1,
            }),
            Err(SkillError::InvalidProfile(_))
        ));
        assert!(matches!(
            catalog.register(ToolProfile {
                id: ToolId::from("y"),
                category: ToolCategory::Special,
                description: String::new(),
                params: vec![ParamSpec::required("a"), ParamSpec::required("a")],
                effects: vec![],
                compatible: [Embodiment::Wheeled].into_iter().collect(),
                duration_ms: 1,
            }),
            Err(SkillError::InvalidProfile(_))
        ));
        assert!(matches!(
            catalog.register(ToolProfile {
                id: ToolId::from("z"),
                category: ToolCategory::Navigation,
                description: String::new(),
                params: vec![],
                effects: vec![EffectTemplate::MoveRobot, EffectTemplate::MoveRobot],
                compatible: [Embodiment::Wheeled].into_iter().collect(),
                duration_ms: 1,
            }),
            Err(SkillError::InvalidProfile(_))
        ));
    }

    #[test]
    fn binding_intersects_skills_catalog_and_embodiment() {
        let catalog = ToolCatalog::builtin();
        // single-arm robots cannot navigate or pour regardless of skill list
        let fixed = robot(
            Embodiment::SingleArm,
            &["navigate", "grasp", "pour", "sharpen"],
        );
        let bound = catalog.bind(&fixed);
        assert_eq!(
            bound,
            [ToolId::from("grasp")].into_iter().collect::<BTreeSet<_>>()
        );

        let humanoid = robot(Embodiment::Humanoid, &["navigate", "grasp", "pour"]);
        let bound = catalog.bind(&humanoid);
        assert_eq!(bound.len(), 3);
    }

    #[test]
    fn invocation_validation_accepts_well_formed_calls() {
        let catalog = ToolCatalog::builtin();
        let r = robot(Embodiment::Wheeled, &["navigate", "grasp"]);
        let inv = ToolInvocation::new(1, "r1", "navigate", "kitchen");
        let tool = catalog.validate_invocation(&r, &inv).unwrap();
        assert_eq!(tool.duration_ms, 5000);
    }

    #[test]
    fn invocation_validation_rejects_each_violation() {
        let catalog = ToolCatalog::builtin();
        let r = robot(Embodiment::Wheeled, &["navigate", "grasp"]);

        let unknown = ToolInvocation::new(1, "r1", "teleport", "kitchen");
        assert!(matches!(
            catalog.validate_invocation(&r, &unknown),
            Err(SkillError::UnknownTool(_))
        ));

        let unbound = ToolInvocation::new(2, "r1", "place", "table");
        assert!(matches!(
            catalog.validate_invocation(&r, &unbound),
            Err(SkillError::NotBound { .. })
        ));

        let fixed = robot(Embodiment::SingleArm, &["navigate"]);
        let wrong_body = ToolInvocation::new(3, "r1", "navigate", "kitchen");
        assert!(matches!(
            catalog.validate_invocation(&fixed, &wrong_body),
            Err(SkillError::IncompatibleEmbodiment { .. })
        ));

        let mut missing = ToolInvocation::new(4, "r1", "grasp", "cup");
        missing.args.clear();
        assert!(matches!(
            catalog.validate_invocation(&r, &missing),
            Err(SkillError::MissingArg { .. })
        ));

        let mut extra = ToolInvocation::new(5, "r1", "grasp", "cup");
        extra.args.insert("force".into(), "11".into());
        assert!(matches!(
            catalog.validate_invocation(&r, &extra),
            Err(SkillError::UnknownArg { .. })
        ));
    }

    #[test]
    fn catalog_serde_round_trip() {
        let catalog = ToolCatalog::builtin();
        let json = serde_json::to_string(&catalog).unwrap();
        let back: ToolCatalog = serde_json::from_str(&json).unwrap();
        assert_eq!(catalog, back);
    }
}
