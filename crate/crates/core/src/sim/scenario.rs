//! Scenario files: declarative world descriptions.
//!
//! A scenario is a JSON document naming every floor, room, fixture, and
//! object (with `hidden: true` for things concealed inside containers),
//! the robot fleet with skills and motion domains, the decomposition
//! templates, the search vocabulary, and the task patterns a benchmark
//! suite is generated from. Loading validates the document; instantiating
//! builds the ground-truth world, seeds shared memory with the visible
//! part, and registers the robots.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::clock::VirtualClock;
use crate::ids::{NodeId, RobotId, ToolId};
use crate::memory::{
    AttrValue, Embodiment, Memory, NodeKind, ParentRef, Relation, RobotProfile, SceneGraph,
    SceneNode,
};
use crate::planner::GoalTemplate;
use crate::sim::world::SimWorld;
use crate::skills::ToolCatalog;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario does not parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("node {node} names unknown parent {parent}")]
    UnknownParent { node: NodeId, parent: NodeId },
    #[error("parent chain of {0} loops")]
    ParentCycle(NodeId),
    #[error("{kind:?} node {node} must have a parent")]
    MissingParent { node: NodeId, kind: NodeKind },
    #[error("hidden node {0} has no openable ancestor, nothing could ever reveal it")]
    Unrevealable(NodeId),
    #[error("duplicate robot id {0}")]
    DuplicateRobot(RobotId),
    #[error("robot {robot} names unknown room {room}")]
    UnknownRoom { robot: RobotId, room: NodeId },
    #[error("robot {robot} starts in {start}, outside its own motion domain")]
    StartOutsideDomain { robot: RobotId, start: NodeId },
    #[error("robot {robot} declares unknown skill {skill}")]
    UnknownSkill { robot: RobotId, skill: ToolId },
    #[error("vocabulary word `{word}` matches node {node}; searchable things need id `{expected}`")]
    VocabularyIdMismatch {
        word: String,
        node: NodeId,
        expected: String,
    },
    #[error("scenario has no {0}")]
    Empty(&'static str),
    #[error("scene assembly failed: {0}")]
    Assembly(String),
}

/// One node of the scenario world.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    pub kind: NodeKind,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<NodeId>,
    /// How the parent holds this node; `contains` when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<Relation>,
    #[serde(default)]
    pub position: [f64; 3],
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub affordances: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, AttrValue>,
    /// Present in the world but unknown to every robot until detected.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub hidden: bool,
}

/// One robot of the fleet.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobotSpec {
    pub id: RobotId,
    pub embodiment: Embodiment,
    pub skills: BTreeSet<ToolId>,
    /// Rooms this robot may enter.
    pub rooms: BTreeSet<NodeId>,
    /// Room the robot stands in at start.
    pub start: NodeId,
    #[serde(default)]
    pub position: [f64; 3],
}

impl RobotSpec {
    pub fn profile(&self) -> RobotProfile {
        RobotProfile {
            robot_id: self.id.clone(),
            embodiment: self.embodiment,
            skills: self.skills.clone(),
            motion_domain: self.rooms.clone(),
            home_position: self.position,
        }
    }
}

/// A validated scenario document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub nodes: Vec<NodeSpec>,
    pub robots: Vec<RobotSpec>,
    pub templates: Vec<GoalTemplate>,
    #[serde(default)]
    pub vocabulary: Vec<String>,
    /// Instruction patterns with `{object}` and `{place}` holes, used to
    /// generate benchmark task suites.
    #[serde(default)]
    pub task_patterns: Vec<String>,
}

/// A scenario brought to life.
pub struct SimInstance {
    pub clock: Arc<VirtualClock>,
    pub world: SimWorld,
    pub memory: Memory,
    pub profiles: Vec<RobotProfile>,
    pub scenario: Scenario,
}

impl Scenario {
    pub fn from_json(json: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = serde_json::from_str(json)?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// Structural soundness of the document, checked before any world is
    /// built from it.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.nodes.is_empty() {
            return Err(ScenarioError::Empty("nodes"));
        }
        if self.robots.is_empty() {
            return Err(ScenarioError::Empty("robots"));
        }
        if self.templates.is_empty() {
            return Err(ScenarioError::Empty("templates"));
        }
        let mut by_id: BTreeMap<&NodeId, &NodeSpec> = BTreeMap::new();
        for node in &self.nodes {
            if by_id.insert(&node.id, node).is_some() {
                return Err(ScenarioError::DuplicateNode(node.id.clone()));
            }
        }
        for node in &self.nodes {
            match (&node.parent, node.kind) {
                (None, NodeKind::Floor) => {}
                (None, kind) => {
                    return Err(ScenarioError::MissingParent {
                        node: node.id.clone(),
                        kind,
                    })
                }
                (Some(parent), _) => {
                    if !by_id.contains_key(parent) {
                        return Err(ScenarioError::UnknownParent {
                            node: node.id.clone(),
                            parent: parent.clone(),
                        });
                    }
                }
            }
            // walk to a root; a loop never terminates there
            let mut seen = BTreeSet::new();
            let mut current = node;
            while let Some(parent) = &current.parent {
                if !seen.insert(parent.clone()) {
                    return Err(ScenarioError::ParentCycle(node.id.clone()));
                }
                current = by_id[parent];
            }
            if node.hidden {
                let mut concealed = false;
                let mut current = node;
                while let Some(parent) = &current.parent {
                    let parent = by_id[parent];
                    if parent.affordances.contains("openable") {
                        concealed = true;
                        break;
                    }
                    current = parent;
                }
                if !concealed {
                    return Err(ScenarioError::Unrevealable(node.id.clone()));
                }
            }
        }
        let catalog = ToolCatalog::builtin();
        let mut robot_ids = BTreeSet::new();
        for robot in &self.robots {
            if !robot_ids.insert(robot.id.clone()) {
                return Err(ScenarioError::DuplicateRobot(robot.id.clone()));
            }
            for room in robot.rooms.iter().chain([&robot.start]) {
                match by_id.get(room) {
                    Some(spec) if spec.kind == NodeKind::Room => {}
                    _ => {
                        return Err(ScenarioError::UnknownRoom {
                            robot: robot.id.clone(),
                            room: room.clone(),
                        })
                    }
                }
            }
            if !robot.rooms.contains(&robot.start) {
                return Err(ScenarioError::StartOutsideDomain {
                    robot: robot.id.clone(),
                    start: robot.start.clone(),
                });
            }
            for skill in &robot.skills {
                if catalog.get(skill).is_none() {
                    return Err(ScenarioError::UnknownSkill {
                        robot: robot.id.clone(),
                        skill: skill.clone(),
                    });
                }
            }
        }
        // searchable things must be addressable before they are seen: a
        // vocabulary word that names a real node must equal that node's id
        // (spaces as underscores), so conditions unify once it is revealed
        for word in &self.vocabulary {
            let expected = word.to_lowercase().replace(' ', "_");
            for node in &self.nodes {
                if node.label.eq_ignore_ascii_case(word) && node.id.as_str() != expected {
                    return Err(ScenarioError::VocabularyIdMismatch {
                        word: word.clone(),
                        node: node.id.clone(),
                        expected,
                    });
                }
            }
        }
        Ok(())
    }

    /// Build the ground truth, seed shared memory with the visible part,
    /// and register every robot.
    pub fn instantiate(&self) -> Result<SimInstance, ScenarioError> {
        let clock = Arc::new(VirtualClock::new());
        let mut scene = SceneGraph::new();
        let mut hidden = BTreeSet::new();
        let mut pending: Vec<&NodeSpec> = self.nodes.iter().collect();
        // parents must exist before children; loop until a pass inserts
        // nothing (validate() already ruled out cycles and broken refs)
        while !pending.is_empty() {
            let before = pending.len();
            pending.retain(|spec| {
                let parent_ready = spec
                    .parent
                    .as_ref()
                    .map(|p| scene.node(p).is_some())
                    .unwrap_or(true);
                if !parent_ready {
                    return true;
                }
                let mut node = SceneNode::new(spec.id.clone(), spec.kind, spec.label.clone())
                    .at(spec.position);
                node.affordances = spec.affordances.clone();
                node.attributes = spec.attributes.clone();
                let parent = spec.parent.as_ref().map(|p| ParentRef {
                    node: p.clone(),
                    relation: spec.relation.unwrap_or(Relation::Contains),
                });
                if let Err(e) = scene.upsert_node(node, parent, crate::ids::Timestamp::ZERO) {
                    // surfaced after the loop through the assembly error
                    log::error!("scenario node {} rejected: {e}", spec.id);
                }
                if spec.hidden {
                    hidden.insert(spec.id.clone());
                }
                false
            });
            if pending.len() == before {
                return Err(ScenarioError::Assembly(format!(
                    "{} nodes never became insertable",
                    pending.len()
                )));
            }
        }
        for robot in &self.robots {
            let start_position = scene
                .node(&robot.start)
                .map(|n| n.position)
                .unwrap_or(robot.position);
            let body = SceneNode::new(robot.id.as_str(), NodeKind::Object, robot.id.as_str())
                .at(start_position)
                .with_affordance("robot");
            scene
                .upsert_node(
                    body,
                    Some(ParentRef::contains(robot.start.clone())),
                    crate::ids::Timestamp::ZERO,
                )
                .map_err(|e| ScenarioError::Assembly(e.to_string()))?;
        }
        scene
            .validate()
            .map_err(|e| ScenarioError::Assembly(e.to_string()))?;

        let world = SimWorld::new(scene, hidden);
        let memory = Memory::with_scene(Arc::clone(&clock) as Arc<dyn crate::clock::Clock>, {
            let believed = world.visible_scene();
            believed
                .validate()
                .map_err(|e| ScenarioError::Assembly(e.to_string()))?;
            believed
        });
        let mut profiles = Vec::new();
        for robot in &self.robots {
            let profile = robot.profile();
            memory
                .register_robot(profile.clone())
                .map_err(|e| ScenarioError::Assembly(e.to_string()))?;
            profiles.push(profile);
        }
        Ok(SimInstance {
            clock,
            world,
            memory,
            profiles,
            scenario: self.clone(),
        })
    }

    /// Graspable object labels usable in task patterns: visible graspable
    /// nodes plus the search vocabulary, deduplicated, sorted.
    pub fn object_labels(&self) -> Vec<String> {
        let mut labels: BTreeSet<String> = self
            .nodes
            .iter()
            .filter(|n| n.affordances.contains("graspable"))
            .map(|n| n.label.to_lowercase())
            .collect();
        labels.extend(self.vocabulary.iter().map(|v| v.to_lowercase()));
        labels.into_iter().collect()
    }

    /// Destination labels usable in task patterns: fixtures that take
    /// things on or in them, sorted.
    pub fn place_labels(&self) -> Vec<String> {
        self.nodes
            .iter()
            .filter(|n| {
                !n.hidden
                    && (n.affordances.contains("surface") || n.affordances.contains("container"))
                    && !n.affordances.contains("graspable")
            })
            .map(|n| n.label.to_lowercase())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

/// The three bundled worlds.
pub const BUNDLED: &[(&str, &str)] = &[
    ("household", include_str!("../../assets/scenarios/household.json")),
    ("restaurant", include_str!("../../assets/scenarios/restaurant.json")),
    ("supermarket", include_str!("../../assets/scenarios/supermarket.json")),
];

/// Load a bundled scenario by name.
pub fn bundled(name: &str) -> Option<Result<Scenario, ScenarioError>> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, json)| Scenario::from_json(json))
}
