//! Subtask graphs: the unit of work the scheduler dispatches.
//!
//! A task decomposes into subtasks linked by prerequisite edges. The graph
//! must be acyclic; depth is 1 + the maximum prerequisite depth, so every
//! root sits at depth 1 and depth classes give the parallel execution waves.

use crate::ids::{GraphId, NodeId, RobotId, SubtaskId, TaskId, Timestamp};
use crate::memory::{AttrValue, Relation, SceneGraph};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("subtask {subtask} references unknown prerequisite {missing}")]
    UnknownPrerequisite {
        subtask: SubtaskId,
        missing: SubtaskId,
    },
    #[error("prerequisite cycle through {0:?}")]
    Cycle(Vec<SubtaskId>),
    #[error("subtask {subtask}: {reason}")]
    BadAssignees { subtask: SubtaskId, reason: String },
    #[error("subtask {subtask} has no goal")]
    EmptyGoal { subtask: SubtaskId },
    #[error("subtask {subtask}: declared depth {declared} but prerequisites give {computed}")]
    DepthMismatch {
        subtask: SubtaskId,
        declared: u32,
        computed: u32,
    },
    #[error("no goal template matches the task: {0}")]
    NoTemplate(String),
    #[error("task cannot be planned: {0}")]
    Infeasible(String),
}

/// Whether one robot works alone or several must coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubtaskKind {
    Single,
    Collaborative,
}

/// Declarative goal condition evaluated against the scene graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Condition {
    /// `object` rests on `target` (a supports edge).
    PlacedOn { object: NodeId, target: NodeId },
    /// `object` is inside `target` (a contains edge).
    ContainedIn { object: NodeId, target: NodeId },
    /// `object` is carried by `robot` (supports edge from the robot's node).
    HeldBy { object: NodeId, robot: RobotId },
    /// Node attribute equals the given value.
    Attribute {
        node: NodeId,
        key: String,
        value: AttrValue,
    },
    /// The robot's scene node is in the given room.
    RobotIn { robot: RobotId, room: NodeId },
}

impl Condition {
    /// True when the condition holds in the given scene. Unknown nodes make
    /// a condition false, never an error.
    pub fn eval(&self, scene: &SceneGraph) -> bool {
        match self {
            Condition::PlacedOn { object, target } => {
                scene.parent_of(object) == Some((target.clone(), Relation::Supports))
            }
            Condition::ContainedIn { object, target } => {
                scene.parent_of(object) == Some((target.clone(), Relation::Contains))
            }
            Condition::HeldBy { object, robot } => {
                let robot_node = NodeId::from(robot.as_str());
                scene.parent_of(object) == Some((robot_node, Relation::Supports))
            }
            Condition::Attribute { node, key, value } => scene
                .node(node)
                .and_then(|n| n.attributes.get(key))
                .map(|v| v == value)
                .unwrap_or(false),
            Condition::RobotIn { robot, room } => {
                let robot_node = NodeId::from(robot.as_str());
                scene.room_of(&robot_node).as_ref() == Some(room)
            }
        }
    }

    /// The object this condition is about, when there is one.
    pub fn object(&self) -> Option<&NodeId> {
        match self {
            Condition::PlacedOn { object, .. }
            | Condition::ContainedIn { object, .. }
            | Condition::HeldBy { object, .. } => Some(object),
            Condition::Attribute { node, .. } => Some(node),
            Condition::RobotIn { .. } => None,
        }
    }
}

/// Collaboration meeting point; the scheduler mints the barrier token when
/// it dispatches the subtask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RendezvousSpec {
    pub location: NodeId,
    /// Overrides the configured default when set.
    pub timeout_ms: Option<u64>,
}

/// One schedulable unit of work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subtask {
    pub id: SubtaskId,
    pub description: String,
    pub kind: SubtaskKind,
    /// Exactly one robot for single subtasks, two or more for collaborative.
    pub assignees: Vec<RobotId>,
    #[serde(default)]
    pub prerequisites: BTreeSet<SubtaskId>,
    /// Conjunction; the subtask succeeds when every condition holds.
    pub goal: Vec<Condition>,
    /// Room where the work happens, when known up front.
    #[serde(default)]
    pub target_room: Option<NodeId>,
    #[serde(default)]
    pub rendezvous: Option<RendezvousSpec>,
    /// Free-form guidance for the executing agent (e.g. a pour source).
    #[serde(default)]
    pub hints: BTreeMap<String, String>,
    /// Cached topological depth; prerequisites are the ground truth and
    /// `validate` cross-checks any value stored here.
    #[serde(default)]
    pub depth: Option<u32>,
}

impl Subtask {
    pub fn single(
        id: impl Into<SubtaskId>,
        description: impl Into<String>,
        robot: RobotId,
        goal: Vec<Condition>,
    ) -> Self {
        Self {
            id: id.into(),
            description: description.into(),
            kind: SubtaskKind::Single,
            assignees: vec![robot],
            prerequisites: BTreeSet::new(),
            goal,
            target_room: None,
            rendezvous: None,
            hints: BTreeMap::new(),
            depth: None,
        }
    }

    pub fn collaborative(
        id: impl Into<SubtaskId>,
        description: impl Into<String>,
        robots: Vec<RobotId>,
        goal: Vec<Condition>,
        rendezvous: RendezvousSpec,
    ) -> Self {
        Self {
            id: id.into(),
            description: description.into(),
            kind: SubtaskKind::Collaborative,
            assignees: robots,
            prerequisites: BTreeSet::new(),
            goal,
            target_room: None,
            rendezvous: Some(rendezvous),
            hints: BTreeMap::new(),
            depth: None,
        }
    }

    pub fn after(mut self, prereq: impl Into<SubtaskId>) -> Self {
        self.prerequisites.insert(prereq.into());
        self
    }

    pub fn in_room(mut self, room: impl Into<NodeId>) -> Self {
        self.target_room = Some(room.into());
        self
    }

    pub fn with_hint(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.hints.insert(key.into(), value.into());
        self
    }
}

/// A validated-on-demand DAG of subtasks produced by one planning round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskGraph {
    pub id: GraphId,
    pub task: TaskId,
    pub subtasks: BTreeMap<SubtaskId, Subtask>,
    pub created_at: Timestamp,
}

impl SubtaskGraph {
    pub fn new(id: impl Into<GraphId>, task: impl Into<TaskId>, created_at: Timestamp) -> Self {
        Self {
            id: id.into(),
            task: task.into(),
            subtasks: BTreeMap::new(),
            created_at,
        }
    }

    pub fn push(&mut self, subtask: Subtask) {
        self.subtasks.insert(subtask.id.clone(), subtask);
    }

    pub fn with(mut self, subtask: Subtask) -> Self {
        self.push(subtask);
        self
    }

    pub fn len(&self) -> usize {
        self.subtasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subtasks.is_empty()
    }

    pub fn get(&self, id: &SubtaskId) -> Option<&Subtask> {
        self.subtasks.get(id)
    }

    /// Structural validation: prerequisites resolve, no cycles, assignee
    /// arity matches the subtask kind, every subtask has a goal.
    pub fn validate(&self) -> Result<(), PlanError> {
        for subtask in self.subtasks.values() {
            for prereq in &subtask.prerequisites {
                if !self.subtasks.contains_key(prereq) {
                    return Err(PlanError::UnknownPrerequisite {
                        subtask: subtask.id.clone(),
                        missing: prereq.clone(),
                    });
                }
            }
            match subtask.kind {
                SubtaskKind::Single => {
                    if subtask.assignees.len() != 1 {
                        return Err(PlanError::BadAssignees {
                            subtask: subtask.id.clone(),
                            reason: format!(
                                "single subtask has {} assignees",
                                subtask.assignees.len()
                            ),
                        });
                    }
                }
                SubtaskKind::Collaborative => {
                    if subtask.assignees.len() < 2 {
                        return Err(PlanError::BadAssignees {
                            subtask: subtask.id.clone(),
                            reason: "collaborative subtask needs at least two robots".into(),
                        });
                    }
                    if subtask.rendezvous.is_none() {
                        return Err(PlanError::BadAssignees {
                            subtask: subtask.id.clone(),
                            reason: "collaborative subtask needs a rendezvous".into(),
                        });
                    }
                }
            }
            let distinct: BTreeSet<&RobotId> = subtask.assignees.iter().collect();
            if distinct.len() != subtask.assignees.len() {
                return Err(PlanError::BadAssignees {
                    subtask: subtask.id.clone(),
                    reason: "duplicate assignee".into(),
                });
            }
            if subtask.goal.is_empty() {
                return Err(PlanError::EmptyGoal {
                    subtask: subtask.id.clone(),
                });
            }
        }
        self.topo_order()?;
        // the depth field is a display cache; when present it must agree
        // with what the prerequisite edges imply
        let computed = self.depths()?;
        for subtask in self.subtasks.values() {
            if let Some(declared) = subtask.depth {
                let expect = computed[&subtask.id];
                if declared != expect {
                    return Err(PlanError::DepthMismatch {
                        subtask: subtask.id.clone(),
                        declared,
                        computed: expect,
                    });
                }
            }
        }
        Ok(())
    }

    /// Stamp every subtask with its computed depth.
    pub fn fill_depths(&mut self) -> Result<(), PlanError> {
        let depths = self.depths()?;
        for (id, subtask) in self.subtasks.iter_mut() {
            subtask.depth = Some(depths[id]);
        }
        Ok(())
    }

    /// Deterministic topological order: repeatedly take the smallest id
    /// whose prerequisites are all emitted. Errors with the ids stuck in a
    /// cycle when no progress is possible.
    pub fn topo_order(&self) -> Result<Vec<SubtaskId>, PlanError> {
        let mut emitted: BTreeSet<SubtaskId> = BTreeSet::new();
        let mut order = Vec::with_capacity(self.subtasks.len());
        while order.len() < self.subtasks.len() {
            let next = self
                .subtasks
                .values()
                .filter(|s| !emitted.contains(&s.id))
                .find(|s| s.prerequisites.iter().all(|p| emitted.contains(p)));
            match next {
                Some(subtask) => {
                    emitted.insert(subtask.id.clone());
                    order.push(subtask.id.clone());
                }
                None => {
                    let stuck: Vec<SubtaskId> = self
                        .subtasks
                        .keys()
                        .filter(|id| !emitted.contains(*id))
                        .cloned()
                        .collect();
                    return Err(PlanError::Cycle(stuck));
                }
            }
        }
        Ok(order)
    }

    /// Depth per subtask: roots are 1, otherwise 1 + max prerequisite depth.
    pub fn depths(&self) -> Result<BTreeMap<SubtaskId, u32>, PlanError> {
        let order = self.topo_order()?;
        let mut depths: BTreeMap<SubtaskId, u32> = BTreeMap::new();
        for id in order {
            let subtask = &self.subtasks[&id];
            let depth = subtask
                .prerequisites
                .iter()
                .map(|p| depths[p])
                .max()
                .map(|d| d + 1)
                .unwrap_or(1);
            depths.insert(id, depth);
        }
        Ok(depths)
    }

    pub fn max_depth(&self) -> Result<u32, PlanError> {
        Ok(self.depths()?.values().copied().max().unwrap_or(0))
    }

    /// Subtasks without prerequisites, in id order.
    pub fn roots(&self) -> Vec<SubtaskId> {
        self.subtasks
            .values()
            .filter(|s| s.prerequisites.is_empty())
            .map(|s| s.id.clone())
            .collect()
    }

    /// All goal conditions across the graph, in id order.
    pub fn all_goals(&self) -> Vec<&Condition> {
        self.subtasks.values().flat_map(|s| s.goal.iter()).collect()
    }
}
