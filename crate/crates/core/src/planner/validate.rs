//! Plan feasibility checks against the live robot registry and tool
//! catalog. Structural graph problems and resourcing problems come back
//! together as one violation list so a caller can show everything wrong
//! with a plan at once instead of fixing it error by error.

use std::collections::BTreeSet;

use crate::ids::{NodeId, RobotId, SubtaskId, ToolId};
use crate::memory::{Registry, RobotStatus};
use crate::skills::ToolCatalog;

use super::graph::{Condition, PlanError, Subtask, SubtaskGraph, SubtaskKind};

/// One reason a graph cannot run as written.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// The graph itself is malformed (cycle, missing prerequisite, bad
    /// depth cache, ...).
    Structural { detail: String },
    /// An assignee is not in the registry.
    UnknownRobot { subtask: SubtaskId, robot: RobotId },
    /// An assignee is registered but offline.
    OfflineAssignee { subtask: SubtaskId, robot: RobotId },
    /// No assignee of the subtask can invoke a tool its goal needs.
    SkillGap {
        subtask: SubtaskId,
        tool: ToolId,
        robots: Vec<RobotId>,
    },
    /// The subtask pins a room outside every assignee's motion domain.
    UnreachableRoom { subtask: SubtaskId, room: NodeId },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Structural { detail } => write!(f, "structural: {detail}"),
            Violation::UnknownRobot { subtask, robot } => {
                write!(f, "{subtask}: assignee {robot} is not registered")
            }
            Violation::OfflineAssignee { subtask, robot } => {
                write!(f, "{subtask}: assignee {robot} is offline")
            }
            Violation::SkillGap {
                subtask,
                tool,
                robots,
            } => write!(
                f,
                "{subtask}: no assignee of {robots:?} can invoke {tool}"
            ),
            Violation::UnreachableRoom { subtask, room } => {
                write!(f, "{subtask}: room {room} is outside every assignee's motion domain")
            }
        }
    }
}

/// Tools a subtask's goal will demand at execution time. Grasping always
/// rides with a confirming detect, so detect is required wherever grasp is.
fn required_tools(subtask: &Subtask) -> BTreeSet<ToolId> {
    let mut needed = BTreeSet::new();
    let mut need = |name: &str| {
        needed.insert(ToolId::from(name));
    };
    for condition in &subtask.goal {
        match condition {
            Condition::PlacedOn { .. } | Condition::ContainedIn { .. } => {
                need("detect");
                need("grasp");
                if subtask.kind == SubtaskKind::Collaborative {
                    need("handover");
                } else {
                    need("place");
                }
            }
            Condition::HeldBy { .. } => {
                need("detect");
                need("grasp");
            }
            Condition::Attribute { key, .. } => match key.as_str() {
                "open" => need("open_container"),
                "filled" => need("pour"),
                _ => {}
            },
            Condition::RobotIn { .. } => need("navigate"),
        }
    }
    if subtask.rendezvous.is_some() {
        need("handover");
    }
    needed
}

/// Check a graph against the registry and catalog. Returns every violation
/// found; an empty list means the plan is runnable as far as static checks
/// can tell.
pub fn validate_graph(
    graph: &SubtaskGraph,
    registry: &Registry,
    catalog: &ToolCatalog,
) -> Vec<Violation> {
    let mut violations = Vec::new();
    if let Err(err) = graph.validate() {
        violations.push(Violation::Structural {
            detail: err.to_string(),
        });
        // resourcing checks still run below; they only need per-subtask data
        if matches!(err, PlanError::Cycle(_)) {
            // a cycle poisons everything downstream; report it alone
            return violations;
        }
    }
    for subtask in graph.subtasks.values() {
        let mut bound: Vec<(RobotId, BTreeSet<ToolId>)> = Vec::new();
        for robot in &subtask.assignees {
            match registry.profile(robot) {
                None => violations.push(Violation::UnknownRobot {
                    subtask: subtask.id.clone(),
                    robot: robot.clone(),
                }),
                Some(profile) => {
                    if registry
                        .state(robot)
                        .map(|s| s.status == RobotStatus::Offline)
                        .unwrap_or(false)
                    {
                        violations.push(Violation::OfflineAssignee {
                            subtask: subtask.id.clone(),
                            robot: robot.clone(),
                        });
                    }
                    bound.push((robot.clone(), catalog.bind(profile)));
                }
            }
        }
        if bound.is_empty() {
            continue;
        }
        for tool in required_tools(subtask) {
            if !bound.iter().any(|(_, tools)| tools.contains(&tool)) {
                violations.push(Violation::SkillGap {
                    subtask: subtask.id.clone(),
                    tool,
                    robots: bound.iter().map(|(r, _)| r.clone()).collect(),
                });
            }
        }
        if let Some(room) = &subtask.target_room {
            let reachable = subtask.assignees.iter().any(|robot| {
                registry
                    .profile(robot)
                    .map(|p| p.motion_domain.contains(room))
                    .unwrap_or(false)
            });
            if !reachable {
                violations.push(Violation::UnreachableRoom {
                    subtask: subtask.id.clone(),
                    room: room.clone(),
                });
            }
        }
    }
    violations
}
