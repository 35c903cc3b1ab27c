//! Task decomposition: from one natural-language request to a validated
//! DAG of subtasks with robots assigned.

mod graph;
mod prompt;
mod remote;
mod rules;
mod validate;

pub use graph::{
    Condition, PlanError, RendezvousSpec, Subtask, SubtaskGraph, SubtaskKind,
};
pub use prompt::{render_prompt, PLACEHOLDERS};
pub use remote::{
    parse_plan_response, plan_task, CannedPlanner, PlanOutcome, PlanSource, RemoteError,
    RemoteOptions, RemotePlanner, RemotePlanning,
};
pub use rules::{plan, GoalTemplate, PlannerInput, ReasoningTrace, TaskRequest, TemplateKind};
pub use validate::{validate_graph, Violation};

use crate::ids::NodeId;
use crate::memory::{Memory, MemorySnapshot, NodeKind, ParentRef, Relation, SceneGraph};
use std::collections::BTreeSet;

#[derive(Debug, thiserror::Error)]
pub enum ContextError {
    #[error("no robots are registered; there is nobody to plan for")]
    NoRobots,
}

/// How much of the scene the planner gets to see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextScope {
    /// The whole scene, rooms no robot can enter included.
    Full,
    /// Only rooms inside some robot's motion domain, plus the floors above
    /// them. Keeps the planning context from mentioning places nobody can
    /// act in.
    #[default]
    Reachable,
}

/// Assemble the planner input from live memory: one snapshot, the scenario
/// templates and vocabulary, and the replan round. `scope` controls whether
/// unreachable rooms are pruned from the scene handed to the planner.
pub fn compose_context(
    memory: &Memory,
    task: TaskRequest,
    templates: Vec<GoalTemplate>,
    vocabulary: Vec<String>,
    round: u32,
    scope: ContextScope,
) -> Result<PlannerInput, ContextError> {
    let mut snapshot = memory.snapshot();
    if snapshot.registry.iter().next().is_none() {
        return Err(ContextError::NoRobots);
    }
    if scope == ContextScope::Reachable {
        snapshot.scene = reachable_scene(&snapshot);
    }
    Ok(PlannerInput {
        task,
        snapshot,
        templates,
        vocabulary,
        round,
    })
}

/// Copy of the scene keeping floors, rooms in somebody's motion domain, and
/// everything inside those rooms. Non-parental edges between kept nodes are
/// carried over too.
fn reachable_scene(snapshot: &MemorySnapshot) -> SceneGraph {
    let scene = &snapshot.scene;
    let domains: BTreeSet<NodeId> = snapshot
        .registry
        .iter()
        .flat_map(|(_, robot)| robot.profile.motion_domain.iter().cloned())
        .collect();
    let mut kept = SceneGraph::new();
    let mut frontier: Vec<NodeId> = scene
        .nodes()
        .filter(|n| scene.parent_of(&n.id).is_none())
        .map(|n| n.id.clone())
        .collect();
    // walk parent-first so every insert finds its parent already present
    while let Some(id) = frontier.pop() {
        let node = match scene.node(&id) {
            Some(n) => n,
            None => continue,
        };
        if node.kind == NodeKind::Room && !domains.contains(&id) {
            continue;
        }
        let parent = scene.parent_of(&id).map(|(p, rel)| ParentRef {
            node: p,
            relation: rel,
        });
        // inserting a clone of a validated scene cannot fail
        kept.upsert_node(node.clone(), parent, snapshot.taken_at)
            .expect("filtered scene insert");
        for relation in [Relation::Contains, Relation::Supports] {
            frontier.extend(scene.children_of(&id, relation).cloned());
        }
    }
    for edge in scene.edges() {
        if edge.relation.is_parental() {
            continue;
        }
        if kept.node(&edge.src).is_some() && kept.node(&edge.dst).is_some() {
            kept.set_edge(&edge.src, &edge.dst, edge.relation, edge.since)
                .expect("filtered scene edge");
        }
    }
    kept
}

#[cfg(test)]
mod context_tests {
    use super::*;
    use crate::clock::VirtualClock;
    use crate::ids::{RobotId, Timestamp, ToolId};
    use crate::memory::{Embodiment, NodeKind, RobotProfile, SceneNode};
    use std::sync::Arc;

    fn memory_with_two_rooms() -> Memory {
        let mem = Memory::new(Arc::new(VirtualClock::new()));
        mem.upsert_node(SceneNode::new("ground", NodeKind::Floor, "ground"), None)
            .unwrap();
        for room in ["kitchen", "vault"] {
            mem.upsert_node(
                SceneNode::new(room, NodeKind::Room, room),
                Some(ParentRef::contains("ground")),
            )
            .unwrap();
        }
        mem.upsert_node(
            SceneNode::new("table", NodeKind::Object, "table").with_affordance("surface"),
            Some(ParentRef::contains("kitchen")),
        )
        .unwrap();
        mem.upsert_node(
            SceneNode::new("gold", NodeKind::Object, "gold").with_affordance("graspable"),
            Some(ParentRef::contains("vault")),
        )
        .unwrap();
        mem
    }

    fn kitchen_robot() -> RobotProfile {
        RobotProfile {
            robot_id: RobotId::from("r1"),
            embodiment: Embodiment::Wheeled,
            skills: [ToolId::from("navigate")].into_iter().collect(),
            motion_domain: [NodeId::from("kitchen")].into_iter().collect(),
            home_position: [0.0; 3],
        }
    }

    #[test]
    fn empty_registry_is_rejected() {
        let mem = memory_with_two_rooms();
        let err = compose_context(
            &mem,
            TaskRequest::new("t", "tidy up", Timestamp::ZERO),
            vec![],
            vec![],
            0,
            ContextScope::Reachable,
        )
        .unwrap_err();
        assert!(matches!(err, ContextError::NoRobots));
    }

    #[test]
    fn reachable_scope_prunes_rooms_outside_every_motion_domain() {
        let mem = memory_with_two_rooms();
        mem.register_robot(kitchen_robot()).unwrap();
        let input = compose_context(
            &mem,
            TaskRequest::new("t", "tidy up", Timestamp::ZERO),
            vec![],
            vec![],
            0,
            ContextScope::Reachable,
        )
        .unwrap();
        let scene = &input.snapshot.scene;
        assert!(scene.node(&NodeId::from("kitchen")).is_some());
        assert!(scene.node(&NodeId::from("table")).is_some());
        assert!(scene.node(&NodeId::from("vault")).is_none());
        assert!(scene.node(&NodeId::from("gold")).is_none());
        scene.validate().unwrap();
    }

    #[test]
    fn full_scope_keeps_everything() {
        let mem = memory_with_two_rooms();
        mem.register_robot(kitchen_robot()).unwrap();
        let input = compose_context(
            &mem,
            TaskRequest::new("t", "tidy up", Timestamp::ZERO),
            vec![],
            vec![],
            0,
            ContextScope::Full,
        )
        .unwrap();
        assert!(input.snapshot.scene.node(&NodeId::from("vault")).is_some());
        assert!(input.snapshot.scene.node(&NodeId::from("gold")).is_some());
    }
}
