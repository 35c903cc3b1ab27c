//! Ground-truth world state and tool physics.
//!
//! The world owns the true scene graph plus the set of nodes that exist but
//! have not been perceived yet. Applying an invocation either mutates the
//! truth and returns the scene writes a successful call should mirror into
//! shared belief, or returns a failure reason and changes nothing. Robots
//! are object nodes whose id equals the robot id, carrying the `robot`
//! affordance; the robot's `near` attribute is its anchor, set only by
//! navigation, and reach is judged from that anchor.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::ids::{NodeId, Timestamp};
use crate::memory::{AttrValue, NodeKind, ParentRef, Relation, SceneGraph, SceneNode};
use crate::skills::{FailReason, ToolInvocation};

/// One scene write to replay against the believed scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MirrorOp {
    /// Insert or refresh a node; `parent` is None when the existing parent
    /// should be kept.
    Upsert {
        node: SceneNode,
        parent: Option<ParentRef>,
    },
    /// Re-parent or relate two nodes.
    Edge {
        src: NodeId,
        dst: NodeId,
        relation: Relation,
    },
}

/// What a successful invocation did and how belief should catch up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolEffect {
    /// Writes in application order.
    pub mirror: Vec<MirrorOp>,
    /// Structured result payload for the tool's report.
    pub observation: serde_json::Value,
}

/// Deterministic physical world the tools act on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimWorld {
    scene: SceneGraph,
    /// True nodes not yet revealed to any perceiver.
    hidden: BTreeSet<NodeId>,
}

impl SimWorld {
    pub fn new(scene: SceneGraph, hidden: BTreeSet<NodeId>) -> Self {
        Self { scene, hidden }
    }

    pub fn scene(&self) -> &SceneGraph {
        &self.scene
    }

    pub fn hidden(&self) -> &BTreeSet<NodeId> {
        &self.hidden
    }

    /// Copy of the truth with the still-hidden subtrees left out; what a
    /// fresh shared belief should start from.
    pub fn visible_scene(&self) -> SceneGraph {
        let mut out = SceneGraph::new();
        let roots: Vec<NodeId> = self
            .scene
            .nodes()
            .filter(|n| self.scene.parent_of(&n.id).is_none())
            .map(|n| n.id.clone())
            .collect();
        let mut stack: Vec<(NodeId, Option<ParentRef>)> =
            roots.into_iter().map(|id| (id, None)).collect();
        let mut kept = BTreeSet::new();
        while let Some((id, parent)) = stack.pop() {
            if self.hidden.contains(&id) {
                continue;
            }
            let node = self.scene.node(&id).expect("walk stays inside the scene");
            out.upsert_node(node.clone(), parent, node.last_observed)
                .expect("parent-first walk keeps the copy valid");
            kept.insert(id.clone());
            for relation in [Relation::Contains, Relation::Supports] {
                for child in self.scene.children_of(&id, relation) {
                    stack.push((
                        child.clone(),
                        Some(ParentRef {
                            node: id.clone(),
                            relation,
                        }),
                    ));
                }
            }
        }
        for edge in self.scene.edges() {
            if !edge.relation.is_parental() && kept.contains(&edge.src) && kept.contains(&edge.dst)
            {
                out.set_edge(&edge.src, &edge.dst, edge.relation, edge.since)
                    .expect("endpoints were kept");
            }
        }
        out
    }

    /// Execute one invocation against the truth. On success the scene is
    /// already updated and the effect lists what belief must mirror; on
    /// failure nothing changed.
    pub fn apply(
        &mut self,
        invocation: &ToolInvocation,
        now: Timestamp,
    ) -> Result<ToolEffect, FailReason> {
        let robot = NodeId::from(invocation.robot.as_str());
        if self.scene.node(&robot).is_none() {
            return Err(FailReason::Blocked(format!(
                "robot {robot} has no body in the world"
            )));
        }
        let target = invocation
            .target()
            .ok_or_else(|| FailReason::Blocked("invocation names no target".into()))?
            .to_string();
        match invocation.tool.as_str() {
            "navigate" => self.do_navigate(&robot, &target, now),
            "detect" => self.do_detect(&robot, &target, now),
            "grasp" => self.do_grasp(&robot, &target, now),
            "place" => self.do_place(&robot, &target, now),
            "handover" => self.do_handover(&robot, &target, now),
            "open_container" => self.do_open(&robot, &target, now),
            "pour" => self.do_pour(&robot, &target, invocation.args.get("source"), now),
            other => Err(FailReason::Blocked(format!("tool {other} has no physics"))),
        }
    }

    // -- tool physics ------------------------------------------------------

    fn do_navigate(
        &mut self,
        robot: &NodeId,
        target: &str,
        now: Timestamp,
    ) -> Result<ToolEffect, FailReason> {
        let target = self.resolve(target).ok_or(FailReason::NotFound)?;
        let node = self.scene.node(&target).expect("resolve returned a node");
        let room = match node.kind {
            NodeKind::Room => target.clone(),
            NodeKind::Object => self
                .scene
                .room_of(&target)
                .ok_or_else(|| FailReason::Blocked(format!("{target} is not in any room")))?,
            NodeKind::Floor => {
                return Err(FailReason::Blocked("cannot navigate to a floor".into()))
            }
        };
        let position = node.position;
        let mut body = self.scene.node(robot).unwrap().clone();
        body.position = position;
        body.attributes
            .insert("near".into(), AttrValue::Text(target.as_str().into()));
        self.scene
            .upsert_node(body.clone(), Some(ParentRef::contains(room.clone())), now)
            .map_err(|e| FailReason::Blocked(e.to_string()))?;
        Ok(ToolEffect {
            mirror: vec![MirrorOp::Upsert {
                node: body,
                parent: Some(ParentRef::contains(room.clone())),
            }],
            observation: serde_json::json!({ "arrived": target, "room": room }),
        })
    }

    /// Scan the robot's room for the target. Finds visible nodes and hidden
    /// ones whose concealing containers are all open; a hit reveals every
    /// currently detectable hidden node in the room.
    fn do_detect(
        &mut self,
        robot: &NodeId,
        target: &str,
        now: Timestamp,
    ) -> Result<ToolEffect, FailReason> {
        let here = self
            .scene
            .room_of(robot)
            .ok_or_else(|| FailReason::Blocked("robot is not in any room".into()))?;
        let found = self
            .detectable_in(&here)
            .into_iter()
            .find(|id| {
                id.as_str() == target
                    || self
                        .scene
                        .node(id)
                        .map(|n| n.label.eq_ignore_ascii_case(target))
                        .unwrap_or(false)
            })
            .ok_or(FailReason::NotFound)?;

        let mut mirror = Vec::new();
        let mut revealed = Vec::new();
        for id in self.detectable_in(&here) {
            if self.hidden.remove(&id) {
                revealed.push(id.clone());
            }
        }
        // mirror ancestors before descendants so belief upserts resolve
        revealed.sort_by_key(|id| self.scene.ancestry(id).len());
        for id in &revealed {
            let mut node = self.scene.node(id).unwrap().clone();
            node.last_observed = now;
            let parent = self
                .scene
                .parent_of(id)
                .map(|(node, relation)| ParentRef { node, relation });
            self.scene
                .upsert_node(node.clone(), None, now)
                .expect("touch keeps the node valid");
            mirror.push(MirrorOp::Upsert { node, parent });
        }
        if !revealed.contains(&found) {
            // already-known target: refresh its believed state
            let node = self.scene.node(&found).unwrap().clone();
            let parent = self
                .scene
                .parent_of(&found)
                .map(|(node, relation)| ParentRef { node, relation });
            mirror.push(MirrorOp::Upsert { node, parent });
        }
        Ok(ToolEffect {
            mirror,
            observation: serde_json::json!({
                "found": found,
                "room": here,
                "revealed": revealed,
            }),
        })
    }

    fn do_grasp(
        &mut self,
        robot: &NodeId,
        target: &str,
        now: Timestamp,
    ) -> Result<ToolEffect, FailReason> {
        let object = self.resolve(target).ok_or(FailReason::NotFound)?;
        if self.hidden.contains(&object) {
            return Err(FailReason::NotFound);
        }
        if self.held_by(robot).is_some() {
            return Err(FailReason::Blocked("the gripper is already full".into()));
        }
        if let Some((parent, Relation::Supports)) = self.scene.parent_of(&object) {
            if self.is_robot(&parent) && &parent != robot {
                return Err(FailReason::Blocked(format!("{object} is held by {parent}")));
            }
        }
        let node = self.scene.node(&object).unwrap();
        if node.kind != NodeKind::Object {
            return Err(FailReason::Blocked(format!("{object} cannot be picked up")));
        }
        if !self.in_reach(robot, &object) {
            return Err(FailReason::Blocked(format!("{object} is out of reach")));
        }
        self.scene
            .set_edge(robot, &object, Relation::Supports, now)
            .map_err(|e| FailReason::Blocked(e.to_string()))?;
        Ok(ToolEffect {
            mirror: vec![MirrorOp::Edge {
                src: robot.clone(),
                dst: object.clone(),
                relation: Relation::Supports,
            }],
            observation: serde_json::json!({ "grasped": object }),
        })
    }

    fn do_place(
        &mut self,
        robot: &NodeId,
        target: &str,
        now: Timestamp,
    ) -> Result<ToolEffect, FailReason> {
        let object = self
            .held_by(robot)
            .ok_or_else(|| FailReason::Blocked("nothing is held".into()))?;
        let target = self.resolve(target).ok_or(FailReason::NotFound)?;
        if !self.in_reach(robot, &target) {
            return Err(FailReason::Blocked(format!("{target} is out of reach")));
        }
        let relation = self.landing_relation(&target);
        self.scene
            .set_edge(&target, &object, relation, now)
            .map_err(|e| FailReason::Blocked(e.to_string()))?;
        Ok(ToolEffect {
            mirror: vec![MirrorOp::Edge {
                src: target.clone(),
                dst: object.clone(),
                relation,
            }],
            observation: serde_json::json!({ "placed": object, "at": target }),
        })
    }

    /// Dual mode: release everything held to another robot standing at the
    /// same anchor, or deposit everything onto a fixture in reach.
    fn do_handover(
        &mut self,
        robot: &NodeId,
        target: &str,
        now: Timestamp,
    ) -> Result<ToolEffect, FailReason> {
        let carried = self.all_held_by(robot);
        if carried.is_empty() {
            return Err(FailReason::Blocked("nothing to hand over".into()));
        }
        let target = self.resolve(target).ok_or(FailReason::NotFound)?;
        let (receiver_relation, reachable) = if self.is_robot(&target) {
            let together = self.anchor_of(robot).as_ref() == Some(&target)
                || (self.anchor_of(robot).is_some()
                    && self.anchor_of(robot) == self.anchor_of(&target));
            if self.held_by(&target).is_some() {
                return Err(FailReason::Blocked(format!("{target} has its hands full")));
            }
            (Relation::Supports, together)
        } else {
            (self.landing_relation(&target), self.in_reach(robot, &target))
        };
        if !reachable {
            return Err(FailReason::Blocked(format!("{target} is not close enough")));
        }
        let mut mirror = Vec::new();
        for object in &carried {
            self.scene
                .set_edge(&target, object, receiver_relation, now)
                .map_err(|e| FailReason::Blocked(e.to_string()))?;
            mirror.push(MirrorOp::Edge {
                src: target.clone(),
                dst: object.clone(),
                relation: receiver_relation,
            });
        }
        Ok(ToolEffect {
            mirror,
            observation: serde_json::json!({ "handed": carried, "to": target }),
        })
    }

    /// Idempotent: opening an open container succeeds without a change.
    /// Opening never reveals contents by itself; a detect must look inside.
    fn do_open(
        &mut self,
        robot: &NodeId,
        target: &str,
        now: Timestamp,
    ) -> Result<ToolEffect, FailReason> {
        let target = self.resolve(target).ok_or(FailReason::NotFound)?;
        let node = self.scene.node(&target).unwrap();
        if !node.affordances.contains("openable") {
            return Err(FailReason::Blocked(format!("{target} does not open")));
        }
        if !self.in_reach(robot, &target) {
            return Err(FailReason::Blocked(format!("{target} is out of reach")));
        }
        let mut node = node.clone();
        let already = node.attr_bool("open") == Some(true);
        node.attributes.insert("open".into(), AttrValue::Bool(true));
        if !already {
            self.scene
                .upsert_node(node.clone(), None, now)
                .map_err(|e| FailReason::Blocked(e.to_string()))?;
        }
        Ok(ToolEffect {
            mirror: vec![MirrorOp::Upsert { node, parent: None }],
            observation: serde_json::json!({ "opened": target, "already_open": already }),
        })
    }

    fn do_pour(
        &mut self,
        robot: &NodeId,
        target: &str,
        source: Option<&String>,
        now: Timestamp,
    ) -> Result<ToolEffect, FailReason> {
        let source = source.ok_or_else(|| FailReason::Blocked("pour needs a source".into()))?;
        let source = self.resolve(source).ok_or(FailReason::NotFound)?;
        if self.scene.parent_of(&source) != Some((robot.clone(), Relation::Supports)) {
            return Err(FailReason::Blocked(format!("{source} is not in the gripper")));
        }
        let target = self.resolve(target).ok_or(FailReason::NotFound)?;
        let node = self.scene.node(&target).unwrap();
        if !node.affordances.contains("container") {
            return Err(FailReason::Blocked(format!("{target} holds no liquid")));
        }
        if !self.in_reach(robot, &target) {
            return Err(FailReason::Blocked(format!("{target} is out of reach")));
        }
        let mut vessel = node.clone();
        vessel
            .attributes
            .insert("filled".into(), AttrValue::Bool(true));
        self.scene
            .upsert_node(vessel.clone(), None, now)
            .map_err(|e| FailReason::Blocked(e.to_string()))?;
        Ok(ToolEffect {
            mirror: vec![MirrorOp::Upsert {
                node: vessel,
                parent: None,
            }],
            observation: serde_json::json!({ "filled": target, "from": source }),
        })
    }

    // -- world predicates --------------------------------------------------

    /// Resolve an id-or-label string to a node id; ids win, then the lowest
    /// id among label matches. Hidden nodes resolve by id only (the caller
    /// knows the name but the world will refuse interactions that need
    /// sight).
    fn resolve(&self, name: &str) -> Option<NodeId> {
        let direct = NodeId::from(name);
        if self.scene.node(&direct).is_some() {
            return Some(direct);
        }
        self.scene
            .nodes()
            .filter(|n| n.label.eq_ignore_ascii_case(name) && !self.hidden.contains(&n.id))
            .map(|n| n.id.clone())
            .min()
    }

    fn is_robot(&self, id: &NodeId) -> bool {
        self.scene
            .node(id)
            .map(|n| n.affordances.contains("robot"))
            .unwrap_or(false)
    }

    fn anchor_of(&self, robot: &NodeId) -> Option<NodeId> {
        self.scene
            .node(robot)
            .and_then(|n| n.attr_text("near"))
            .map(NodeId::from)
    }

    fn in_reach(&self, robot: &NodeId, x: &NodeId) -> bool {
        let Some(anchor) = self.anchor_of(robot) else {
            return false;
        };
        if anchor == *x {
            return true;
        }
        if self
            .scene
            .parent_of(x)
            .map(|(p, _)| p == anchor)
            .unwrap_or(false)
        {
            return true;
        }
        self.scene
            .parent_of(&anchor)
            .map(|(p, _)| p == *x)
            .unwrap_or(false)
    }

    /// First object the robot supports, lowest id first.
    fn held_by(&self, robot: &NodeId) -> Option<NodeId> {
        self.all_held_by(robot).into_iter().next()
    }

    fn all_held_by(&self, robot: &NodeId) -> Vec<NodeId> {
        let mut held: Vec<NodeId> = self
            .scene
            .children_of(robot, Relation::Supports)
            .cloned()
            .collect();
        held.sort();
        held
    }

    fn landing_relation(&self, target: &NodeId) -> Relation {
        let container = self
            .scene
            .node(target)
            .map(|n| n.affordances.contains("container"))
            .unwrap_or(false);
        if container {
            Relation::Contains
        } else {
            Relation::Supports
        }
    }

    /// Nodes in `room` a scan can see: visible ones, plus hidden ones whose
    /// openable ancestors are all open. Sorted by id.
    fn detectable_in(&self, room: &NodeId) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self
            .scene
            .nodes()
            .filter(|n| self.scene.room_of(&n.id).as_ref() == Some(room))
            .filter(|n| !self.hidden.contains(&n.id) || self.concealment_free(&n.id))
            .map(|n| n.id.clone())
            .collect();
        out.sort();
        out
    }

    /// No ancestor that can close is closed.
    fn concealment_free(&self, id: &NodeId) -> bool {
        self.scene.ancestry(id).iter().all(|ancestor| {
            let Some(node) = self.scene.node(ancestor) else {
                return true;
            };
            !node.affordances.contains("openable") || node.attr_bool("open") == Some(true)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::RobotId;

    fn add(scene: &mut SceneGraph, node: SceneNode, parent: Option<ParentRef>) {
        scene.upsert_node(node, parent, Timestamp::ZERO).unwrap();
    }

    /// Two-room truth: kitchen with fridge (egg hidden inside), table, and
    /// robot r1; hall with a cabinet.
    fn world() -> SimWorld {
        let mut scene = SceneGraph::new();
        add(&mut scene, SceneNode::new("ground", NodeKind::Floor, "ground"), None);
        for room in ["kitchen", "hall"] {
            add(
                &mut scene,
                SceneNode::new(room, NodeKind::Room, room),
                Some(ParentRef::contains("ground")),
            );
        }
        add(
            &mut scene,
            SceneNode::new("fridge", NodeKind::Object, "fridge")
                .with_affordance("openable")
                .with_affordance("container")
                .with_attribute("open", false),
            Some(ParentRef::contains("kitchen")),
        );
        add(
            &mut scene,
            SceneNode::new("table", NodeKind::Object, "table").with_affordance("surface"),
            Some(ParentRef::contains("kitchen")),
        );
        add(
            &mut scene,
            SceneNode::new("cabinet", NodeKind::Object, "cabinet")
                .with_affordance("openable")
                .with_affordance("container")
                .with_attribute("open", false),
            Some(ParentRef::contains("hall")),
        );
        add(
            &mut scene,
            SceneNode::new("egg", NodeKind::Object, "egg").with_affordance("graspable"),
            Some(ParentRef::contains("fridge")),
        );
        add(
            &mut scene,
            SceneNode::new("r1", NodeKind::Object, "r1").with_affordance("robot"),
            Some(ParentRef::contains("kitchen")),
        );
        SimWorld::new(scene, [NodeId::from("egg")].into_iter().collect())
    }

    fn call(robot: &str, tool: &str, target: &str) -> ToolInvocation {
        ToolInvocation::new(1, RobotId::from(robot), tool, target)
    }

    #[test]
    fn visible_scene_leaves_hidden_subtrees_out() {
        let world = world();
        let seen = world.visible_scene();
        assert!(seen.node(&NodeId::from("fridge")).is_some());
        assert!(seen.node(&NodeId::from("egg")).is_none());
        seen.validate().unwrap();
        // fixing the count pins the walk: 1 floor + 2 rooms + 4 objects
        assert_eq!(seen.len(), 7);
    }

    #[test]
    fn navigate_moves_the_body_and_sets_the_anchor() {
        let mut world = world();
        let effect = world
            .apply(&call("r1", "navigate", "cabinet"), Timestamp(5))
            .unwrap();
        let r1 = NodeId::from("r1");
        assert_eq!(world.scene().room_of(&r1), Some(NodeId::from("hall")));
        assert_eq!(
            world.scene().node(&r1).unwrap().attr_text("near"),
            Some("cabinet")
        );
        assert_eq!(effect.observation["room"], "hall");
    }

    #[test]
    fn navigation_carries_held_objects_along() {
        let mut world = world();
        world.apply(&call("r1", "navigate", "table"), Timestamp(1)).unwrap();
        // plant a cup on the table and grab it
        world
            .scene
            .upsert_node(
                SceneNode::new("cup", NodeKind::Object, "cup").with_affordance("graspable"),
                Some(ParentRef::supports("table")),
                Timestamp(1),
            )
            .unwrap();
        world.apply(&call("r1", "grasp", "cup"), Timestamp(2)).unwrap();
        world.apply(&call("r1", "navigate", "cabinet"), Timestamp(3)).unwrap();
        let cup = NodeId::from("cup");
        assert_eq!(world.scene().room_of(&cup), Some(NodeId::from("hall")));
        assert_eq!(
            world.scene().parent_of(&cup),
            Some((NodeId::from("r1"), Relation::Supports))
        );
    }

    #[test]
    fn detect_misses_what_a_closed_container_conceals() {
        let mut world = world();
        let err = world
            .apply(&call("r1", "detect", "egg"), Timestamp(1))
            .unwrap_err();
        assert_eq!(err, FailReason::NotFound);
        assert!(world.hidden().contains(&NodeId::from("egg")));
    }

    #[test]
    fn open_then_detect_reveals_the_contents() {
        let mut world = world();
        world.apply(&call("r1", "navigate", "fridge"), Timestamp(1)).unwrap();
        let opened = world
            .apply(&call("r1", "open_container", "fridge"), Timestamp(2))
            .unwrap();
        assert_eq!(opened.observation["already_open"], false);
        // opening alone reveals nothing
        assert!(world.hidden().contains(&NodeId::from("egg")));
        let effect = world
            .apply(&call("r1", "detect", "egg"), Timestamp(3))
            .unwrap();
        assert!(world.hidden().is_empty());
        assert_eq!(effect.observation["found"], "egg");
        // the mirror writes carry the revealed node with its true parent
        assert!(effect.mirror.iter().any(|op| matches!(
            op,
            MirrorOp::Upsert { node, parent: Some(p) }
                if node.id.as_str() == "egg" && p.node.as_str() == "fridge"
        )));
    }

    #[test]
    fn second_open_is_idempotent() {
        let mut world = world();
        world.apply(&call("r1", "navigate", "fridge"), Timestamp(1)).unwrap();
        world
            .apply(&call("r1", "open_container", "fridge"), Timestamp(2))
            .unwrap();
        let rev = world.scene().revision();
        let again = world
            .apply(&call("r1", "open_container", "fridge"), Timestamp(3))
            .unwrap();
        assert_eq!(again.observation["already_open"], true);
        assert_eq!(world.scene().revision(), rev);
    }

    #[test]
    fn grasp_needs_reach_sight_and_a_free_gripper() {
        let mut world = world();
        // far away: blocked
        let err = world.apply(&call("r1", "grasp", "egg"), Timestamp(1)).unwrap_err();
        assert!(matches!(err, FailReason::Blocked(_) | FailReason::NotFound));
        // reveal and approach
        world.apply(&call("r1", "navigate", "fridge"), Timestamp(2)).unwrap();
        world
            .apply(&call("r1", "open_container", "fridge"), Timestamp(3))
            .unwrap();
        world.apply(&call("r1", "detect", "egg"), Timestamp(4)).unwrap();
        world.apply(&call("r1", "grasp", "egg"), Timestamp(5)).unwrap();
        assert_eq!(
            world.scene().parent_of(&NodeId::from("egg")),
            Some((NodeId::from("r1"), Relation::Supports))
        );
        // second grasp with a full gripper
        let err = world.apply(&call("r1", "grasp", "fridge"), Timestamp(6)).unwrap_err();
        assert!(matches!(err, FailReason::Blocked(_)));
    }

    #[test]
    fn place_lands_by_affordance() {
        let mut world = world();
        world.apply(&call("r1", "navigate", "fridge"), Timestamp(1)).unwrap();
        world.apply(&call("r1", "open_container", "fridge"), Timestamp(2)).unwrap();
        world.apply(&call("r1", "detect", "egg"), Timestamp(3)).unwrap();
        world.apply(&call("r1", "grasp", "egg"), Timestamp(4)).unwrap();
        world.apply(&call("r1", "navigate", "table"), Timestamp(5)).unwrap();
        world.apply(&call("r1", "place", "table"), Timestamp(6)).unwrap();
        // table is a surface, so the egg sits on it
        assert_eq!(
            world.scene().parent_of(&NodeId::from("egg")),
            Some((NodeId::from("table"), Relation::Supports))
        );
        // placing into a container would contain instead
        world.apply(&call("r1", "grasp", "egg"), Timestamp(7)).unwrap();
        world.apply(&call("r1", "navigate", "fridge"), Timestamp(8)).unwrap();
        world.apply(&call("r1", "place", "fridge"), Timestamp(9)).unwrap();
        assert_eq!(
            world.scene().parent_of(&NodeId::from("egg")),
            Some((NodeId::from("fridge"), Relation::Contains))
        );
    }

    #[test]
    fn handover_between_robots_needs_a_shared_anchor() {
        let mut world = world();
        world
            .scene
            .upsert_node(
                SceneNode::new("r2", NodeKind::Object, "r2").with_affordance("robot"),
                Some(ParentRef::contains("kitchen")),
                Timestamp::ZERO,
            )
            .unwrap();
        world.apply(&call("r1", "navigate", "fridge"), Timestamp(1)).unwrap();
        world.apply(&call("r1", "open_container", "fridge"), Timestamp(2)).unwrap();
        world.apply(&call("r1", "detect", "egg"), Timestamp(3)).unwrap();
        world.apply(&call("r1", "grasp", "egg"), Timestamp(4)).unwrap();
        // r2 is somewhere else entirely
        let err = world.apply(&call("r1", "handover", "r2"), Timestamp(5)).unwrap_err();
        assert!(matches!(err, FailReason::Blocked(_)));
        // both anchored at the table: transfer succeeds
        world.apply(&call("r1", "navigate", "table"), Timestamp(6)).unwrap();
        world.apply(&call("r2", "navigate", "table"), Timestamp(7)).unwrap();
        world.apply(&call("r1", "handover", "r2"), Timestamp(8)).unwrap();
        assert_eq!(
            world.scene().parent_of(&NodeId::from("egg")),
            Some((NodeId::from("r2"), Relation::Supports))
        );
    }

    #[test]
    fn handover_at_a_fixture_deposits_everything() {
        let mut world = world();
        world.apply(&call("r1", "navigate", "fridge"), Timestamp(1)).unwrap();
        world.apply(&call("r1", "open_container", "fridge"), Timestamp(2)).unwrap();
        world.apply(&call("r1", "detect", "egg"), Timestamp(3)).unwrap();
        world.apply(&call("r1", "grasp", "egg"), Timestamp(4)).unwrap();
        world.apply(&call("r1", "navigate", "table"), Timestamp(5)).unwrap();
        world.apply(&call("r1", "handover", "table"), Timestamp(6)).unwrap();
        assert_eq!(
            world.scene().parent_of(&NodeId::from("egg")),
            Some((NodeId::from("table"), Relation::Supports))
        );
    }

    #[test]
    fn pour_requires_the_source_in_hand() {
        let mut world = world();
        world
            .scene
            .upsert_node(
                SceneNode::new("jug", NodeKind::Object, "jug").with_affordance("graspable"),
                Some(ParentRef::supports("table")),
                Timestamp::ZERO,
            )
            .unwrap();
        world
            .scene
            .upsert_node(
                SceneNode::new("pot", NodeKind::Object, "pot").with_affordance("container"),
                Some(ParentRef::contains("kitchen")),
                Timestamp::ZERO,
            )
            .unwrap();
        let mut pour = call("r1", "pour", "pot");
        pour.args.insert("source".into(), "jug".into());
        world.apply(&call("r1", "navigate", "pot"), Timestamp(1)).unwrap();
        let err = world.apply(&pour, Timestamp(2)).unwrap_err();
        assert!(matches!(err, FailReason::Blocked(_)));
        // pick the jug up, come back, pour
        world.apply(&call("r1", "navigate", "jug"), Timestamp(3)).unwrap();
        world.apply(&call("r1", "grasp", "jug"), Timestamp(4)).unwrap();
        world.apply(&call("r1", "navigate", "pot"), Timestamp(5)).unwrap();
        world.apply(&pour, Timestamp(6)).unwrap();
        assert_eq!(
            world
                .scene()
                .node(&NodeId::from("pot"))
                .unwrap()
                .attr_bool("filled"),
            Some(true)
        );
    }

    #[test]
    fn failures_leave_the_world_untouched() {
        let mut world = world();
        let before = world.scene().revision();
        let _ = world.apply(&call("r1", "grasp", "egg"), Timestamp(1));
        let _ = world.apply(&call("r1", "place", "table"), Timestamp(2));
        let _ = world.apply(&call("r1", "detect", "egg"), Timestamp(3));
        let _ = world.apply(&call("r1", "pour", "pot"), Timestamp(4));
        assert_eq!(world.scene().revision(), before);
    }

    #[test]
    fn grasp_of_anothers_load_is_refused() {
        let mut world = world();
        world
            .scene
            .upsert_node(
                SceneNode::new("r2", NodeKind::Object, "r2").with_affordance("robot"),
                Some(ParentRef::contains("kitchen")),
                Timestamp::ZERO,
            )
            .unwrap();
        world
            .scene
            .upsert_node(
                SceneNode::new("cup", NodeKind::Object, "cup").with_affordance("graspable"),
                Some(ParentRef::supports("r2")),
                Timestamp::ZERO,
            )
            .unwrap();
        world.apply(&call("r1", "navigate", "r2"), Timestamp(1)).unwrap();
        let err = world.apply(&call("r1", "grasp", "cup"), Timestamp(2)).unwrap_err();
        assert!(matches!(err, FailReason::Blocked(m) if m.contains("r2")));
    }

    #[test]
    fn world_serde_round_trip() {
        let world = world();
        let json = serde_json::to_string(&world).unwrap();
        let back: SimWorld = serde_json::from_str(&json).unwrap();
        assert_eq!(back.scene().len(), world.scene().len());
        assert_eq!(back.hidden(), world.hidden());
    }
}
