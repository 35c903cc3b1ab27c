//! Per-subtask tool-calling controller.
//!
//! One agent is spawned for each assignee of a dispatched subtask. Its
//! policy is a pure function of the believed scene and its own call
//! history: no clock, no randomness. Recovery is layered. A transient or
//! blocked call is retried once verbatim; a fruitless detect widens into a
//! sweep of openable containers across the robot's motion domain; anything
//! beyond that is declared honestly so the scheduler can retry or replan.
//!
//! Two conventions tie the agent to the scene. A robot appears as an
//! object node whose id equals the robot id, tagged with the `robot`
//! affordance, and its `near` text attribute holds the node it last
//! navigated to. Reach is anchor based: a node is reachable when it is the
//! anchor itself, sits directly on or in the anchor, or is what the anchor
//! rests on.

use std::collections::BTreeSet;

use crate::ids::{InvocationId, NodeId, RobotId, ToolId};
use crate::memory::{AttrValue, NodeKind, Relation, RobotProfile, SceneGraph};
use crate::planner::{Condition, Subtask, SubtaskKind};
use crate::skills::{FailReason, InvocationOutcome, ToolInvocation, ToolResult};

/// What the agent wants to do next.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentDecision {
    /// Run this tool call.
    Invoke(ToolInvocation),
    /// Nothing for this robot to do until a collaborator makes progress.
    WaitPeers,
    /// Every goal condition holds in the believed scene.
    DeclareSuccess,
    /// The agent cannot finish; the reason goes into the failure report.
    DeclareFailure { reason: String },
}

/// Outcome of trying to act on one goal condition.
enum Action {
    Do(AgentDecision),
    /// The condition is unmet but not this robot's to advance.
    NotMine,
}

/// Controller state for one robot working one subtask attempt.
#[derive(Debug, Clone)]
pub struct Agent {
    robot: RobotId,
    subtask: Subtask,
    profile: RobotProfile,
    /// Tools this robot may invoke (skill list bound against the catalog).
    tools: BTreeSet<ToolId>,
    budget_left: u32,
    history: Vec<(ToolInvocation, ToolResult)>,
    /// Barrier token shared by all assignees of a collaborative subtask.
    rendezvous_token: Option<String>,
}

impl Agent {
    pub fn new(
        profile: RobotProfile,
        tools: BTreeSet<ToolId>,
        subtask: Subtask,
        budget: u32,
    ) -> Self {
        Self {
            robot: profile.robot_id.clone(),
            subtask,
            profile,
            tools,
            budget_left: budget,
            history: Vec::new(),
            rendezvous_token: None,
        }
    }

    pub fn with_rendezvous_token(mut self, token: impl Into<String>) -> Self {
        self.rendezvous_token = Some(token.into());
        self
    }

    pub fn robot(&self) -> &RobotId {
        &self.robot
    }

    pub fn subtask(&self) -> &Subtask {
        &self.subtask
    }

    pub fn budget_left(&self) -> u32 {
        self.budget_left
    }

    pub fn history(&self) -> &[(ToolInvocation, ToolResult)] {
        &self.history
    }

    /// Record a finished invocation and spend one unit of budget.
    pub fn record(&mut self, invocation: ToolInvocation, result: ToolResult) {
        self.budget_left = self.budget_left.saturating_sub(1);
        self.history.push((invocation, result));
    }

    /// Choose the next move. Pure: same state and scene give the same
    /// decision. `seq` numbers the invocation if one is produced.
    pub fn decide(&self, scene: &SceneGraph, seq: u64) -> AgentDecision {
        if self.subtask.goal.iter().all(|c| c.eval(scene)) {
            return AgentDecision::DeclareSuccess;
        }
        if self.budget_left == 0 {
            return AgentDecision::DeclareFailure {
                reason: "invocation budget exhausted".into(),
            };
        }
        // react to the last result before planning fresh work
        if let Some((last_inv, last_res)) = self.history.last() {
            match &last_res.outcome {
                InvocationOutcome::Failure { reason } => match reason {
                    FailReason::Transient | FailReason::Blocked(_) => {
                        if self.previous_identical_failure(last_inv) {
                            return AgentDecision::DeclareFailure {
                                reason: format!(
                                    "{} on {} failed twice in a row",
                                    last_inv.tool,
                                    last_inv.target().unwrap_or("?")
                                ),
                            };
                        }
                        return AgentDecision::Invoke(reissue(last_inv, seq));
                    }
                    // a fruitless detect flows into the container sweep below
                    FailReason::NotFound => {}
                    FailReason::Rendezvous => {
                        return AgentDecision::DeclareFailure {
                            reason: "a collaboration partner missed the rendezvous".into(),
                        };
                    }
                },
                InvocationOutcome::Rejected { reason } => {
                    return AgentDecision::DeclareFailure {
                        reason: format!("invocation rejected: {reason}"),
                    };
                }
                InvocationOutcome::Success => {}
            }
        }
        // first unmet condition this robot can advance
        for condition in &self.subtask.goal {
            if condition.eval(scene) {
                continue;
            }
            match self.act_on(condition, scene, seq) {
                Action::Do(decision) => return decision,
                Action::NotMine => continue,
            }
        }
        if self.subtask.kind == SubtaskKind::Collaborative {
            AgentDecision::WaitPeers
        } else {
            AgentDecision::DeclareFailure {
                reason: "no action of this robot can advance the goal".into(),
            }
        }
    }

    // -- condition handlers ------------------------------------------------

    fn act_on(&self, condition: &Condition, scene: &SceneGraph, seq: u64) -> Action {
        match condition {
            Condition::PlacedOn { object, target }
            | Condition::ContainedIn { object, target } => {
                self.move_object(object, target, scene, seq)
            }
            Condition::HeldBy { object, robot } => {
                if robot == &self.robot {
                    if let Some(holder) = holding_robot(scene, object) {
                        if holder != self.node_id() {
                            // a peer carries it to me; be at the meeting point
                            return self.await_at_rendezvous(scene, seq);
                        }
                    }
                    self.acquire(object, scene, seq)
                } else if self.holds(scene, object) {
                    self.hand_to_robot(robot, scene, seq)
                } else if holding_robot(scene, object).is_none()
                    && self.could_acquire(object, scene)
                {
                    self.acquire(object, scene, seq)
                } else {
                    Action::NotMine
                }
            }
            Condition::Attribute { node, key, value } => match (key.as_str(), value) {
                ("open", AttrValue::Bool(true)) => self.open_node(node, scene, seq),
                ("filled", AttrValue::Bool(true)) => self.fill_node(node, scene, seq),
                // no tool writes arbitrary attributes
                _ => Action::NotMine,
            },
            Condition::RobotIn { robot, room } => {
                if robot == &self.robot {
                    self.navigate_to(room, scene, seq)
                } else {
                    Action::NotMine
                }
            }
        }
    }

    /// Get `object` onto or into `target`: acquire it if unheld, then carry
    /// and release it.
    fn move_object(
        &self,
        object: &NodeId,
        target: &NodeId,
        scene: &SceneGraph,
        seq: u64,
    ) -> Action {
        if self.holds(scene, object) {
            if self.subtask.kind == SubtaskKind::Collaborative {
                // deposit at the meeting point under the shared barrier
                let spot = self
                    .subtask
                    .rendezvous
                    .as_ref()
                    .map(|r| r.location.clone())
                    .unwrap_or_else(|| target.clone());
                if !self.in_reach(scene, &spot) {
                    return self.navigate_to(&spot, scene, seq);
                }
                return self.invoke_handover(&spot, seq);
            }
            if !self.in_reach(scene, target) {
                return self.navigate_to(target, scene, seq);
            }
            return self.invoke("place", target, seq);
        }
        if holding_robot(scene, object).is_some() {
            // somebody else carries it; their agent finishes the leg
            return Action::NotMine;
        }
        self.acquire(object, scene, seq)
    }

    /// Detect, approach, and grasp `object`. When the object has no
    /// believed location, sweep the openable containers of the motion
    /// domain, nearest room first.
    fn acquire(&self, object: &NodeId, scene: &SceneGraph, seq: u64) -> Action {
        if scene.node(object).is_some() {
            if let Some(obj_room) = scene.room_of(object) {
                if self.my_room(scene).as_ref() != Some(&obj_room) {
                    return self.navigate_to(&obj_room, scene, seq);
                }
            }
            // look before grabbing: one confirming detect per attempt
            if !self.detect_confirmed(object) {
                return self.invoke("detect", object, seq);
            }
            if !self.in_reach(scene, object) {
                return self.navigate_to(object, scene, seq);
            }
            return self.invoke("grasp", object, seq);
        }
        // unseen: detect once where we stand, then work the container list
        if !self.detect_attempted(object) {
            return self.invoke("detect", object, seq);
        }
        let explored = self.explored_containers();
        for candidate in self.search_candidates(scene) {
            if explored.contains(&candidate) {
                continue;
            }
            if !self.in_reach(scene, &candidate) {
                return self.navigate_to(&candidate, scene, seq);
            }
            let open = scene
                .node(&candidate)
                .and_then(|n| n.attr_bool("open"))
                .unwrap_or(false);
            if !open {
                return self.invoke("open_container", &candidate, seq);
            }
            return self.invoke("detect", object, seq);
        }
        Action::Do(AgentDecision::DeclareFailure {
            reason: format!("{object} is nowhere to be found"),
        })
    }

    /// Reach the vessel and pour into it from the source named in the
    /// hints, acquiring the source first.
    fn fill_node(&self, vessel: &NodeId, scene: &SceneGraph, seq: u64) -> Action {
        let Some(raw) = self.subtask.hints.get("source") else {
            return Action::Do(AgentDecision::DeclareFailure {
                reason: format!("nothing to fill {vessel} from: no source hint"),
            });
        };
        let source = resolve_ref(scene, raw);
        if !self.holds(scene, &source) {
            return self.acquire(&source, scene, seq);
        }
        if !self.in_reach(scene, vessel) {
            return self.navigate_to(vessel, scene, seq);
        }
        let mut invocation = self.build("pour", vessel, seq);
        invocation
            .args
            .insert("source".into(), source.as_str().to_string());
        self.guarded(invocation)
    }

    fn open_node(&self, node: &NodeId, scene: &SceneGraph, seq: u64) -> Action {
        if scene.node(node).is_none() {
            return Action::NotMine;
        }
        if !self.in_reach(scene, node) {
            return self.navigate_to(node, scene, seq);
        }
        self.invoke("open_container", node, seq)
    }

    /// Giver side of a transfer: meet the receiver and hand everything
    /// over.
    fn hand_to_robot(&self, receiver: &RobotId, scene: &SceneGraph, seq: u64) -> Action {
        if let Some(spec) = &self.subtask.rendezvous {
            if !self.in_reach(scene, &spec.location) {
                return self.navigate_to(&spec.location, scene, seq);
            }
        } else {
            let receiver_node = NodeId::from(receiver.as_str());
            if self.anchor(scene).as_ref() != Some(&receiver_node) {
                return self.navigate_to(&receiver_node, scene, seq);
            }
        }
        let target = NodeId::from(receiver.as_str());
        self.invoke_handover(&target, seq)
    }

    /// Receiver side of a transfer: stand at the meeting point and wait.
    fn await_at_rendezvous(&self, scene: &SceneGraph, seq: u64) -> Action {
        if let Some(spec) = &self.subtask.rendezvous {
            if !self.in_reach(scene, &spec.location) {
                return self.navigate_to(&spec.location, scene, seq);
            }
        }
        Action::Do(AgentDecision::WaitPeers)
    }

    // -- invocation builders ----------------------------------------------

    fn navigate_to(&self, target: &NodeId, scene: &SceneGraph, seq: u64) -> Action {
        let room = match scene.node(target) {
            Some(node) if node.kind == NodeKind::Room => Some(target.clone()),
            Some(_) => scene.room_of(target),
            None => None,
        };
        match room {
            Some(room) if self.profile.motion_domain.contains(&room) => {
                self.invoke("navigate", target, seq)
            }
            // outside this robot's world, or nowhere at all: not its move
            _ => Action::NotMine,
        }
    }

    fn invoke_handover(&self, target: &NodeId, seq: u64) -> Action {
        let mut invocation = self.build("handover", target, seq);
        if let Some(token) = &self.rendezvous_token {
            invocation.args.insert("rendezvous".into(), token.clone());
        }
        self.guarded(invocation)
    }

    fn invoke(&self, tool: &str, target: &NodeId, seq: u64) -> Action {
        self.guarded(self.build(tool, target, seq))
    }

    fn build(&self, tool: &str, target: &NodeId, seq: u64) -> ToolInvocation {
        ToolInvocation::new(seq, self.robot.clone(), tool, target.as_str())
            .for_subtask(self.subtask.id.clone())
    }

    fn guarded(&self, invocation: ToolInvocation) -> Action {
        if !self.tools.contains(&invocation.tool) {
            return Action::Do(AgentDecision::DeclareFailure {
                reason: format!("{} cannot invoke {}", self.robot, invocation.tool),
            });
        }
        Action::Do(AgentDecision::Invoke(invocation))
    }

    // -- believed-scene predicates ----------------------------------------

    fn node_id(&self) -> NodeId {
        NodeId::from(self.robot.as_str())
    }

    fn anchor(&self, scene: &SceneGraph) -> Option<NodeId> {
        scene
            .node(&self.node_id())
            .and_then(|n| n.attr_text("near"))
            .map(NodeId::from)
    }

    /// Anchor-based reach: the anchor itself, something directly on or in
    /// the anchor, or the thing the anchor rests on.
    fn in_reach(&self, scene: &SceneGraph, x: &NodeId) -> bool {
        let Some(anchor) = self.anchor(scene) else {
            return false;
        };
        if anchor == *x {
            return true;
        }
        if scene.parent_of(x).map(|(p, _)| p == anchor).unwrap_or(false) {
            return true;
        }
        scene
            .parent_of(&anchor)
            .map(|(p, _)| p == *x)
            .unwrap_or(false)
    }

    fn holds(&self, scene: &SceneGraph, object: &NodeId) -> bool {
        scene.parent_of(object) == Some((self.node_id(), Relation::Supports))
    }

    fn my_room(&self, scene: &SceneGraph) -> Option<NodeId> {
        scene.room_of(&self.node_id())
    }

    fn could_acquire(&self, object: &NodeId, scene: &SceneGraph) -> bool {
        match scene.room_of(object) {
            Some(room) => self.profile.motion_domain.contains(&room),
            None => !self.search_candidates(scene).is_empty(),
        }
    }

    // -- history queries ---------------------------------------------------

    fn detect_confirmed(&self, object: &NodeId) -> bool {
        self.history.iter().any(|(inv, res)| {
            inv.tool.as_str() == "detect"
                && inv.target() == Some(object.as_str())
                && res.outcome.is_success()
        })
    }

    fn detect_attempted(&self, object: &NodeId) -> bool {
        self.history
            .iter()
            .any(|(inv, _)| inv.tool.as_str() == "detect" && inv.target() == Some(object.as_str()))
    }

    fn previous_identical_failure(&self, last: &ToolInvocation) -> bool {
        let n = self.history.len();
        if n < 2 {
            return false;
        }
        let (prev_inv, prev_res) = &self.history[n - 2];
        prev_inv.tool == last.tool
            && prev_inv.args == last.args
            && !prev_res.outcome.is_success()
    }

    /// Containers already ruled out: a detect came up empty while anchored
    /// there. The anchor during each call is replayed from the navigate
    /// history.
    fn explored_containers(&self) -> BTreeSet<NodeId> {
        let mut explored = BTreeSet::new();
        let mut anchor: Option<NodeId> = None;
        for (inv, res) in &self.history {
            if inv.tool.as_str() == "navigate" && res.outcome.is_success() {
                anchor = inv.target().map(NodeId::from);
                continue;
            }
            if inv.tool.as_str() == "detect"
                && matches!(
                    res.outcome,
                    InvocationOutcome::Failure {
                        reason: FailReason::NotFound
                    }
                )
            {
                if let Some(at) = &anchor {
                    explored.insert(at.clone());
                }
            }
        }
        explored
    }

    /// Openable containers in the motion domain, current room first, then
    /// by room and id.
    fn search_candidates(&self, scene: &SceneGraph) -> Vec<NodeId> {
        let here = self.my_room(scene);
        let mut found: Vec<(bool, NodeId, NodeId)> = scene
            .nodes()
            .filter(|n| n.kind == NodeKind::Object && n.affordances.contains("openable"))
            .filter_map(|n| {
                let room = scene.room_of(&n.id)?;
                if !self.profile.motion_domain.contains(&room) {
                    return None;
                }
                Some((here.as_ref() != Some(&room), room, n.id.clone()))
            })
            .collect();
        found.sort();
        found.into_iter().map(|(_, _, id)| id).collect()
    }
}

/// The robot node currently supporting `object`, if its parent is tagged
/// as a robot.
fn holding_robot(scene: &SceneGraph, object: &NodeId) -> Option<NodeId> {
    let (parent, relation) = scene.parent_of(object)?;
    if relation != Relation::Supports {
        return None;
    }
    let node = scene.node(&parent)?;
    node.affordances.contains("robot").then_some(parent)
}

/// Resolve a hint to a node: by id when present, by unique label second,
/// and as a label-shaped id otherwise (for things nobody has seen yet).
fn resolve_ref(scene: &SceneGraph, raw: &str) -> NodeId {
    let direct = NodeId::from(raw);
    if scene.node(&direct).is_some() {
        return direct;
    }
    if let Some(node) = scene.nodes().find(|n| n.label == raw) {
        return node.id.clone();
    }
    NodeId::from(raw.replace(' ', "_"))
}

/// Same tool and arguments under a fresh sequence number.
fn reissue(last: &ToolInvocation, seq: u64) -> ToolInvocation {
    let mut invocation = last.clone();
    invocation.seq = seq;
    invocation.id = InvocationId::from(format!("inv-{seq:06}"));
    invocation
}
