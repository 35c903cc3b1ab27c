//! Discrete-event execution engine.
//!
//! One engine owns a scenario instance end to end: it plans submitted
//! tasks, dispatches ready subtasks to per-robot agents, runs their tool
//! calls against the ground-truth world on a virtual clock, mirrors
//! successful effects into shared belief, injects configured failures, and
//! drives retries, escalation, and replanning until every task settles.
//! Everything is ordered by (virtual time, event sequence), so a run is a
//! pure function of the scenario, the submitted tasks, and the failure
//! policy.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentDecision};
use crate::clock::{Clock, VirtualClock};
use crate::ids::{RobotId, SubtaskId, TaskId, Timestamp};
use crate::memory::{EventKind, Memory, RobotProfile, StatePatch};
use crate::planner::{
    compose_context, plan_task, ContextError, ContextScope, PlanError, RemotePlanning, TaskRequest,
};
use crate::sched::{Monitor, ReportOutcome, SchedConfig, SchedError, SubtaskState, TaskState};
use crate::sim::scenario::SimInstance;
use crate::sim::world::{MirrorOp, SimWorld};
use crate::skills::{
    FailReason, FailurePolicy, InjectedFailure, InvocationOutcome, ToolCatalog, ToolInvocation,
    ToolResult,
};

#[derive(Debug, thiserror::Error)]
pub enum SubmitError {
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Sched(#[from] SchedError),
}

/// Knobs for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub sched: SchedConfig,
    pub failures: FailurePolicy,
    pub scope: ContextScope,
    /// Recorded in the trace; failure rules carry their own seeds.
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            sched: SchedConfig::default(),
            failures: FailurePolicy::none(),
            scope: ContextScope::default(),
            seed: 0,
        }
    }
}

/// One finished tool call, with both endpoints in virtual time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCallRow {
    pub seq: u64,
    pub subtask: SubtaskId,
    pub attempt: u32,
    pub robot: RobotId,
    pub tool: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra_args: BTreeMap<String, String>,
    pub started_at: Timestamp,
    pub completed_at: Timestamp,
    pub outcome: InvocationOutcome,
}

/// A tool call on the wire between start and completion.
#[derive(Debug, Clone)]
struct Flight {
    invocation: ToolInvocation,
    injected: Option<InjectedFailure>,
    attempt: u32,
    started: Timestamp,
    duration_ms: u64,
}

/// Collaborative meeting state for one subtask attempt.
#[derive(Debug, Clone, Default)]
struct Barrier {
    attempt: u32,
    parked: BTreeMap<RobotId, Flight>,
    released: bool,
}

/// Scheduled future happening.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Happening {
    ToolDone { subtask: SubtaskId, robot: RobotId, attempt: u32 },
    Deadline { subtask: SubtaskId, attempt: u32 },
}

pub struct Engine {
    clock: Arc<VirtualClock>,
    world: SimWorld,
    memory: Memory,
    monitor: Monitor,
    catalog: ToolCatalog,
    policy: FailurePolicy,
    scope: ContextScope,
    seed: u64,
    scenario_name: String,
    templates: Vec<crate::planner::GoalTemplate>,
    vocabulary: Vec<String>,
    profiles: BTreeMap<RobotId, RobotProfile>,
    remote: Option<RemotePlanning>,

    agents: BTreeMap<(SubtaskId, RobotId), Agent>,
    waiting: BTreeSet<(SubtaskId, RobotId)>,
    in_flight: BTreeMap<(SubtaskId, RobotId), Flight>,
    barriers: BTreeMap<SubtaskId, Barrier>,
    events: BinaryHeap<Reverse<(u64, u64, Happening)>>,
    event_seq: u64,
    invocation_seq: u64,

    calls: Vec<ToolCallRow>,
    submitted: Vec<TaskId>,
    honesty_violations: Vec<String>,
    stalled: bool,
}

impl Engine {
    pub fn new(instance: SimInstance, config: EngineConfig) -> Self {
        let mut monitor = Monitor::new(config.sched);
        let mut profiles = BTreeMap::new();
        for profile in &instance.profiles {
            monitor.add_robot(profile.robot_id.clone());
            profiles.insert(profile.robot_id.clone(), profile.clone());
        }
        Self {
            clock: instance.clock,
            world: instance.world,
            memory: instance.memory,
            monitor,
            catalog: ToolCatalog::builtin(),
            policy: config.failures,
            scope: config.scope,
            seed: config.seed,
            scenario_name: instance.scenario.name.clone(),
            templates: instance.scenario.templates.clone(),
            vocabulary: instance.scenario.vocabulary.clone(),
            profiles,
            remote: None,
            agents: BTreeMap::new(),
            waiting: BTreeSet::new(),
            in_flight: BTreeMap::new(),
            barriers: BTreeMap::new(),
            events: BinaryHeap::new(),
            event_seq: 0,
            invocation_seq: 0,
            calls: Vec::new(),
            submitted: Vec::new(),
            honesty_violations: Vec::new(),
            stalled: false,
        }
    }

    /// Route planning through a remote backend, rules as fallback.
    pub fn set_remote(&mut self, remote: RemotePlanning) {
        self.remote = Some(remote);
    }

    pub fn memory(&self) -> &Memory {
        &self.memory
    }

    pub fn world(&self) -> &SimWorld {
        &self.world
    }

    pub fn monitor(&self) -> &Monitor {
        &self.monitor
    }

    pub fn clock(&self) -> &Arc<VirtualClock> {
        &self.clock
    }

    /// Plan a task and admit its first subtask graph. Nothing executes
    /// until [`Engine::run`].
    pub fn submit(
        &mut self,
        id: impl Into<TaskId>,
        text: impl Into<String>,
    ) -> Result<TaskId, SubmitError> {
        let id = id.into();
        let request = TaskRequest::new(id.clone(), text, self.clock.now());
        let input = compose_context(
            &self.memory,
            request.clone(),
            self.templates.clone(),
            self.vocabulary.clone(),
            0,
            self.scope,
        )?;
        let outcome = plan_task(&input, self.remote.as_ref())?;
        self.memory.append_event(
            EventKind::PlanIssued,
            id.as_str(),
            serde_json::json!({
                "graph": outcome.graph.id,
                "round": 0,
                "subtasks": outcome.graph.subtasks.keys().collect::<Vec<_>>(),
                "source": format!("{:?}", outcome.source),
                "reasoning": outcome.trace.steps,
                "fallback_reason": outcome.fallback_reason,
            }),
        );
        self.monitor.admit_task(request, outcome.graph)?;
        self.submitted.push(id.clone());
        Ok(id)
    }

    /// Drive every submitted task to a terminal state.
    pub fn run(&mut self) {
        self.dispatch();
        loop {
            if self.monitor.all_settled() && self.in_flight.is_empty() {
                break;
            }
            let Some(Reverse((time, _, happening))) = self.events.pop() else {
                // nothing scheduled but work remains: a genuine deadlock
                self.declare_stall();
                break;
            };
            self.clock.advance_to(time);
            match happening {
                Happening::ToolDone {
                    subtask,
                    robot,
                    attempt,
                } => self.finish_tool(&subtask, &robot, attempt),
                Happening::Deadline { subtask, attempt } => {
                    self.miss_rendezvous(&subtask, attempt)
                }
            }
            self.dispatch();
        }
    }

    // -- dispatch ----------------------------------------------------------

    /// Start every subtask whose prerequisites are met and whose robots are
    /// all free, then step the fresh agents.
    fn dispatch(&mut self) {
        loop {
            let picks = self.monitor.dispatchable();
            if picks.is_empty() {
                return;
            }
            for id in picks {
                let now = self.clock.now();
                let subtask = match self.monitor.begin(&id, now) {
                    Ok(s) => s.clone(),
                    Err(e) => {
                        log::warn!("dispatch of {id} refused: {e}");
                        continue;
                    }
                };
                let attempt = self.monitor.subtask_attempt(&id).unwrap_or(1);
                let token = format!("rv-{id}-a{attempt}");
                for robot in &subtask.assignees {
                    let profile = self.profiles[robot].clone();
                    let tools = self.catalog.bind(&profile);
                    let budget = self.monitor.config().budget;
                    let mut agent = Agent::new(profile, tools, subtask.clone(), budget);
                    if subtask.rendezvous.is_some() {
                        agent = agent.with_rendezvous_token(token.clone());
                    }
                    self.agents.insert((id.clone(), robot.clone()), agent);
                    let _ = self
                        .memory
                        .update_robot_state(robot, &StatePatch::busy_on(id.clone()));
                }
                if let Some(spec) = &subtask.rendezvous {
                    let timeout = spec
                        .timeout_ms
                        .unwrap_or(self.monitor.config().rendezvous_timeout_ms);
                    self.schedule(
                        now.0 + timeout,
                        Happening::Deadline {
                            subtask: id.clone(),
                            attempt,
                        },
                    );
                    self.barriers.insert(
                        id.clone(),
                        Barrier {
                            attempt,
                            ..Barrier::default()
                        },
                    );
                }
                for robot in subtask.assignees.clone() {
                    self.step_agent(&id, &robot);
                }
            }
        }
    }

    fn schedule(&mut self, at_ms: u64, happening: Happening) {
        self.event_seq += 1;
        self.events
            .push(Reverse((at_ms, self.event_seq, happening)));
    }

    // -- agent stepping ----------------------------------------------------

    /// Ask one agent for its next move and act on it.
    fn step_agent(&mut self, subtask: &SubtaskId, robot: &RobotId) {
        let key = (subtask.clone(), robot.clone());
        loop {
            let Some(agent) = self.agents.get(&key) else {
                return;
            };
            if self.in_flight.contains_key(&key) {
                return;
            }
            if self
                .barriers
                .get(subtask)
                .map(|b| b.parked.contains_key(robot))
                .unwrap_or(false)
            {
                return;
            }
            let scene = self.memory.read_scene(|s| s.clone());
            self.invocation_seq += 1;
            let decision = agent.decide(&scene, self.invocation_seq);
            match decision {
                AgentDecision::Invoke(invocation) => {
                    if self.launch(&key, invocation) {
                        return;
                    }
                    // a rejected invocation was recorded; let the agent react
                }
                AgentDecision::WaitPeers => {
                    self.waiting.insert(key);
                    return;
                }
                AgentDecision::DeclareSuccess => {
                    self.report_success(subtask, robot);
                    return;
                }
                AgentDecision::DeclareFailure { reason } => {
                    self.report_failure(subtask, robot, &reason);
                    return;
                }
            }
        }
    }

    /// Validate and start one invocation. Returns false when the call was
    /// rejected outright and the agent should decide again.
    fn launch(&mut self, key: &(SubtaskId, RobotId), invocation: ToolInvocation) -> bool {
        let (subtask_id, robot) = key;
        let now = self.clock.now();
        let attempt = self.monitor.subtask_attempt(subtask_id).unwrap_or(1);
        self.memory.append_event(
            EventKind::ToolCall,
            robot.as_str(),
            serde_json::json!({
                "invocation": invocation.id,
                "seq": invocation.seq,
                "tool": invocation.tool,
                "args": invocation.args,
                "subtask": subtask_id,
                "attempt": attempt,
            }),
        );
        let profile = &self.profiles[robot];
        match self.catalog.validate_invocation(profile, &invocation) {
            Ok(tool) => {
                let duration_ms = tool.duration_ms;
                let injected = self.policy.decide(&invocation.tool, invocation.seq);
                let flight = Flight {
                    invocation,
                    injected,
                    attempt,
                    started: now,
                    duration_ms,
                };
                let is_rendezvous_handover = flight.invocation.tool.as_str() == "handover"
                    && flight.invocation.args.contains_key("rendezvous");
                // barrier: a rendezvous handover parks until everyone is at
                // the meeting point; after release, late retries run directly
                let parks = is_rendezvous_handover
                    && self
                        .barriers
                        .get(subtask_id)
                        .map(|b| !b.released)
                        .unwrap_or(false);
                if parks {
                    self.barriers
                        .get_mut(subtask_id)
                        .expect("checked above")
                        .parked
                        .insert(robot.clone(), flight);
                    self.try_release_barrier(subtask_id);
                    return true;
                }
                let done_at = now.0 + duration_ms;
                self.in_flight.insert(key.clone(), flight);
                self.schedule(
                    done_at,
                    Happening::ToolDone {
                        subtask: subtask_id.clone(),
                        robot: robot.clone(),
                        attempt,
                    },
                );
                true
            }
            Err(e) => {
                // malformed or unauthorized: fails instantly, costs no time
                let result = ToolResult {
                    invocation: invocation.id.clone(),
                    robot: robot.clone(),
                    tool: invocation.tool.clone(),
                    outcome: InvocationOutcome::Rejected {
                        reason: e.to_string(),
                    },
                    started_at: now,
                    completed_at: now,
                    observation: None,
                };
                self.record_result(key, invocation, result);
                false
            }
        }
    }

    /// Release the barrier when every assignee has arrived.
    fn try_release_barrier(&mut self, subtask: &SubtaskId) {
        let Some(assignees) = self.monitor.subtask(subtask).map(|s| s.assignees.clone()) else {
            return;
        };
        let Some(barrier) = self.barriers.get(subtask) else {
            return;
        };
        if barrier.released {
            return;
        }
        let all_arrived = assignees.iter().all(|r| {
            barrier.parked.contains_key(r)
                || self.waiting.contains(&(subtask.clone(), r.clone()))
        });
        if !all_arrived || barrier.parked.is_empty() {
            return;
        }
        let now = self.clock.now();
        let barrier = self.barriers.get_mut(subtask).unwrap();
        barrier.released = true;
        let parked = std::mem::take(&mut barrier.parked);
        let attempt = barrier.attempt;
        for (robot, flight) in parked {
            let done_at = now.0 + flight.duration_ms;
            self.in_flight
                .insert((subtask.clone(), robot.clone()), flight);
            self.schedule(
                done_at,
                Happening::ToolDone {
                    subtask: subtask.clone(),
                    robot,
                    attempt,
                },
            );
        }
    }

    // -- event handling ----------------------------------------------------

    /// A scheduled completion fired: resolve the outcome against the world,
    /// mirror effects into belief, and step the agent.
    fn finish_tool(&mut self, subtask: &SubtaskId, robot: &RobotId, attempt: u32) {
        let key = (subtask.clone(), robot.clone());
        // stale guard: teardown already dropped the flight of a dead
        // attempt, and a newer attempt's flight must never be consumed by
        // an old event
        let stale = self.monitor.subtask_state(subtask) != Some(SubtaskState::Running)
            || self.monitor.subtask_attempt(subtask) != Some(attempt)
            || self.in_flight.get(&key).map(|f| f.attempt) != Some(attempt);
        if stale {
            return;
        }
        let flight = self.in_flight.remove(&key).expect("checked above");
        let now = self.clock.now();
        let invocation = flight.invocation.clone();
        let (outcome, observation) = match flight.injected {
            Some(InjectedFailure::Transient) => (
                InvocationOutcome::Failure {
                    reason: FailReason::Transient,
                },
                None,
            ),
            Some(InjectedFailure::Spoof) => {
                // a lying precondition check: perception reports a miss,
                // anything else claims to be blocked
                let reason = if invocation.tool.as_str() == "detect" {
                    FailReason::NotFound
                } else {
                    FailReason::Blocked("a precondition check refused the call".into())
                };
                (InvocationOutcome::Failure { reason }, None)
            }
            None => match self.world.apply(&invocation, now) {
                Ok(effect) => {
                    self.mirror(&effect.mirror);
                    (InvocationOutcome::Success, Some(effect.observation))
                }
                Err(reason) => (InvocationOutcome::Failure { reason }, None),
            },
        };
        let result = ToolResult {
            invocation: invocation.id.clone(),
            robot: robot.clone(),
            tool: invocation.tool.clone(),
            outcome,
            started_at: flight.started,
            completed_at: now,
            observation,
        };
        self.record_result(&key, invocation, result);
        self.step_agent(subtask, robot);
        self.wake_waiters();
    }

    /// Log and store one finished call, then feed it back to its agent.
    fn record_result(
        &mut self,
        key: &(SubtaskId, RobotId),
        invocation: ToolInvocation,
        result: ToolResult,
    ) {
        self.memory.append_event(
            EventKind::ToolResult,
            key.1.as_str(),
            serde_json::json!({
                "invocation": result.invocation,
                "tool": result.tool,
                "outcome": result.outcome,
                "observation": result.observation,
            }),
        );
        self.calls.push(ToolCallRow {
            seq: invocation.seq,
            subtask: key.0.clone(),
            attempt: self.monitor.subtask_attempt(&key.0).unwrap_or(0),
            robot: key.1.clone(),
            tool: invocation.tool.as_str().to_string(),
            target: invocation.target().unwrap_or_default().to_string(),
            extra_args: invocation
                .args
                .iter()
                .filter(|(k, _)| k.as_str() != "target")
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            started_at: result.started_at,
            completed_at: result.completed_at,
            outcome: result.outcome.clone(),
        });
        if let Some(agent) = self.agents.get_mut(key) {
            agent.record(invocation, result);
        }
    }

    /// Replay world effects into the shared believed scene.
    fn mirror(&mut self, ops: &[MirrorOp]) {
        for op in ops {
            let applied = match op {
                MirrorOp::Upsert { node, parent } => self
                    .memory
                    .upsert_node(node.clone(), parent.clone())
                    .map(|_| ()),
                MirrorOp::Edge { src, dst, relation } => {
                    self.memory.set_edge(src, dst, *relation).map(|_| ())
                }
            };
            if let Err(e) = applied {
                log::error!("belief mirror write failed: {e}");
            }
        }
    }

    /// Re-step every agent parked on peers; progress may have unblocked
    /// them.
    fn wake_waiters(&mut self) {
        let waiters: Vec<(SubtaskId, RobotId)> = self.waiting.iter().cloned().collect();
        for key in waiters {
            self.waiting.remove(&key);
            self.step_agent(&key.0, &key.1);
            // an agent that parked a handover meanwhile may have completed
            // the meeting
            self.try_release_barrier(&key.0);
        }
    }

    /// The meeting window for a collaborative subtask closed.
    fn miss_rendezvous(&mut self, subtask: &SubtaskId, attempt: u32) {
        if self.monitor.subtask_state(subtask) != Some(SubtaskState::Running)
            || self.monitor.subtask_attempt(subtask) != Some(attempt)
        {
            return;
        }
        if self.barriers.get(subtask).map(|b| b.released).unwrap_or(true) {
            return;
        }
        self.report_failure(
            subtask,
            &self
                .monitor
                .subtask(subtask)
                .map(|s| s.assignees[0].clone())
                .expect("running subtask has assignees"),
            "the rendezvous window closed before everyone arrived",
        );
    }

    // -- reports and escalation --------------------------------------------

    fn report_success(&mut self, subtask: &SubtaskId, robot: &RobotId) {
        // honesty: a success claim must hold in the ground truth too
        let goal_met = self
            .monitor
            .subtask(subtask)
            .map(|s| s.goal.iter().all(|c| c.eval(self.world.scene())))
            .unwrap_or(false);
        if !goal_met {
            self.honesty_violations.push(format!(
                "{robot} reported {subtask} done but the world disagrees"
            ));
            self.report_failure(subtask, robot, "success claim contradicts the world");
            return;
        }
        let now = self.clock.now();
        match self.monitor.agent_succeeded(subtask, robot, now) {
            Ok(ReportOutcome::Partial) => {
                self.agents.remove(&(subtask.clone(), robot.clone()));
                let _ = self.memory.update_robot_state(robot, &StatePatch::idle());
            }
            Ok(ReportOutcome::SubtaskDone(state)) => {
                self.finish_subtask(subtask, state, None);
            }
            Ok(ReportOutcome::Retrying { .. }) => unreachable!("success never retries"),
            Err(e) => log::error!("success report for {subtask} refused: {e}"),
        }
    }

    fn report_failure(&mut self, subtask: &SubtaskId, robot: &RobotId, reason: &str) {
        let now = self.clock.now();
        match self.monitor.agent_failed(subtask, robot, now) {
            Ok(ReportOutcome::Retrying { attempt }) => {
                self.memory.append_event(
                    EventKind::TaskFeedback,
                    subtask.as_str(),
                    serde_json::json!({
                        "state": "retrying",
                        "next_attempt": attempt,
                        "robot": robot,
                        "reason": reason,
                    }),
                );
                self.teardown_subtask(subtask);
                // back to pending; the next dispatch cycle spawns attempt n+1
            }
            Ok(ReportOutcome::SubtaskDone(state)) => {
                self.finish_subtask(subtask, state, Some(reason));
            }
            Ok(ReportOutcome::Partial) => unreachable!("failure reports are never partial"),
            Err(e) => log::error!("failure report for {subtask} refused: {e}"),
        }
    }

    /// A subtask reached a terminal state: log it, drop its agents, and
    /// escalate its task if it failed.
    fn finish_subtask(&mut self, subtask: &SubtaskId, state: SubtaskState, reason: Option<&str>) {
        self.memory.append_event(
            EventKind::TaskFeedback,
            subtask.as_str(),
            serde_json::json!({
                "state": format!("{state:?}").to_lowercase(),
                "reason": reason,
            }),
        );
        self.teardown_subtask(subtask);
        if state == SubtaskState::Failed {
            let task = self
                .monitor
                .subtask_task(subtask)
                .cloned()
                .expect("subtask belongs to a task");
            self.escalate(&task);
        }
        self.wake_waiters();
    }

    /// Drop every per-attempt structure of a subtask and idle its robots.
    fn teardown_subtask(&mut self, subtask: &SubtaskId) {
        let keys: Vec<(SubtaskId, RobotId)> = self
            .agents
            .keys()
            .filter(|(s, _)| s == subtask)
            .cloned()
            .collect();
        for key in keys {
            self.agents.remove(&key);
            self.waiting.remove(&key);
            self.in_flight.remove(&key);
            let _ = self.memory.update_robot_state(&key.1, &StatePatch::idle());
        }
        self.barriers.remove(subtask);
    }

    /// A subtask is out of retries: cancel the task's in-flight work and
    /// replan what is still unmet, or fail the task when the replan budget
    /// is gone.
    fn escalate(&mut self, task: &TaskId) {
        let now = self.clock.now();
        let escalation = match self.monitor.escalate(task, now) {
            Ok(e) => e,
            Err(e) => {
                log::error!("escalation of {task} refused: {e}");
                return;
            }
        };
        self.memory.append_event(
            EventKind::Escalation,
            task.as_str(),
            serde_json::json!({
                "cancelled": escalation.cancelled,
                "round": escalation.round,
                "replan_allowed": escalation.replan_allowed,
            }),
        );
        for id in &escalation.cancelled {
            self.teardown_subtask(id);
        }
        if !escalation.replan_allowed {
            self.memory.append_event(
                EventKind::TaskFeedback,
                task.as_str(),
                serde_json::json!({ "state": "failed", "reason": "replan budget exhausted" }),
            );
            return;
        }
        let request = self
            .monitor
            .task_request(task)
            .cloned()
            .expect("escalated task is known");
        let result = compose_context(
            &self.memory,
            request,
            self.templates.clone(),
            self.vocabulary.clone(),
            escalation.round,
            self.scope,
        )
        .map_err(SubmitError::from)
        .and_then(|input| plan_task(&input, self.remote.as_ref()).map_err(SubmitError::from));
        match result {
            Ok(outcome) => {
                self.memory.append_event(
                    EventKind::PlanIssued,
                    task.as_str(),
                    serde_json::json!({
                        "graph": outcome.graph.id,
                        "round": escalation.round,
                        "subtasks": outcome.graph.subtasks.keys().collect::<Vec<_>>(),
                        "source": format!("{:?}", outcome.source),
                        "reasoning": outcome.trace.steps,
                        "fallback_reason": outcome.fallback_reason,
                    }),
                );
                if let Err(e) = self.monitor.admit_graph(task, outcome.graph) {
                    log::error!("replan graph for {task} refused: {e}");
                    let _ = self.monitor.fail_task(task);
                }
            }
            Err(e) => {
                self.memory.append_event(
                    EventKind::TaskFeedback,
                    task.as_str(),
                    serde_json::json!({ "state": "failed", "reason": e.to_string() }),
                );
                let _ = self.monitor.fail_task(task);
            }
        }
    }

    /// No events, no dispatchable work, tasks unsettled: record the wreck
    /// honestly instead of spinning.
    fn declare_stall(&mut self) {
        self.stalled = true;
        for task in self.monitor.task_ids() {
            if !matches!(
                self.monitor.task_state(&task),
                Some(TaskState::Succeeded) | Some(TaskState::Failed)
            ) {
                self.memory.append_event(
                    EventKind::TaskFeedback,
                    task.as_str(),
                    serde_json::json!({ "state": "failed", "reason": "execution stalled" }),
                );
                let _ = self.monitor.fail_task(&task);
            }
        }
    }

    // -- results -----------------------------------------------------------

    pub fn calls(&self) -> &[ToolCallRow] {
        &self.calls
    }

    pub fn honesty_violations(&self) -> &[String] {
        &self.honesty_violations
    }

    pub fn stalled(&self) -> bool {
        self.stalled
    }

    pub fn submitted(&self) -> &[TaskId] {
        &self.submitted
    }

    pub fn scenario_name(&self) -> &str {
        &self.scenario_name
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Failure policy as it stands now; counters have advanced during the run.
    pub fn policy(&self) -> &FailurePolicy {
        &self.policy
    }

    pub fn scope(&self) -> ContextScope {
        self.scope
    }
}
