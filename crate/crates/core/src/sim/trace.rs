//! Frozen run records for audit and replay.
//!
//! A `RunTrace` captures everything observable about one finished run: the
//! inputs that produced it, every tool call with both endpoints in virtual
//! time, final task and subtask outcomes, the full event log, and the
//! ground-truth world next to the shared belief at the end. Traces
//! serialize to canonical JSON, so re-running the same scenario, seed, and
//! failure policy yields a byte-identical file, and `audit` re-derives the
//! run's ordering guarantees from the record alone.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::ids::{RobotId, SubtaskId, TaskId, Timestamp};
use crate::memory::{SceneEdge, SceneGraph, SceneNode, TemporalEvent};
use crate::planner::{Condition, SubtaskKind};
use crate::sched::{SubtaskState, TaskState};
use crate::skills::FailurePolicy;

use super::engine::{Engine, EngineConfig, ToolCallRow};

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace i/o failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace encoding failed: {0}")]
    Json(#[from] serde_json::Error),
}

/// Point-in-time copy of a scene graph as plain node and edge lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSnapshot {
    pub nodes: Vec<SceneNode>,
    pub edges: Vec<SceneEdge>,
}

impl SceneSnapshot {
    pub fn of(scene: &SceneGraph) -> Self {
        Self {
            nodes: scene.nodes().cloned().collect(),
            edges: scene.edges().collect(),
        }
    }

    /// Parent of `id` in the snapshot, when it has one.
    pub fn parent_of(&self, id: &str) -> Option<&SceneEdge> {
        self.edges
            .iter()
            .find(|e| e.dst.as_str() == id && e.relation.is_parental())
    }
}

/// Final record of one task, in submission order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub id: TaskId,
    pub text: String,
    pub state: TaskState,
    /// Planning rounds consumed; 1 for a task that never replanned.
    pub rounds: usize,
}

/// Final record of one subtask, with enough structure to re-check ordering
/// and collaboration after the fact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskRow {
    pub id: SubtaskId,
    pub task: TaskId,
    pub description: String,
    pub collaborative: bool,
    pub assignees: Vec<RobotId>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub prerequisites: BTreeSet<SubtaskId>,
    pub goal: Vec<Condition>,
    pub state: SubtaskState,
    /// Attempt the subtask ended on.
    pub attempt: u32,
    /// Start of the last attempt, when the subtask ever dispatched.
    pub started: Option<Timestamp>,
    pub ended: Option<Timestamp>,
}

/// Everything observable about one finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub scenario: String,
    pub seed: u64,
    /// The inputs that produced this run; failure counters reset to zero.
    pub config: EngineConfig,
    pub makespan_ms: u64,
    pub success: bool,
    pub stalled: bool,
    /// Planning rounds beyond each task's first plan, summed over tasks.
    pub replans: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub honesty_violations: Vec<String>,
    pub tasks: Vec<TaskRow>,
    pub subtasks: Vec<SubtaskRow>,
    /// What each robot was still running when the run ended.
    pub robots: BTreeMap<RobotId, Option<SubtaskId>>,
    pub calls: Vec<ToolCallRow>,
    pub events: Vec<TemporalEvent>,
    pub final_world: SceneSnapshot,
    pub final_belief: SceneSnapshot,
}

impl RunTrace {
    /// Freeze a finished engine into a trace.
    pub fn capture(engine: &Engine) -> Self {
        let status = engine.monitor().status();
        let mut tasks = Vec::new();
        let mut subtasks = Vec::new();
        for id in engine.submitted() {
            let Some(task) = status.tasks.get(id) else {
                continue;
            };
            let text = engine
                .monitor()
                .task_request(id)
                .map(|r| r.text.clone())
                .unwrap_or_default();
            tasks.push(TaskRow {
                id: id.clone(),
                text,
                state: task.state,
                rounds: task.rounds,
            });
            for (sid, sub) in &task.subtasks {
                let spec = engine.monitor().subtask(sid);
                subtasks.push(SubtaskRow {
                    id: sid.clone(),
                    task: id.clone(),
                    description: sub.description.clone(),
                    collaborative: spec
                        .map(|s| s.kind == SubtaskKind::Collaborative)
                        .unwrap_or(sub.assignees.len() > 1),
                    assignees: sub.assignees.clone(),
                    prerequisites: spec.map(|s| s.prerequisites.clone()).unwrap_or_default(),
                    goal: spec.map(|s| s.goal.clone()).unwrap_or_default(),
                    state: sub.state,
                    attempt: sub.attempt,
                    started: sub.started,
                    ended: sub.ended,
                });
            }
        }
        let mut failures = FailurePolicy::none();
        failures.injections = engine.policy().injections.clone();
        let success = !engine.stalled()
            && engine.honesty_violations().is_empty()
            && !tasks.is_empty()
            && tasks.iter().all(|t| t.state == TaskState::Succeeded);
        let replans = tasks
            .iter()
            .map(|t| (t.rounds as u64).saturating_sub(1))
            .sum();
        Self {
            scenario: engine.scenario_name().to_string(),
            seed: engine.seed(),
            config: EngineConfig {
                sched: engine.monitor().config().clone(),
                failures,
                scope: engine.scope(),
                seed: engine.seed(),
            },
            makespan_ms: engine.clock().now().0,
            success,
            stalled: engine.stalled(),
            replans,
            honesty_violations: engine.honesty_violations().to_vec(),
            tasks,
            subtasks,
            robots: status.robots,
            calls: engine.calls().to_vec(),
            events: engine.memory().read_log(|log| log.events().to_vec()),
            final_world: SceneSnapshot::of(engine.world().scene()),
            final_belief: engine.memory().read_scene(SceneSnapshot::of),
        }
    }

    /// Canonical byte form; identical runs serialize to identical bytes.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("a trace always serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn save(&self, path: &Path) -> Result<(), TraceError> {
        std::fs::write(path, self.canonical_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TraceError> {
        let bytes = std::fs::read(path)?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Re-check the run's guarantees from the record alone. Returns one
    /// line per violation; an empty list means the trace is internally
    /// consistent.
    pub fn audit(&self) -> Vec<String> {
        let mut findings = Vec::new();
        self.audit_log(&mut findings);
        self.audit_exclusivity(&mut findings);
        self.audit_ordering(&mut findings);
        self.audit_collaboration(&mut findings);
        self.audit_consistency(&mut findings);
        findings
    }

    /// Event sequence numbers are gapless from 1, times never decrease,
    /// and nothing happens after the recorded makespan.
    fn audit_log(&self, findings: &mut Vec<String>) {
        for (i, event) in self.events.iter().enumerate() {
            if event.seq != i as u64 + 1 {
                findings.push(format!(
                    "event log is not gapless: position {} holds seq {}",
                    i + 1,
                    event.seq
                ));
            }
            if event.time.0 > self.makespan_ms {
                findings.push(format!(
                    "event {} happens at {}ms, after the {}ms makespan",
                    event.seq, event.time.0, self.makespan_ms
                ));
            }
        }
        for pair in self.events.windows(2) {
            if pair[1].time < pair[0].time {
                findings.push(format!(
                    "event {} moves time backwards ({}ms after {}ms)",
                    pair[1].seq, pair[1].time.0, pair[0].time.0
                ));
            }
        }
    }

    /// No robot runs two tool calls at once.
    fn audit_exclusivity(&self, findings: &mut Vec<String>) {
        let mut by_robot: BTreeMap<&RobotId, Vec<&ToolCallRow>> = BTreeMap::new();
        for call in &self.calls {
            by_robot.entry(&call.robot).or_default().push(call);
        }
        for (robot, mut calls) in by_robot {
            calls.sort_by_key(|c| (c.started_at, c.seq));
            for pair in calls.windows(2) {
                if pair[1].started_at < pair[0].completed_at {
                    findings.push(format!(
                        "{robot} starts call {} before call {} finishes",
                        pair[1].seq, pair[0].seq
                    ));
                }
            }
            for call in &calls {
                if call.completed_at.0 > self.makespan_ms {
                    findings.push(format!(
                        "call {} completes at {}ms, after the {}ms makespan",
                        call.seq, call.completed_at.0, self.makespan_ms
                    ));
                }
            }
        }
    }

    /// Subtasks start only after every prerequisite ended, and every call
    /// belongs to an assignee and stays inside its subtask's lifetime.
    fn audit_ordering(&self, findings: &mut Vec<String>) {
        let rows: BTreeMap<&SubtaskId, &SubtaskRow> =
            self.subtasks.iter().map(|r| (&r.id, r)).collect();
        for row in &self.subtasks {
            let Some(started) = row.started else {
                continue;
            };
            for prereq in &row.prerequisites {
                match rows.get(prereq) {
                    None => findings.push(format!(
                        "subtask {} lists unknown prerequisite {}",
                        row.id, prereq
                    )),
                    Some(p) => {
                        if p.ended.map(|e| e > started).unwrap_or(true) {
                            findings.push(format!(
                                "subtask {} started before prerequisite {} ended",
                                row.id, prereq
                            ));
                        }
                    }
                }
            }
        }
        for call in &self.calls {
            let Some(row) = rows.get(&call.subtask) else {
                findings.push(format!(
                    "call {} references unknown subtask {}",
                    call.seq, call.subtask
                ));
                continue;
            };
            if !row.assignees.contains(&call.robot) {
                findings.push(format!(
                    "call {} ran on {}, which is not assigned to {}",
                    call.seq, call.robot, row.id
                ));
            }
            if call.attempt == 0 || call.attempt > row.attempt {
                findings.push(format!(
                    "call {} claims attempt {} of {}, which ended on attempt {}",
                    call.seq, call.attempt, row.id, row.attempt
                ));
            }
            if let Some(ended) = row.ended {
                if call.completed_at > ended {
                    findings.push(format!(
                        "call {} completes after its subtask {} ended",
                        call.seq, row.id
                    ));
                }
            }
            // `started` tracks the last attempt, so only calls from that
            // attempt are bounded below by it.
            if call.attempt == row.attempt {
                if let Some(started) = row.started {
                    if call.started_at < started {
                        findings.push(format!(
                            "call {} starts before its subtask {} dispatched",
                            call.seq, row.id
                        ));
                    }
                }
            }
        }
    }

    /// A successful meeting completes together: every handover that
    /// succeeded in the deciding attempt finished at one instant.
    fn audit_collaboration(&self, findings: &mut Vec<String>) {
        for row in &self.subtasks {
            if !row.collaborative || row.state != SubtaskState::Succeeded {
                continue;
            }
            let times: BTreeSet<Timestamp> = self
                .calls
                .iter()
                .filter(|c| {
                    c.subtask == row.id
                        && c.attempt == row.attempt
                        && c.tool == "handover"
                        && c.outcome.is_success()
                })
                .map(|c| c.completed_at)
                .collect();
            if times.len() > 1 {
                findings.push(format!(
                    "the meeting at {} did not complete together: handovers landed at {:?}",
                    row.id,
                    times.iter().map(|t| t.0).collect::<Vec<_>>()
                ));
            }
        }
    }

    /// The summary fields agree with the rows they summarize.
    fn audit_consistency(&self, findings: &mut Vec<String>) {
        let all_succeeded = !self.tasks.is_empty()
            && self.tasks.iter().all(|t| t.state == TaskState::Succeeded);
        let claimed = self.success;
        let derived =
            all_succeeded && !self.stalled && self.honesty_violations.is_empty();
        if claimed != derived {
            findings.push(format!(
                "success flag says {claimed} but the task outcomes say {derived}"
            ));
        }
        let replans: u64 = self
            .tasks
            .iter()
            .map(|t| (t.rounds as u64).saturating_sub(1))
            .sum();
        if replans != self.replans {
            findings.push(format!(
                "replan count says {} but the task rounds add up to {}",
                self.replans, replans
            ));
        }
        if !self.stalled {
            for (robot, busy) in &self.robots {
                if let Some(subtask) = busy {
                    findings.push(format!(
                        "{robot} is still busy on {subtask} after a clean finish"
                    ));
                }
            }
        }
        for row in &self.subtasks {
            if !self.tasks.iter().any(|t| t.id == row.task) {
                findings.push(format!(
                    "subtask {} belongs to unknown task {}",
                    row.id, row.task
                ));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scenario::bundled;
    use crate::skills::FailurePolicy;

    fn run_trace(text_by_task: &[(&str, &str)], failures: FailurePolicy) -> RunTrace {
        let instance = bundled("household").unwrap().unwrap().instantiate().unwrap();
        let config = EngineConfig {
            failures,
            ..EngineConfig::default()
        };
        let mut engine = Engine::new(instance, config);
        for (id, text) in text_by_task {
            engine.submit(*id, *text).unwrap();
        }
        engine.run();
        RunTrace::capture(&engine)
    }

    fn clean_trace() -> RunTrace {
        run_trace(
            &[("t1", "bring the egg to the table")],
            FailurePolicy::none(),
        )
    }

    fn collab_trace() -> RunTrace {
        run_trace(
            &[("t1", "bring the cup and the book to the table")],
            FailurePolicy::none(),
        )
    }

    #[test]
    fn capture_freezes_the_whole_run() {
        let trace = clean_trace();
        assert!(trace.success);
        assert!(!trace.stalled);
        assert_eq!(trace.replans, 0);
        assert_eq!(trace.makespan_ms, 19_000);
        assert_eq!(trace.calls.len(), 7);
        assert_eq!(trace.tasks.len(), 1);
        assert_eq!(trace.tasks[0].text, "bring the egg to the table");
        assert_eq!(trace.tasks[0].rounds, 1);
        assert_eq!(trace.subtasks.len(), 1);
        assert_eq!(trace.subtasks[0].state, SubtaskState::Succeeded);
        assert!(!trace.events.is_empty());
        for snapshot in [&trace.final_world, &trace.final_belief] {
            let parent = snapshot.parent_of("egg").expect("egg has a parent");
            assert_eq!(parent.src.as_str(), "table");
        }
        assert!(trace.robots.values().all(|b| b.is_none()));
    }

    #[test]
    fn a_clean_trace_passes_its_own_audit() {
        assert_eq!(clean_trace().audit(), Vec::<String>::new());
        assert_eq!(collab_trace().audit(), Vec::<String>::new());
        let failing = run_trace(
            &[("t1", "bring the egg to the table")],
            FailurePolicy::none().fail_first("grasp", 10_000),
        );
        assert!(!failing.success);
        assert_eq!(failing.audit(), Vec::<String>::new());
    }

    #[test]
    fn the_same_seed_replays_to_identical_bytes() {
        let a = run_trace(
            &[("t1", "bring the egg to the table")],
            FailurePolicy::with_rate(7, 0.3),
        );
        let b = run_trace(
            &[("t1", "bring the egg to the table")],
            FailurePolicy::with_rate(7, 0.3),
        );
        assert_eq!(a, b);
        assert_eq!(a.canonical_bytes(), b.canonical_bytes());
    }

    #[test]
    fn file_round_trip_preserves_every_field() {
        let trace = collab_trace();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        trace.save(&path).unwrap();
        let back = RunTrace::load(&path).unwrap();
        assert_eq!(trace, back);
    }

    #[test]
    fn audit_flags_interleaved_robot_calls() {
        let mut trace = clean_trace();
        assert!(trace.calls.len() >= 2);
        assert_eq!(trace.calls[0].robot, trace.calls[1].robot);
        trace.calls[1].started_at = Timestamp(trace.calls[0].completed_at.0 - 1);
        let findings = trace.audit();
        assert!(
            findings.iter().any(|f| f.contains("before call")),
            "unexpected findings: {findings:?}"
        );
    }

    #[test]
    fn audit_flags_broken_prerequisites() {
        let mut trace = collab_trace();
        let gated = trace
            .subtasks
            .iter()
            .position(|r| !r.prerequisites.is_empty())
            .expect("the joint delivery has prerequisites");
        trace.subtasks[gated].started = Some(Timestamp(0));
        let findings = trace.audit();
        assert!(
            findings.iter().any(|f| f.contains("prerequisite")),
            "unexpected findings: {findings:?}"
        );

        let mut trace = collab_trace();
        trace.subtasks[gated]
            .prerequisites
            .insert("no-such-subtask".into());
        let findings = trace.audit();
        assert!(
            findings
                .iter()
                .any(|f| f.contains("unknown prerequisite")),
            "unexpected findings: {findings:?}"
        );
    }

    #[test]
    fn audit_flags_a_partial_meeting() {
        let mut trace = collab_trace();
        let handover = trace
            .calls
            .iter()
            .position(|c| c.tool == "handover" && c.outcome.is_success())
            .expect("the joint delivery hands over");
        trace.calls[handover].completed_at.0 += 1;
        let findings = trace.audit();
        assert!(
            findings.iter().any(|f| f.contains("complete together")),
            "unexpected findings: {findings:?}"
        );
    }

    #[test]
    fn audit_flags_a_dishonest_summary() {
        let mut trace = clean_trace();
        trace.tasks[0].state = TaskState::Failed;
        let findings = trace.audit();
        assert!(
            findings.iter().any(|f| f.contains("success flag")),
            "unexpected findings: {findings:?}"
        );

        let mut trace = clean_trace();
        trace.replans = 5;
        let findings = trace.audit();
        assert!(
            findings.iter().any(|f| f.contains("replan count")),
            "unexpected findings: {findings:?}"
        );

        let mut trace = clean_trace();
        let robot = trace.robots.keys().next().unwrap().clone();
        let subtask = trace.subtasks[0].id.clone();
        trace.robots.insert(robot, Some(subtask));
        let findings = trace.audit();
        assert!(
            findings.iter().any(|f| f.contains("still busy")),
            "unexpected findings: {findings:?}"
        );
    }

    #[test]
    fn audit_flags_log_tampering() {
        let mut trace = clean_trace();
        trace.events[1].seq = 99;
        let findings = trace.audit();
        assert!(
            findings.iter().any(|f| f.contains("not gapless")),
            "unexpected findings: {findings:?}"
        );
    }
}
