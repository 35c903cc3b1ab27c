//! Remote planner integration.
//!
//! A remote planner is anything that turns a rendered prompt into a JSON
//! plan. The call runs with a deadline; on timeout, transport error,
//! malformed output, or an invalid graph, planning falls back to the
//! built-in rules so a flaky remote can never stall task intake. The
//! fallback reason is preserved on the outcome so callers can log it.

use crate::ids::SubtaskId;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::Duration;

use super::graph::{PlanError, Subtask, SubtaskGraph};
use super::prompt::render_prompt;
use super::rules::{self, PlannerInput, ReasoningTrace};

#[derive(Debug, thiserror::Error)]
pub enum RemoteError {
    #[error("remote planner transport failed: {0}")]
    Transport(String),
    #[error("remote planner timed out after {0} ms")]
    Timeout(u64),
    #[error("remote planner returned malformed output: {0}")]
    Malformed(String),
    #[error("remote planner produced an invalid graph: {0}")]
    InvalidGraph(#[from] PlanError),
}

/// Completion backend for planning.
pub trait RemotePlanner: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, RemoteError>;
}

#[derive(Debug, Clone)]
pub struct RemoteOptions {
    pub timeout_ms: u64,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        Self { timeout_ms: 2000 }
    }
}

/// Which path produced a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanSource {
    Rules,
    Remote,
}

/// Subtask list as the remote returns it; ids are optional and minted when
/// missing. `reasoning` carries the remote's step-by-step notes, if any.
#[derive(Debug, serde::Deserialize)]
struct WirePlan {
    #[serde(default)]
    reasoning: Vec<String>,
    subtasks: Vec<WireSubtask>,
}

#[derive(Debug, serde::Deserialize)]
struct WireSubtask {
    #[serde(default)]
    id: Option<String>,
    #[serde(flatten)]
    body: SubtaskBody,
}

/// Everything of a subtask except the id.
#[derive(Debug, serde::Deserialize)]
struct SubtaskBody {
    description: String,
    kind: super::graph::SubtaskKind,
    assignees: Vec<crate::ids::RobotId>,
    #[serde(default)]
    prerequisites: std::collections::BTreeSet<SubtaskId>,
    goal: Vec<super::graph::Condition>,
    #[serde(default)]
    target_room: Option<crate::ids::NodeId>,
    #[serde(default)]
    rendezvous: Option<super::graph::RendezvousSpec>,
    #[serde(default)]
    hints: std::collections::BTreeMap<String, String>,
}

/// Parse a remote completion into a validated subtask graph plus the
/// remote's reasoning notes. Accepts the JSON object either bare or
/// wrapped in a markdown code fence.
pub fn parse_plan_response(
    text: &str,
    input: &PlannerInput,
) -> Result<(ReasoningTrace, SubtaskGraph), RemoteError> {
    let body = strip_code_fence(text);
    let wire: WirePlan =
        serde_json::from_str(body).map_err(|e| RemoteError::Malformed(e.to_string()))?;
    let mut trace = ReasoningTrace::default();
    for step in wire.reasoning {
        trace.note(step);
    }
    let mut graph = SubtaskGraph::new(
        format!("{}-p{}", input.task.id, input.round),
        input.task.id.clone(),
        input.snapshot.taken_at,
    );
    for (n, wire_subtask) in wire.subtasks.into_iter().enumerate() {
        let id = wire_subtask
            .id
            .map(SubtaskId::from)
            .unwrap_or_else(|| SubtaskId::from(format!("{}-p{}-s{}", input.task.id, input.round, n + 1)));
        let body = wire_subtask.body;
        graph.push(Subtask {
            id,
            description: body.description,
            kind: body.kind,
            assignees: body.assignees,
            prerequisites: body.prerequisites,
            goal: body.goal,
            target_room: body.target_room,
            rendezvous: body.rendezvous,
            hints: body.hints,
            depth: None,
        });
    }
    graph.fill_depths()?;
    graph.validate()?;
    Ok((trace, graph))
}

fn strip_code_fence(text: &str) -> &str {
    let trimmed = text.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let rest = rest.strip_prefix("json").unwrap_or(rest);
    let rest = rest.strip_suffix("```").unwrap_or(rest);
    rest.trim()
}

/// Run the remote with a deadline. The worker thread is detached on
/// timeout; a hung remote costs a thread, not the planner.
fn complete_with_deadline(
    remote: Arc<dyn RemotePlanner>,
    prompt: String,
    timeout_ms: u64,
) -> Result<String, RemoteError> {
    let (tx, rx) = mpsc::sync_channel(1);
    std::thread::spawn(move || {
        let _ = tx.send(remote.complete(&prompt));
    });
    match rx.recv_timeout(Duration::from_millis(timeout_ms)) {
        Ok(result) => result,
        Err(_) => Err(RemoteError::Timeout(timeout_ms)),
    }
}

/// Remote planning configuration handed to [`plan_task`].
#[derive(Clone)]
pub struct RemotePlanning {
    pub backend: Arc<dyn RemotePlanner>,
    pub prompt_template: String,
    pub options: RemoteOptions,
}

/// A finished planning pass: the graph, how it was produced, and why the
/// remote was abandoned when it was.
#[derive(Debug)]
pub struct PlanOutcome {
    pub trace: ReasoningTrace,
    pub graph: SubtaskGraph,
    pub source: PlanSource,
    /// Set when a configured remote failed and rules took over.
    pub fallback_reason: Option<String>,
}

/// Produce a plan for the input: remote first when configured, rules
/// otherwise or on any remote failure.
pub fn plan_task(
    input: &PlannerInput,
    remote: Option<&RemotePlanning>,
) -> Result<PlanOutcome, PlanError> {
    let mut fallback_reason = None;
    if let Some(cfg) = remote {
        let prompt = render_prompt(&cfg.prompt_template, input);
        match complete_with_deadline(
            Arc::clone(&cfg.backend),
            prompt,
            cfg.options.timeout_ms,
        )
        .and_then(|text| parse_plan_response(&text, input))
        {
            Ok((trace, graph)) => {
                return Ok(PlanOutcome {
                    trace,
                    graph,
                    source: PlanSource::Remote,
                    fallback_reason: None,
                })
            }
            Err(err) => {
                log::warn!("remote planning failed ({err}), falling back to rules");
                fallback_reason = Some(err.to_string());
            }
        }
    }
    let (trace, graph) = rules::plan(input)?;
    Ok(PlanOutcome {
        trace,
        graph,
        source: PlanSource::Rules,
        fallback_reason,
    })
}

/// Remote stub that replays a canned response; test and demo helper.
pub struct CannedPlanner {
    pub response: String,
    /// Artificial latency before answering.
    pub delay_ms: u64,
}

impl RemotePlanner for CannedPlanner {
    fn complete(&self, _prompt: &str) -> Result<String, RemoteError> {
        if self.delay_ms > 0 {
            std::thread::sleep(Duration::from_millis(self.delay_ms));
        }
        Ok(self.response.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::VirtualClock;
    use crate::ids::{NodeId, RobotId, Timestamp, ToolId};
    use crate::memory::{Embodiment, Memory, NodeKind, ParentRef, RobotProfile, SceneNode};
    use crate::planner::rules::{GoalTemplate, TaskRequest, TemplateKind};

    fn input() -> PlannerInput {
        let mem = Memory::new(Arc::new(VirtualClock::new()));
        mem.upsert_node(SceneNode::new("ground", NodeKind::Floor, "ground"), None)
            .unwrap();
        mem.upsert_node(
            SceneNode::new("kitchen", NodeKind::Room, "kitchen"),
            Some(ParentRef::contains("ground")),
        )
        .unwrap();
        mem.upsert_node(
            SceneNode::new("table", NodeKind::Object, "table").with_affordance("surface"),
            Some(ParentRef::contains("kitchen")),
        )
        .unwrap();
        mem.upsert_node(
            SceneNode::new("counter", NodeKind::Object, "counter").with_affordance("surface"),
            Some(ParentRef::contains("kitchen")),
        )
        .unwrap();
        mem.upsert_node(
            SceneNode::new("orange", NodeKind::Object, "orange").with_affordance("graspable"),
            Some(ParentRef::supports("counter")),
        )
        .unwrap();
        mem.register_robot(RobotProfile {
            robot_id: RobotId::from("r1"),
            embodiment: Embodiment::Wheeled,
            skills: ["navigate", "detect", "grasp", "place"]
                .iter()
                .map(|s| ToolId::from(*s))
                .collect(),
            motion_domain: [NodeId::from("kitchen")].into_iter().collect(),
            home_position: [0.0; 3],
        })
        .unwrap();
        PlannerInput {
            task: TaskRequest::new("t1", "bring the orange to the table", Timestamp::ZERO),
            snapshot: mem.snapshot(),
            templates: vec![GoalTemplate {
                name: "fetch".into(),
                kind: TemplateKind::Fetch,
                keywords: vec!["bring".into()],
                params: Default::default(),
            }],
            vocabulary: vec![],
            round: 0,
        }
    }

    fn good_response() -> String {
        serde_json::json!({
            "reasoning": ["the orange sits on the counter", "r1 can carry it"],
            "subtasks": [{
                "description": "move the orange",
                "kind": "single",
                "assignees": ["r1"],
                "goal": [{
                    "kind": "placed_on",
                    "object": "orange",
                    "target": "table",
                }],
            }]
        })
        .to_string()
    }

    #[test]
    fn valid_remote_response_is_used() {
        let cfg = RemotePlanning {
            backend: Arc::new(CannedPlanner {
                response: good_response(),
                delay_ms: 0,
            }),
            prompt_template: "{{task}}".into(),
            options: RemoteOptions::default(),
        };
        let outcome = plan_task(&input(), Some(&cfg)).unwrap();
        assert_eq!(outcome.source, PlanSource::Remote);
        assert!(outcome.fallback_reason.is_none());
        assert_eq!(outcome.trace.steps.len(), 2);
        assert_eq!(outcome.graph.len(), 1);
        assert_eq!(outcome.graph.id.as_str(), "t1-p0");
        let subtask = outcome.graph.subtasks.values().next().unwrap();
        assert_eq!(subtask.id.as_str(), "t1-p0-s1");
        assert_eq!(subtask.description, "move the orange");
        assert_eq!(subtask.depth, Some(1));
    }

    #[test]
    fn fenced_response_is_accepted() {
        let fenced = format!("```json\n{}\n```", good_response());
        let (_, graph) = parse_plan_response(&fenced, &input()).unwrap();
        assert_eq!(graph.len(), 1);
    }

    #[test]
    fn garbage_falls_back_to_rules() {
        let cfg = RemotePlanning {
            backend: Arc::new(CannedPlanner {
                response: "I cannot help with that.".into(),
                delay_ms: 0,
            }),
            prompt_template: String::new(),
            options: RemoteOptions::default(),
        };
        let outcome = plan_task(&input(), Some(&cfg)).unwrap();
        assert_eq!(outcome.source, PlanSource::Rules);
        let reason = outcome.fallback_reason.expect("fallback reason recorded");
        assert!(reason.contains("malformed"), "reason: {reason}");
        assert_eq!(outcome.graph.len(), 1);
    }

    #[test]
    fn invalid_graph_falls_back_to_rules() {
        // two subtasks forming a prerequisite cycle
        let cyclic = serde_json::json!({
            "subtasks": [
                {
                    "id": "a",
                    "description": "one",
                    "kind": "single",
                    "assignees": ["r1"],
                    "prerequisites": ["b"],
                    "goal": [{"kind": "placed_on", "object": "orange", "target": "table"}],
                },
                {
                    "id": "b",
                    "description": "two",
                    "kind": "single",
                    "assignees": ["r1"],
                    "prerequisites": ["a"],
                    "goal": [{"kind": "placed_on", "object": "orange", "target": "table"}],
                }
            ]
        })
        .to_string();
        let cfg = RemotePlanning {
            backend: Arc::new(CannedPlanner {
                response: cyclic,
                delay_ms: 0,
            }),
            prompt_template: String::new(),
            options: RemoteOptions::default(),
        };
        let outcome = plan_task(&input(), Some(&cfg)).unwrap();
        assert_eq!(outcome.source, PlanSource::Rules);
        assert!(outcome.fallback_reason.is_some());
    }

    #[test]
    fn timeout_falls_back_to_rules() {
        let cfg = RemotePlanning {
            backend: Arc::new(CannedPlanner {
                response: good_response(),
                delay_ms: 300,
            }),
            prompt_template: String::new(),
            options: RemoteOptions { timeout_ms: 20 },
        };
        let started = std::time::Instant::now();
        let outcome = plan_task(&input(), Some(&cfg)).unwrap();
        assert_eq!(outcome.source, PlanSource::Rules);
        let reason = outcome.fallback_reason.expect("fallback reason recorded");
        assert!(reason.contains("timed out"), "reason: {reason}");
        assert!(started.elapsed() < Duration::from_millis(250));
    }

    #[test]
    fn transport_error_falls_back_to_rules() {
        struct Failing;
        impl RemotePlanner for Failing {
            fn complete(&self, _prompt: &str) -> Result<String, RemoteError> {
                Err(RemoteError::Transport("connection refused".into()))
            }
        }
        let cfg = RemotePlanning {
            backend: Arc::new(Failing),
            prompt_template: String::new(),
            options: RemoteOptions::default(),
        };
        let outcome = plan_task(&input(), Some(&cfg)).unwrap();
        assert_eq!(outcome.source, PlanSource::Rules);
        assert!(outcome.fallback_reason.is_some());
    }

    #[test]
    fn no_remote_uses_rules_directly() {
        let outcome = plan_task(&input(), None).unwrap();
        assert_eq!(outcome.source, PlanSource::Rules);
        assert!(outcome.fallback_reason.is_none());
        assert!(!outcome.trace.steps.is_empty());
        assert_eq!(outcome.graph.len(), 1);
    }
}
