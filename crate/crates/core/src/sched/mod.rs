//! Dependency-aware scheduling with closed-loop recovery.
//!
//! The monitor tracks every admitted subtask through its lifecycle:
//!
//! ```text
//! Pending -> Running -> Succeeded
//!                    -> Failed
//! Pending -> Cancelled            (task escalation)
//! ```
//!
//! A subtask is ready when all prerequisites succeeded; it is dispatchable
//! when additionally every assignee is free, which doubles as the barrier
//! for collaborative subtasks. A failed subtask is re-readied up to a retry
//! cap before it counts as failed for good; a definitive failure escalates
//! its task: everything non-terminal is cancelled and the task goes back to
//! planning for the goals still unmet, up to a replan cap.

use crate::ids::{GraphId, RobotId, SubtaskId, TaskId, Timestamp};
use crate::planner::{PlanError, Subtask, SubtaskGraph};
use crate::planner::TaskRequest;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, thiserror::Error)]
pub enum SchedError {
    #[error("graph rejected: {0}")]
    InvalidGraph(#[from] PlanError),
    #[error("unknown subtask {0}")]
    UnknownSubtask(SubtaskId),
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("subtask {subtask} is {state:?}, expected {expected:?}")]
    WrongState {
        subtask: SubtaskId,
        state: SubtaskState,
        expected: SubtaskState,
    },
    #[error("robot {robot} is assigned to {subtask} but busy with {busy_with}")]
    RobotConflict {
        robot: RobotId,
        subtask: SubtaskId,
        busy_with: SubtaskId,
    },
    #[error("subtask {subtask} assigned to unknown robot {robot}")]
    UnknownRobot {
        subtask: SubtaskId,
        robot: RobotId,
    },
    #[error("subtask id {0} already admitted")]
    DuplicateSubtask(SubtaskId),
    #[error("graph id {0} already admitted")]
    DuplicateGraph(GraphId),
    #[error("agent {robot} reported twice for {subtask}")]
    DuplicateReport { robot: RobotId, subtask: SubtaskId },
    #[error("robot {robot} needed by {subtask} is offline")]
    RobotOffline {
        robot: RobotId,
        subtask: SubtaskId,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubtaskState {
    Pending,
    Running,
    Succeeded,
    Failed,
    Cancelled,
}

impl SubtaskState {
    pub fn is_terminal(&self) -> bool {
        matches!(
            self,
            SubtaskState::Succeeded | SubtaskState::Failed | SubtaskState::Cancelled
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Active,
    Replanning,
    Succeeded,
    Failed,
}

/// Scheduling knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedConfig {
    /// Grasp-again attempts an agent gets per goal before escalating.
    pub retry_limit: u32,
    /// Tool invocations an agent may spend on one subtask.
    pub budget: u32,
    /// How long collaborators may wait at a rendezvous.
    pub rendezvous_timeout_ms: u64,
    /// Replans allowed per task before it fails outright.
    pub max_replans: u32,
}

impl Default for SchedConfig {
    fn default() -> Self {
        Self {
            retry_limit: 2,
            budget: 16,
            rendezvous_timeout_ms: 30_000,
            max_replans: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SubtaskEntry {
    subtask: Subtask,
    graph: GraphId,
    task: TaskId,
    state: SubtaskState,
    /// Admission rank of the owning graph; orders the ready set.
    seq: u64,
    /// Dispatch attempts so far; 1 while the first attempt runs.
    attempt: u32,
    /// Assignees that reported success while the subtask runs.
    reported: BTreeSet<RobotId>,
    /// When the current attempt was dispatched.
    started: Option<Timestamp>,
    /// When the subtask reached a terminal state.
    ended: Option<Timestamp>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TaskEntry {
    request: TaskRequest,
    state: TaskState,
    /// Planning rounds admitted so far; index is the round number.
    rounds: Vec<GraphId>,
}

/// What became of a subtask report.
#[derive(Debug, Clone, PartialEq)]
pub enum ReportOutcome {
    /// More assignees still working.
    Partial,
    /// The attempt failed but the retry cap is not exhausted: the subtask
    /// is pending again and will re-dispatch.
    Retrying { attempt: u32 },
    /// The subtask just reached a terminal state.
    SubtaskDone(SubtaskState),
}

/// Escalation result: what the engine must abort and whether the task may
/// replan again.
#[derive(Debug, Clone, PartialEq)]
pub struct Escalation {
    pub task: TaskId,
    pub cancelled: Vec<SubtaskId>,
    pub round: u32,
    pub replan_allowed: bool,
}

/// Serializable status dump of everything the monitor tracks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonitorStatus {
    pub tasks: BTreeMap<TaskId, TaskStatus>,
    pub robots: BTreeMap<RobotId, Option<SubtaskId>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskStatus {
    pub state: TaskState,
    pub rounds: usize,
    pub subtasks: BTreeMap<SubtaskId, SubtaskStatus>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubtaskStatus {
    pub state: SubtaskState,
    pub ready: bool,
    pub assignees: Vec<RobotId>,
    pub depth: u32,
    pub attempt: u32,
    pub started: Option<Timestamp>,
    pub ended: Option<Timestamp>,
    pub description: String,
}

/// The scheduling brain: admits graphs, hands out dispatchable subtasks,
/// digests agent reports, and escalates failing tasks.
#[derive(Debug, Default)]
pub struct Monitor {
    config: SchedConfig,
    subtasks: BTreeMap<SubtaskId, SubtaskEntry>,
    tasks: BTreeMap<TaskId, TaskEntry>,
    graphs: BTreeMap<GraphId, SubtaskGraph>,
    /// Graphs in the order they were admitted; ranks the ready set.
    admitted: Vec<GraphId>,
    /// None: free. Some(s): busy running s.
    robots: BTreeMap<RobotId, Option<SubtaskId>>,
    /// Robots withheld from dispatch until they come back.
    offline: BTreeSet<RobotId>,
}

impl Monitor {
    pub fn new(config: SchedConfig) -> Self {
        Self {
            config,
            ..Self::default()
        }
    }

    pub fn config(&self) -> &SchedConfig {
        &self.config
    }

    /// Robots must be introduced before subtasks naming them are admitted.
    pub fn add_robot(&mut self, robot: RobotId) {
        self.robots.entry(robot).or_insert(None);
    }

    pub fn robot_free(&self, robot: &RobotId) -> bool {
        matches!(self.robots.get(robot), Some(None))
    }

    /// Free and not offline: eligible for new work.
    pub fn robot_available(&self, robot: &RobotId) -> bool {
        self.robot_free(robot) && !self.offline.contains(robot)
    }

    /// Withhold a robot from dispatch. Work it is already running is left
    /// to finish or fail on its own.
    pub fn mark_offline(&mut self, robot: &RobotId) {
        if self.robots.contains_key(robot) {
            self.offline.insert(robot.clone());
        }
    }

    pub fn mark_online(&mut self, robot: &RobotId) {
        self.offline.remove(robot);
    }

    /// Admit a new task with its first graph (round 0).
    pub fn admit_task(
        &mut self,
        request: TaskRequest,
        graph: SubtaskGraph,
    ) -> Result<(), SchedError> {
        let task_id = request.id.clone();
        self.tasks.insert(
            task_id.clone(),
            TaskEntry {
                request,
                state: TaskState::Active,
                rounds: Vec::new(),
            },
        );
        self.admit_graph(&task_id, graph)
    }

    /// Admit a graph for an existing task (a replan round).
    pub fn admit_graph(
        &mut self,
        task_id: &TaskId,
        graph: SubtaskGraph,
    ) -> Result<(), SchedError> {
        graph.validate()?;
        if self.graphs.contains_key(&graph.id) {
            return Err(SchedError::DuplicateGraph(graph.id.clone()));
        }
        let entry = self
            .tasks
            .get_mut(task_id)
            .ok_or_else(|| SchedError::UnknownTask(task_id.clone()))?;
        for subtask in graph.subtasks.values() {
            if self.subtasks.contains_key(&subtask.id) {
                return Err(SchedError::DuplicateSubtask(subtask.id.clone()));
            }
            for robot in &subtask.assignees {
                if !self.robots.contains_key(robot) {
                    return Err(SchedError::UnknownRobot {
                        subtask: subtask.id.clone(),
                        robot: robot.clone(),
                    });
                }
            }
        }
        entry.rounds.push(graph.id.clone());
        entry.state = if graph.is_empty() {
            TaskState::Succeeded
        } else {
            TaskState::Active
        };
        let seq = self.admitted.len() as u64;
        self.admitted.push(graph.id.clone());
        for subtask in graph.subtasks.values() {
            self.subtasks.insert(
                subtask.id.clone(),
                SubtaskEntry {
                    subtask: subtask.clone(),
                    graph: graph.id.clone(),
                    task: task_id.clone(),
                    state: SubtaskState::Pending,
                    seq,
                    attempt: 1,
                    reported: BTreeSet::new(),
                    started: None,
                    ended: None,
                },
            );
        }
        self.graphs.insert(graph.id.clone(), graph);
        Ok(())
    }

    /// A subtask is ready when it is pending and every prerequisite
    /// succeeded.
    pub fn is_ready(&self, id: &SubtaskId) -> bool {
        let Some(entry) = self.subtasks.get(id) else {
            return false;
        };
        entry.state == SubtaskState::Pending
            && entry.subtask.prerequisites.iter().all(|p| {
                self.subtasks
                    .get(p)
                    .map(|e| e.state == SubtaskState::Succeeded)
                    .unwrap_or(false)
            })
    }

    /// Ready subtasks, oldest graph first and in id order within a graph,
    /// so earlier-admitted work always gets first claim on robots.
    pub fn ready_set(&self) -> Vec<SubtaskId> {
        let mut ready: Vec<(&u64, &SubtaskId)> = self
            .subtasks
            .iter()
            .filter(|(id, _)| self.is_ready(id))
            .map(|(id, e)| (&e.seq, id))
            .collect();
        ready.sort();
        ready.into_iter().map(|(_, id)| id.clone()).collect()
    }

    /// Ready subtasks whose assignees are all available, allocated greedily
    /// in ready-set order: one robot never appears in two picks of the same
    /// cycle. This is the collaborative barrier: a subtask waits until every
    /// assignee is available at once.
    pub fn dispatchable(&self) -> Vec<SubtaskId> {
        let mut claimed: BTreeSet<RobotId> = BTreeSet::new();
        let mut picks = Vec::new();
        for id in self.ready_set() {
            let entry = &self.subtasks[&id];
            let all_free = entry
                .subtask
                .assignees
                .iter()
                .all(|r| !claimed.contains(r) && self.robot_available(r));
            if all_free {
                claimed.extend(entry.subtask.assignees.iter().cloned());
                picks.push(id);
            }
        }
        picks
    }

    /// Move a ready subtask to running, claiming its robots.
    pub fn begin(&mut self, id: &SubtaskId, now: Timestamp) -> Result<&Subtask, SchedError> {
        if !self.is_ready(id) {
            let state = self
                .subtasks
                .get(id)
                .map(|e| e.state)
                .ok_or_else(|| SchedError::UnknownSubtask(id.clone()))?;
            return Err(SchedError::WrongState {
                subtask: id.clone(),
                state,
                expected: SubtaskState::Pending,
            });
        }
        let assignees = self.subtasks[id].subtask.assignees.clone();
        for robot in &assignees {
            if self.offline.contains(robot) {
                return Err(SchedError::RobotOffline {
                    robot: robot.clone(),
                    subtask: id.clone(),
                });
            }
            match self.robots.get(robot) {
                Some(None) => {}
                Some(Some(busy_with)) => {
                    return Err(SchedError::RobotConflict {
                        robot: robot.clone(),
                        subtask: id.clone(),
                        busy_with: busy_with.clone(),
                    })
                }
                None => {
                    return Err(SchedError::UnknownRobot {
                        subtask: id.clone(),
                        robot: robot.clone(),
                    })
                }
            }
        }
        for robot in &assignees {
            self.robots.insert(robot.clone(), Some(id.clone()));
        }
        let entry = self.subtasks.get_mut(id).unwrap();
        entry.state = SubtaskState::Running;
        entry.started = Some(now);
        Ok(&entry.subtask)
    }

    /// An assignee reports success. The subtask succeeds when every
    /// assignee has reported.
    pub fn agent_succeeded(
        &mut self,
        id: &SubtaskId,
        robot: &RobotId,
        now: Timestamp,
    ) -> Result<ReportOutcome, SchedError> {
        let entry = self
            .subtasks
            .get_mut(id)
            .ok_or_else(|| SchedError::UnknownSubtask(id.clone()))?;
        if entry.state != SubtaskState::Running {
            return Err(SchedError::WrongState {
                subtask: id.clone(),
                state: entry.state,
                expected: SubtaskState::Running,
            });
        }
        if !entry.reported.insert(robot.clone()) {
            return Err(SchedError::DuplicateReport {
                robot: robot.clone(),
                subtask: id.clone(),
            });
        }
        self.robots.insert(robot.clone(), None);
        if entry.reported.len() == entry.subtask.assignees.len() {
            entry.state = SubtaskState::Succeeded;
            entry.ended = Some(now);
            let task = entry.task.clone();
            self.refresh_task_state(&task);
            Ok(ReportOutcome::SubtaskDone(SubtaskState::Succeeded))
        } else {
            Ok(ReportOutcome::Partial)
        }
    }

    /// An assignee reports failure. All the subtask's robots are released
    /// (peer agents are aborted by the engine); then, while the retry cap
    /// allows, the subtask goes back to pending for another attempt.
    /// Beyond the cap it is failed for good and the caller escalates.
    pub fn agent_failed(
        &mut self,
        id: &SubtaskId,
        _robot: &RobotId,
        now: Timestamp,
    ) -> Result<ReportOutcome, SchedError> {
        let retry_limit = self.config.retry_limit;
        let entry = self
            .subtasks
            .get_mut(id)
            .ok_or_else(|| SchedError::UnknownSubtask(id.clone()))?;
        if entry.state != SubtaskState::Running {
            return Err(SchedError::WrongState {
                subtask: id.clone(),
                state: entry.state,
                expected: SubtaskState::Running,
            });
        }
        let assignees = entry.subtask.assignees.clone();
        let outcome = if entry.attempt < retry_limit {
            entry.attempt += 1;
            entry.state = SubtaskState::Pending;
            entry.reported.clear();
            entry.started = None;
            ReportOutcome::Retrying {
                attempt: entry.attempt,
            }
        } else {
            entry.state = SubtaskState::Failed;
            entry.ended = Some(now);
            ReportOutcome::SubtaskDone(SubtaskState::Failed)
        };
        for robot in &assignees {
            if self.robots.get(robot) == Some(&Some(id.clone())) {
                self.robots.insert(robot.clone(), None);
            }
        }
        Ok(outcome)
    }

    /// Escalate a task: cancel every non-terminal subtask in all its rounds,
    /// free their robots, and say whether another replan is allowed.
    pub fn escalate(&mut self, task_id: &TaskId, now: Timestamp) -> Result<Escalation, SchedError> {
        let entry = self
            .tasks
            .get_mut(task_id)
            .ok_or_else(|| SchedError::UnknownTask(task_id.clone()))?;
        let round = entry.rounds.len() as u32;
        let replan_allowed = round <= self.config.max_replans;
        entry.state = if replan_allowed {
            TaskState::Replanning
        } else {
            TaskState::Failed
        };

        let mut cancelled = Vec::new();
        let ids: Vec<SubtaskId> = self
            .subtasks
            .iter()
            .filter(|(_, e)| &e.task == task_id && !e.state.is_terminal())
            .map(|(id, _)| id.clone())
            .collect();
        for id in ids {
            let entry = self.subtasks.get_mut(&id).unwrap();
            entry.state = SubtaskState::Cancelled;
            entry.ended = Some(now);
            for robot in entry.subtask.assignees.clone() {
                if self.robots.get(&robot) == Some(&Some(id.clone())) {
                    self.robots.insert(robot, None);
                }
            }
            cancelled.push(id);
        }
        Ok(Escalation {
            task: task_id.clone(),
            cancelled,
            round,
            replan_allowed,
        })
    }

    /// Mark a task failed outright (replan impossible or cap reached).
    pub fn fail_task(&mut self, task_id: &TaskId) -> Result<(), SchedError> {
        let entry = self
            .tasks
            .get_mut(task_id)
            .ok_or_else(|| SchedError::UnknownTask(task_id.clone()))?;
        entry.state = TaskState::Failed;
        Ok(())
    }

    fn refresh_task_state(&mut self, task_id: &TaskId) {
        let Some(entry) = self.tasks.get(task_id) else {
            return;
        };
        if entry.state != TaskState::Active {
            return;
        }
        // the task succeeds when its latest round's subtasks all succeeded
        let Some(latest) = entry.rounds.last() else {
            return;
        };
        let all_done = self
            .subtasks
            .values()
            .filter(|e| &e.graph == latest)
            .all(|e| e.state == SubtaskState::Succeeded);
        if all_done {
            self.tasks.get_mut(task_id).unwrap().state = TaskState::Succeeded;
        }
    }

    pub fn subtask(&self, id: &SubtaskId) -> Option<&Subtask> {
        self.subtasks.get(id).map(|e| &e.subtask)
    }

    pub fn subtask_state(&self, id: &SubtaskId) -> Option<SubtaskState> {
        self.subtasks.get(id).map(|e| e.state)
    }

    pub fn subtask_attempt(&self, id: &SubtaskId) -> Option<u32> {
        self.subtasks.get(id).map(|e| e.attempt)
    }

    pub fn subtask_task(&self, id: &SubtaskId) -> Option<&TaskId> {
        self.subtasks.get(id).map(|e| &e.task)
    }

    pub fn task_state(&self, id: &TaskId) -> Option<TaskState> {
        self.tasks.get(id).map(|e| e.state)
    }

    pub fn task_request(&self, id: &TaskId) -> Option<&TaskRequest> {
        self.tasks.get(id).map(|e| &e.request)
    }

    pub fn task_round(&self, id: &TaskId) -> Option<u32> {
        self.tasks.get(id).map(|e| e.rounds.len() as u32)
    }

    pub fn task_ids(&self) -> Vec<TaskId> {
        self.tasks.keys().cloned().collect()
    }

    /// Unmet goal conditions of a task's latest round, for replanning.
    pub fn latest_graph(&self, task_id: &TaskId) -> Option<&SubtaskGraph> {
        let entry = self.tasks.get(task_id)?;
        let graph_id = entry.rounds.last()?;
        self.graphs.get(graph_id)
    }

    /// True when no admitted task has schedulable work left.
    pub fn all_settled(&self) -> bool {
        self.tasks
            .values()
            .all(|t| matches!(t.state, TaskState::Succeeded | TaskState::Failed))
    }

    pub fn status(&self) -> MonitorStatus {
        let mut tasks = BTreeMap::new();
        for (task_id, entry) in &self.tasks {
            let mut subtasks = BTreeMap::new();
            for graph_id in &entry.rounds {
                let Some(graph) = self.graphs.get(graph_id) else {
                    continue;
                };
                let depths = graph.depths().unwrap_or_default();
                for id in graph.subtasks.keys() {
                    let sub = &self.subtasks[id];
                    subtasks.insert(
                        id.clone(),
                        SubtaskStatus {
                            state: sub.state,
                            ready: self.is_ready(id),
                            assignees: sub.subtask.assignees.clone(),
                            depth: depths.get(id).copied().unwrap_or(0),
                            attempt: sub.attempt,
                            started: sub.started,
                            ended: sub.ended,
                            description: sub.subtask.description.clone(),
                        },
                    );
                }
            }
            tasks.insert(
                task_id.clone(),
                TaskStatus {
                    state: entry.state,
                    rounds: entry.rounds.len(),
                    subtasks,
                },
            );
        }
        MonitorStatus {
            tasks,
            robots: self.robots.clone(),
        }
    }
}
