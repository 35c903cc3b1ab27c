//! Run scoring: sequence alignment, gold traces, and generated task suites.
//!
//! A gold trace is the tool-call sequence of a failure-free run, frozen as
//! (tool, target) steps. Scoring replays a task under some failure policy
//! and aligns the executed calls against gold by longest common
//! subsequence: extra calls (retries, detours) count as insertions and do
//! not lower the score, so a run that re-executes the whole gold sequence
//! in order scores exactly 1.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::ids::TaskId;
use crate::sched::TaskState;
use crate::skills::FailurePolicy;

use super::engine::{Engine, EngineConfig, ToolCallRow};
use super::scenario::{Scenario, ScenarioError};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("no gold trace to score against")]
    MissingGold,
    #[error("the pattern pool yields only {available} solvable tasks, {requested} requested")]
    TemplateExhaustion { requested: usize, available: usize },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// One expected call: which tool on which target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldStep {
    pub tool: String,
    pub target: String,
}

impl GoldStep {
    pub fn new(tool: impl Into<String>, target: impl Into<String>) -> Self {
        Self {
            tool: tool.into(),
            target: target.into(),
        }
    }
}

/// Length of the longest common subsequence of `a` and `b`.
pub fn lcs<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    // one-row dynamic program; row[j] covers a[..i] against b[..j]
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// The (tool, target) steps of an executed call sequence.
pub fn call_steps(calls: &[ToolCallRow]) -> Vec<GoldStep> {
    calls
        .iter()
        .map(|c| GoldStep::new(c.tool.clone(), c.target.clone()))
        .collect()
}

/// Fraction of the gold trace the run reproduced in order.
pub fn compute_ar(calls: &[ToolCallRow], gold: &[GoldStep]) -> Result<f64, MetricsError> {
    if gold.is_empty() {
        return Err(MetricsError::MissingGold);
    }
    Ok(lcs(&call_steps(calls), gold) as f64 / gold.len() as f64)
}

/// One generated task with its frozen gold trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteTask {
    pub id: TaskId,
    pub text: String,
    pub gold: Vec<GoldStep>,
}

/// Every pattern instantiated with every object and place label, in a
/// fixed order: pattern, then object, then place.
fn candidate_texts(scenario: &Scenario) -> Vec<String> {
    let objects = scenario.object_labels();
    let places = scenario.place_labels();
    let mut texts = Vec::new();
    for pattern in &scenario.task_patterns {
        for object in &objects {
            for place in &places {
                texts.push(
                    pattern
                        .replace("{object}", object)
                        .replace("{place}", place),
                );
            }
        }
    }
    texts
}

/// Gold steps for one task: the calls of a failure-free run. None when
/// the text cannot be planned, the run does not succeed, or it succeeds
/// without doing anything.
fn try_gold(scenario: &Scenario, text: &str) -> Result<Option<Vec<GoldStep>>, ScenarioError> {
    let mut engine = Engine::new(scenario.instantiate()?, EngineConfig::default());
    let id = TaskId::from("gold");
    if engine.submit(id.clone(), text).is_err() {
        return Ok(None);
    }
    engine.run();
    let clean = engine.monitor().task_state(&id) == Some(TaskState::Succeeded)
        && !engine.stalled()
        && engine.honesty_violations().is_empty()
        && !engine.calls().is_empty();
    if !clean {
        return Ok(None);
    }
    Ok(Some(call_steps(engine.calls())))
}

/// Sample `n` solvable tasks from the scenario's pattern pool, shuffled by
/// `seed`, each with a gold trace frozen from its failure-free run.
pub fn generate_task_suite(
    scenario: &Scenario,
    n: usize,
    seed: u64,
) -> Result<Vec<SuiteTask>, MetricsError> {
    let mut texts = candidate_texts(scenario);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    texts.shuffle(&mut rng);
    let mut suite = Vec::new();
    for text in texts {
        if suite.len() == n {
            break;
        }
        if let Some(gold) = try_gold(scenario, &text)? {
            suite.push(SuiteTask {
                id: TaskId::from(format!("{}-{:03}", scenario.name, suite.len() + 1)),
                text,
                gold,
            });
        }
    }
    if suite.len() < n {
        return Err(MetricsError::TemplateExhaustion {
            requested: n,
            available: suite.len(),
        });
    }
    Ok(suite)
}

/// Scores for one task of a suite run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub id: TaskId,
    pub text: String,
    pub success: bool,
    pub ar: f64,
    pub calls: usize,
    pub makespan_ms: u64,
    pub replans: u64,
}

/// Aggregates over one suite run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub scenario: String,
    pub tasks: usize,
    pub succeeded: usize,
    pub mean_ar: f64,
    pub min_ar: f64,
    pub mean_calls: f64,
    pub mean_makespan_ms: f64,
    pub scores: Vec<TaskScore>,
}

/// Run every suite task in its own fresh world under the given failure
/// policy and score it against its gold trace.
pub fn run_suite(
    scenario: &Scenario,
    suite: &[SuiteTask],
    failures: &FailurePolicy,
) -> Result<SuiteReport, MetricsError> {
    let mut scores = Vec::new();
    for task in suite {
        let config = EngineConfig {
            failures: failures.clone(),
            ..EngineConfig::default()
        };
        let mut engine = Engine::new(scenario.instantiate()?, config);
        let success = match engine.submit(task.id.clone(), task.text.as_str()) {
            Ok(_) => {
                engine.run();
                engine.monitor().task_state(&task.id) == Some(TaskState::Succeeded)
                    && !engine.stalled()
                    && engine.honesty_violations().is_empty()
            }
            Err(_) => false,
        };
        let ar = compute_ar(engine.calls(), &task.gold)?;
        let replans = engine
            .monitor()
            .task_round(&task.id)
            .map(|r| (r as u64).saturating_sub(1))
            .unwrap_or(0);
        scores.push(TaskScore {
            id: task.id.clone(),
            text: task.text.clone(),
            success,
            ar,
            calls: engine.calls().len(),
            makespan_ms: engine.clock().now().0,
            replans,
        });
    }
    let n = scores.len() as f64;
    let mean = |f: &dyn Fn(&TaskScore) -> f64| {
        if scores.is_empty() {
            0.0
        } else {
            scores.iter().map(f).sum::<f64>() / n
        }
    };
    Ok(SuiteReport {
        scenario: scenario.name.clone(),
        tasks: scores.len(),
        succeeded: scores.iter().filter(|s| s.success).count(),
        mean_ar: mean(&|s| s.ar),
        min_ar: scores.iter().map(|s| s.ar).fold(1.0, f64::min),
        mean_calls: mean(&|s| s.calls as f64),
        mean_makespan_ms: mean(&|s| s.makespan_ms as f64),
        scores,
    })
}
