//! Deterministic discrete-event simulation.
//!
//! A scenario file describes rooms, fixtures, objects (some hidden inside
//! containers), and robots. Instantiating it yields a ground-truth world
//! and a shared memory seeded with what is visible. The engine then runs
//! submitted tasks end to end on a virtual clock: planning, dispatch,
//! per-robot agents, tool physics, injected failures, retries, and
//! replanning, producing a replayable trace.

mod engine;
mod metrics;
mod scenario;
mod trace;
mod world;

pub use engine::{Engine, EngineConfig, SubmitError, ToolCallRow};
pub use metrics::{
    call_steps, compute_ar, generate_task_suite, lcs, run_suite, GoldStep, MetricsError,
    SuiteReport, SuiteTask, TaskScore,
};
pub use scenario::{bundled, NodeSpec, RobotSpec, Scenario, ScenarioError, SimInstance, BUNDLED};
pub use trace::{RunTrace, SceneSnapshot, SubtaskRow, TaskRow, TraceError};
pub use world::{MirrorOp, SimWorld, ToolEffect};
