//! Core library for a multi-robot orchestration stack: shared spatial and
//! temporal memory, task decomposition into subtask graphs, dependency-aware
//! scheduling with closed-loop recovery, tool-calling robot agents, a
//! registration-based message bus, and a deterministic discrete-event
//! simulation used to exercise all of it.

pub mod agent;
pub mod clock;
pub mod ids;
pub mod memory;
pub mod planner;
pub mod sched;
pub mod sim;
pub mod skills;

pub use clock::{Clock, SystemClock, VirtualClock};
pub use ids::{
    AgentId, GraphId, InvocationId, NodeId, RendezvousToken, RobotId, SubtaskId, TaskId,
    Timestamp, ToolId,
};
