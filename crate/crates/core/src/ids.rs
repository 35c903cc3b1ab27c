//! Newtype identifiers shared across the kernel.
//!
//! All ids are ordered strings so that every map keyed by an id iterates
//! deterministically and serializes with a stable field order.

use serde::{Deserialize, Serialize};
use std::fmt;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(
    /// Identifies a node in a scene graph.
    NodeId
);
string_id!(
    /// Identifies a registered robot.
    RobotId
);
string_id!(
    /// Identifies a tool in the skill catalog.
    ToolId
);
string_id!(
    /// Identifies a subtask inside a subtask graph.
    SubtaskId
);
string_id!(
    /// Identifies an admitted subtask graph.
    GraphId
);
string_id!(
    /// Identifies a submitted task.
    TaskId
);
string_id!(
    /// Identifies one agent run (one subtask on one robot).
    AgentId
);
string_id!(
    /// Identifies one tool invocation; results reference it.
    InvocationId
);
string_id!(
    /// Rendezvous token shared by the assignees of a collaboration subtask.
    RendezvousToken
);

/// Logical timestamp in milliseconds.
///
/// Under the simulation harness this is virtual time starting at zero; in
/// service mode it is wall-clock milliseconds since kernel start.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn as_millis(&self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(&self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn saturating_add_millis(&self, ms: u64) -> Timestamp {
        Timestamp(self.0.saturating_add(ms))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}
