//! Shared memory: the one place every component reads from and writes to.
//!
//! Three stores live behind one facade: the spatial scene graph, the
//! append-only temporal log, and the robot registry. All mutation goes
//! through [`Memory`], which stamps times from its clock and keeps the
//! stores mutually consistent. Snapshots clone all three under a fixed
//! lock order (scene, log, registry) so cross-references resolve.

mod registry;
mod scene;
mod temporal;

pub use registry::{
    Embodiment, RegisteredRobot, Registry, RobotProfile, RobotState, RobotStatus, StatePatch,
};
pub use scene::{
    AttrValue, Delta, DeltaKind, NodeKind, Observation, ParentRef, Relation, SceneEdge, SceneGraph,
    SceneNode, SpatialMatch, SpatialQuery, Visibility,
};
pub use temporal::{EventKind, TemporalEvent, TemporalLog};

use crate::clock::Clock;
use crate::ids::{NodeId, RobotId, Timestamp};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

#[derive(Debug, thiserror::Error)]
pub enum MemoryError {
    #[error("node {node} already exists as {existing}, cannot become {requested}")]
    KindMismatch {
        node: NodeId,
        existing: NodeKind,
        requested: NodeKind,
    },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown room {0}")]
    UnknownRoom(NodeId),
    #[error("unknown robot {0}")]
    UnknownRobot(RobotId),
    #[error("edge {src} -> {dst} would close a cycle")]
    CycleDetected { src: NodeId, dst: NodeId },
    #[error("node {0} needs a parent")]
    OrphanNode(NodeId),
    #[error("hierarchy violation: {0}")]
    HierarchyViolation(String),
    #[error("query has no filters")]
    EmptyQuery,
    #[error("battery {0} outside [0, 1]")]
    BatteryRange(f64),
    #[error("robot state invariant violated: {0}")]
    StateInvariant(String),
    #[error("robot {robot} already registered as {existing}, cannot become {requested}")]
    ConflictingRegistration {
        robot: RobotId,
        existing: Embodiment,
        requested: Embodiment,
    },
    #[error("invalid robot profile: {0}")]
    InvalidProfile(String),
    #[error("event log gap: expected seq {expected}, found {found}")]
    LogGap { expected: u64, found: u64 },
    #[error("event log time regression at seq {seq}")]
    LogTimeRegression { seq: u64 },
    #[error("snapshot inconsistency: {0}")]
    SnapshotInconsistency(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Serde(#[from] serde_json::Error),
}

/// Point-in-time copy of all three stores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemorySnapshot {
    pub taken_at: Timestamp,
    pub scene: SceneGraph,
    /// Bounded tail of the temporal log, oldest first.
    pub recent_events: Vec<TemporalEvent>,
    pub registry: Registry,
}

impl MemorySnapshot {
    /// Internal consistency: the scene hierarchy holds, the event tail is a
    /// contiguous ascending run, and registry entries are keyed by their own
    /// robot id.
    pub fn validate(&self) -> Result<(), MemoryError> {
        self.scene.validate()?;
        for pair in self.recent_events.windows(2) {
            if pair[1].seq != pair[0].seq + 1 {
                return Err(MemoryError::SnapshotInconsistency(format!(
                    "event tail jumps from seq {} to {}",
                    pair[0].seq, pair[1].seq
                )));
            }
        }
        for (id, robot) in self.registry.iter() {
            if id != &robot.profile.robot_id || id != &robot.state.robot_id {
                return Err(MemoryError::SnapshotInconsistency(format!(
                    "registry key {id} does not match entry ids"
                )));
            }
        }
        Ok(())
    }
}

/// How many log entries a snapshot carries by default.
pub const DEFAULT_SNAPSHOT_EVENTS: usize = 256;

/// Thread-safe shared memory facade.
pub struct Memory {
    clock: Arc<dyn Clock>,
    scene: RwLock<SceneGraph>,
    log: Mutex<TemporalLog>,
    registry: RwLock<Registry>,
    snapshot_events: usize,
}

impl Memory {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self {
            clock,
            scene: RwLock::new(SceneGraph::new()),
            log: Mutex::new(TemporalLog::new()),
            registry: RwLock::new(Registry::new()),
            snapshot_events: DEFAULT_SNAPSHOT_EVENTS,
        }
    }

    pub fn with_scene(clock: Arc<dyn Clock>, scene: SceneGraph) -> Self {
        Self {
            scene: RwLock::new(scene),
            ..Self::new(clock)
        }
    }

    pub fn set_snapshot_events(&mut self, n: usize) {
        self.snapshot_events = n;
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn clock(&self) -> Arc<dyn Clock> {
        Arc::clone(&self.clock)
    }

    // -- scene -------------------------------------------------------------

    pub fn upsert_node(
        &self,
        node: SceneNode,
        parent: Option<ParentRef>,
    ) -> Result<Delta, MemoryError> {
        let at = self.clock.now();
        self.scene.write().unwrap().upsert_node(node, parent, at)
    }

    pub fn set_edge(
        &self,
        src: &NodeId,
        dst: &NodeId,
        relation: Relation,
    ) -> Result<Delta, MemoryError> {
        let at = self.clock.now();
        self.scene.write().unwrap().set_edge(src, dst, relation, at)
    }

    pub fn apply_observation(&self, obs: &Observation) -> Result<Vec<Delta>, MemoryError> {
        let at = self.clock.now();
        self.scene.write().unwrap().apply_observation(obs, at)
    }

    pub fn query_spatial(&self, query: &SpatialQuery) -> Result<Vec<SpatialMatch>, MemoryError> {
        self.scene.read().unwrap().query(query)
    }

    /// Read access to the scene under the lock.
    pub fn read_scene<R>(&self, f: impl FnOnce(&SceneGraph) -> R) -> R {
        f(&self.scene.read().unwrap())
    }

    /// Write access for callers composing multiple scene ops atomically.
    pub fn write_scene<R>(&self, f: impl FnOnce(&mut SceneGraph, Timestamp) -> R) -> R {
        let at = self.clock.now();
        f(&mut self.scene.write().unwrap(), at)
    }

    // -- temporal ----------------------------------------------------------

    pub fn append_event(
        &self,
        kind: EventKind,
        subject: impl Into<String>,
        payload: serde_json::Value,
    ) -> u64 {
        let at = self.clock.now();
        self.log.lock().unwrap().append(kind, subject, payload, at)
    }

    pub fn read_log<R>(&self, f: impl FnOnce(&TemporalLog) -> R) -> R {
        f(&self.log.lock().unwrap())
    }

    pub fn event_count(&self) -> usize {
        self.log.lock().unwrap().len()
    }

    // -- registry ----------------------------------------------------------

    /// Register a robot and record the registration in the temporal log.
    pub fn register_robot(&self, profile: RobotProfile) -> Result<RobotId, MemoryError> {
        let id = self.registry.write().unwrap().register(profile)?;
        self.append_event(
            EventKind::StateChange,
            id.as_str(),
            serde_json::json!({ "change": "registered" }),
        );
        Ok(id)
    }

    /// Apply a state patch; status transitions are logged.
    pub fn update_robot_state(
        &self,
        id: &RobotId,
        patch: &StatePatch,
    ) -> Result<RobotState, MemoryError> {
        let (old_status, next) = {
            let mut registry = self.registry.write().unwrap();
            let old = registry
                .state(id)
                .ok_or_else(|| MemoryError::UnknownRobot(id.clone()))?
                .status;
            (old, registry.update_state(id, patch)?)
        };
        if old_status != next.status {
            self.append_event(
                EventKind::StateChange,
                id.as_str(),
                serde_json::json!({
                    "change": "status",
                    "from": old_status,
                    "to": next.status,
                    "subtask": next.current_subtask,
                }),
            );
        }
        Ok(next)
    }

    pub fn read_registry<R>(&self, f: impl FnOnce(&Registry) -> R) -> R {
        f(&self.registry.read().unwrap())
    }

    pub fn robot_state(&self, id: &RobotId) -> Option<RobotState> {
        self.registry.read().unwrap().state(id).cloned()
    }

    pub fn robot_profile(&self, id: &RobotId) -> Option<RobotProfile> {
        self.registry.read().unwrap().profile(id).cloned()
    }

    // -- snapshot ----------------------------------------------------------

    /// Clone all stores under the fixed lock order scene, log, registry.
    pub fn snapshot(&self) -> MemorySnapshot {
        let scene = self.scene.read().unwrap();
        let log = self.log.lock().unwrap();
        let registry = self.registry.read().unwrap();
        MemorySnapshot {
            taken_at: self.clock.now(),
            scene: scene.clone(),
            recent_events: log.suffix(self.snapshot_events).to_vec(),
            registry: registry.clone(),
        }
    }
}

/// Where snapshots go. The in-process store backs tests; the file store
/// backs the CLI.
pub trait SnapshotStore: Send + Sync {
    fn save(&self, snapshot: &MemorySnapshot) -> Result<(), MemoryError>;
    fn load(&self) -> Result<MemorySnapshot, MemoryError>;
}

#[derive(Default)]
pub struct InMemorySnapshotStore {
    slot: Mutex<Option<MemorySnapshot>>,
}

impl InMemorySnapshotStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl SnapshotStore for InMemorySnapshotStore {
    fn save(&self, snapshot: &MemorySnapshot) -> Result<(), MemoryError> {
        *self.slot.lock().unwrap() = Some(snapshot.clone());
        Ok(())
    }

    fn load(&self) -> Result<MemorySnapshot, MemoryError> {
        self.slot.lock().unwrap().clone().ok_or_else(|| {
            MemoryError::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "no snapshot stored",
            ))
        })
    }
}

pub struct FileSnapshotStore {
    path: PathBuf,
}

impl FileSnapshotStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }
}

impl SnapshotStore for FileSnapshotStore {
    fn save(&self, snapshot: &MemorySnapshot) -> Result<(), MemoryError> {
        let json = serde_json::to_string_pretty(snapshot)?;
        std::fs::write(&self.path, json)?;
        Ok(())
    }

    fn load(&self) -> Result<MemorySnapshot, MemoryError> {
        let json = std::fs::read_to_string(&self.path)?;
        Ok(serde_json::from_str(&json)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::VirtualClock;
    use crate::ids::ToolId;

    fn memory() -> (Memory, Arc<VirtualClock>) {
        let clock = Arc::new(VirtualClock::new());
        let mem = Memory::new(clock.clone());
        mem.upsert_node(SceneNode::new("ground", NodeKind::Floor, "ground"), None)
            .unwrap();
        mem.upsert_node(
            SceneNode::new("kitchen", NodeKind::Room, "kitchen"),
            Some(ParentRef::contains("ground")),
        )
        .unwrap();
        (mem, clock)
    }

    fn profile(id: &str) -> RobotProfile {
        RobotProfile {
            robot_id: RobotId::from(id),
            embodiment: Embodiment::Wheeled,
            skills: [ToolId::from("navigate")].into_iter().collect(),
            motion_domain: [NodeId::from("kitchen")].into_iter().collect(),
            home_position: [0.0; 3],
        }
    }

    #[test]
    fn ops_are_stamped_with_clock_time() {
        let (mem, clock) = memory();
        clock.advance(1500);
        mem.upsert_node(
            SceneNode::new("cup", NodeKind::Object, "cup"),
            Some(ParentRef::contains("kitchen")),
        )
        .unwrap();
        let observed =
            mem.read_scene(|s| s.node(&NodeId::from("cup")).unwrap().last_observed);
        assert_eq!(observed, Timestamp(1500));
    }

    #[test]
    fn registration_appends_a_state_change_event() {
        let (mem, _clock) = memory();
        mem.register_robot(profile("r1")).unwrap();
        let last = mem.read_log(|l| l.events().last().cloned().unwrap());
        assert_eq!(last.kind, EventKind::StateChange);
        assert_eq!(last.subject, "r1");
        assert_eq!(last.payload["change"], "registered");
    }

    #[test]
    fn status_transition_is_logged_once() {
        let (mem, _clock) = memory();
        mem.register_robot(profile("r1")).unwrap();
        let before = mem.event_count();
        mem.update_robot_state(
            &RobotId::from("r1"),
            &StatePatch::busy_on(crate::ids::SubtaskId::from("s1")),
        )
        .unwrap();
        assert_eq!(mem.event_count(), before + 1);
        // a pure position move logs nothing
        mem.update_robot_state(
            &RobotId::from("r1"),
            &StatePatch::default().at([1.0, 2.0, 0.0]),
        )
        .unwrap();
        assert_eq!(mem.event_count(), before + 1);
    }

    #[test]
    fn snapshot_is_consistent_and_bounded() {
        let (mem, clock) = memory();
        mem.register_robot(profile("r1")).unwrap();
        for i in 0..300 {
            clock.advance(1);
            mem.append_event(
                EventKind::ToolCall,
                "r1",
                serde_json::json!({ "i": i }),
            );
        }
        let snap = mem.snapshot();
        snap.validate().unwrap();
        assert_eq!(snap.recent_events.len(), DEFAULT_SNAPSHOT_EVENTS);
        assert_eq!(snap.taken_at, Timestamp(300));
        assert!(snap.registry.get(&RobotId::from("r1")).is_some());
    }

    #[test]
    fn snapshot_survives_serde_round_trip() {
        let (mem, _clock) = memory();
        mem.register_robot(profile("r1")).unwrap();
        let snap = mem.snapshot();
        let json = serde_json::to_string(&snap).unwrap();
        let back: MemorySnapshot = serde_json::from_str(&json).unwrap();
        back.validate().unwrap();
        assert_eq!(snap.scene, back.scene);
        assert_eq!(snap.recent_events, back.recent_events);
        assert_eq!(snap.registry, back.registry);
    }

    #[test]
    fn file_store_round_trip() {
        let (mem, _clock) = memory();
        let dir = tempfile::tempdir().unwrap();
        let store = FileSnapshotStore::new(dir.path().join("snap.json"));
        store.save(&mem.snapshot()).unwrap();
        let back = store.load().unwrap();
        back.validate().unwrap();
        assert_eq!(back.scene.len(), 2);
    }

    #[test]
    fn concurrent_writers_and_appenders_keep_stores_sound() {
        let (mem, _clock) = memory();
        let mem = Arc::new(mem);
        let mut handles = Vec::new();
        for t in 0..4 {
            let mem = Arc::clone(&mem);
            handles.push(std::thread::spawn(move || {
                for i in 0..50 {
                    mem.upsert_node(
                        SceneNode::new(
                            format!("obj-{t}-{i}"),
                            NodeKind::Object,
                            format!("obj-{t}-{i}"),
                        ),
                        Some(ParentRef::contains("kitchen")),
                    )
                    .unwrap();
                    mem.append_event(
                        EventKind::StateChange,
                        format!("w{t}"),
                        serde_json::json!({ "i": i }),
                    );
                }
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        let snap = mem.snapshot();
        snap.validate().unwrap();
        assert_eq!(snap.scene.len(), 2 + 200);
        mem.read_log(|l| l.check_integrity().unwrap());
        assert_eq!(mem.event_count(), 200);
        // revision saw every delta exactly once
        assert_eq!(mem.read_scene(|s| s.revision()), 202);
    }

    #[test]
    fn bad_snapshot_fails_validation() {
        let (mem, _clock) = memory();
        let mut snap = mem.snapshot();
        snap.recent_events = vec![
            TemporalEvent {
                seq: 1,
                time: Timestamp(0),
                kind: EventKind::ToolCall,
                subject: "x".into(),
                payload: serde_json::Value::Null,
            },
            TemporalEvent {
                seq: 3,
                time: Timestamp(0),
                kind: EventKind::ToolCall,
                subject: "x".into(),
                payload: serde_json::Value::Null,
            },
        ];
        assert!(matches!(
            snap.validate(),
            Err(MemoryError::SnapshotInconsistency(_))
        ));
    }
}
