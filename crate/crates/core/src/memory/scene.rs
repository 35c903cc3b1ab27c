//! Hierarchical spatial memory: floors contain rooms, rooms contain objects,
//! fixtures support or contain other objects.
//!
//! The containment/support edges form a forest rooted at floor nodes. Every
//! mutation returns a delta record and bumps the graph revision, so callers
//! can mirror changes elsewhere or audit them later.

use crate::ids::{NodeId, RobotId, Timestamp};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::MemoryError;

/// Node category. Immutable after creation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Floor,
    Room,
    Object,
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NodeKind::Floor => "floor",
            NodeKind::Room => "room",
            NodeKind::Object => "object",
        };
        f.write_str(s)
    }
}

/// Whether the node is currently observable.
///
/// Occluded nodes keep their last known position and parent edge; removed
/// nodes stay in the graph as tombstones and are excluded from queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    Visible,
    Occluded,
    Removed,
}

/// Relation carried by a scene edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Contains,
    Supports,
    Adjacent,
    Functional,
}

impl Relation {
    /// Containment and support edges are the parent edges of the hierarchy.
    pub fn is_parental(&self) -> bool {
        matches!(self, Relation::Contains | Relation::Supports)
    }
}

/// Scalar attribute value attached to a node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl From<bool> for AttrValue {
    fn from(v: bool) -> Self {
        AttrValue::Bool(v)
    }
}

impl From<&str> for AttrValue {
    fn from(v: &str) -> Self {
        AttrValue::Text(v.to_string())
    }
}

/// One node of the scene graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub label: String,
    pub position: [f64; 3],
    #[serde(default)]
    pub affordances: BTreeSet<String>,
    #[serde(default)]
    pub attributes: BTreeMap<String, AttrValue>,
    #[serde(default)]
    pub last_observed: Timestamp,
    #[serde(default = "default_visibility")]
    pub visibility: Visibility,
}

fn default_visibility() -> Visibility {
    Visibility::Visible
}

impl SceneNode {
    pub fn new(id: impl Into<NodeId>, kind: NodeKind, label: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind,
            label: label.into(),
            position: [0.0; 3],
            affordances: BTreeSet::new(),
            attributes: BTreeMap::new(),
            last_observed: Timestamp::ZERO,
            visibility: Visibility::Visible,
        }
    }

    pub fn at(mut self, position: [f64; 3]) -> Self {
        self.position = position;
        self
    }

    pub fn with_affordance(mut self, tag: impl Into<String>) -> Self {
        self.affordances.insert(tag.into());
        self
    }

    pub fn with_attribute(mut self, key: impl Into<String>, value: impl Into<AttrValue>) -> Self {
        self.attributes.insert(key.into(), value.into());
        self
    }

    pub fn attr_bool(&self, key: &str) -> Option<bool> {
        match self.attributes.get(key) {
            Some(AttrValue::Bool(b)) => Some(*b),
            _ => None,
        }
    }

    pub fn attr_text(&self, key: &str) -> Option<&str> {
        match self.attributes.get(key) {
            Some(AttrValue::Text(s)) => Some(s),
            _ => None,
        }
    }
}

/// Directed relation edge between two nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEdge {
    pub src: NodeId,
    pub dst: NodeId,
    pub relation: Relation,
    pub since: Timestamp,
}

/// Parent reference used when inserting or re-parenting a node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParentRef {
    pub node: NodeId,
    pub relation: Relation,
}

impl ParentRef {
    pub fn contains(node: impl Into<NodeId>) -> Self {
        Self {
            node: node.into(),
            relation: Relation::Contains,
        }
    }

    pub fn supports(node: impl Into<NodeId>) -> Self {
        Self {
            node: node.into(),
            relation: Relation::Supports,
        }
    }
}

/// What a delta record describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaKind {
    NodeInserted,
    NodeUpdated,
    EdgeSet,
    NodeOccluded,
    NodeRevealed,
    NodeRemoved,
}

/// Record of one applied change: old and new values per touched field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub revision: u64,
    pub node: NodeId,
    pub kind: DeltaKind,
    /// field name -> (old, new); empty when the applied content was identical.
    pub changes: BTreeMap<String, (Option<serde_json::Value>, Option<serde_json::Value>)>,
}

/// One observation delivered by a robot: what it saw in a room, what it
/// explicitly reported missing, and what it reported removed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Observation {
    pub observer: RobotId,
    pub room: NodeId,
    pub seen: Vec<(SceneNode, ParentRef)>,
    /// Nodes the observer looked for and did not find.
    #[serde(default)]
    pub absent: Vec<NodeId>,
    /// Nodes explicitly reported gone for good.
    #[serde(default)]
    pub removed: Vec<NodeId>,
    /// True for a full room scan: every previously visible node of the room
    /// missing from `seen` becomes occluded.
    #[serde(default)]
    pub complete: bool,
}

type EdgeKey = (NodeId, Relation, NodeId);

/// Attributed scene graph with a monotonically increasing revision counter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneGraph {
    nodes: BTreeMap<NodeId, SceneNode>,
    edges: BTreeMap<EdgeKey, Timestamp>,
    revision: u64,
}

#[derive(Serialize, Deserialize)]
struct SceneGraphWire {
    nodes: Vec<SceneNode>,
    edges: Vec<SceneEdge>,
    revision: u64,
}

impl Serialize for SceneGraph {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let wire = SceneGraphWire {
            nodes: self.nodes.values().cloned().collect(),
            edges: self.edges().collect(),
            revision: self.revision,
        };
        wire.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SceneGraph {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let wire = SceneGraphWire::deserialize(deserializer)?;
        let mut graph = SceneGraph {
            nodes: wire.nodes.into_iter().map(|n| (n.id.clone(), n)).collect(),
            edges: BTreeMap::new(),
            revision: wire.revision,
        };
        for e in wire.edges {
            graph.edges.insert((e.src, e.relation, e.dst), e.since);
        }
        Ok(graph)
    }
}

impl SceneGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: &NodeId) -> Option<&SceneNode> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &SceneNode> {
        self.nodes.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = SceneEdge> + '_ {
        self.edges.iter().map(|((src, rel, dst), since)| SceneEdge {
            src: src.clone(),
            dst: dst.clone(),
            relation: *rel,
            since: *since,
        })
    }

    /// Parent edge of `id`, if any (containment or support).
    pub fn parent_of(&self, id: &NodeId) -> Option<(NodeId, Relation)> {
        self.edges
            .keys()
            .find(|(_, rel, dst)| rel.is_parental() && dst == id)
            .map(|(src, rel, _)| (src.clone(), *rel))
    }

    /// Children of `id` under the given relation.
    pub fn children_of<'a>(
        &'a self,
        id: &'a NodeId,
        relation: Relation,
    ) -> impl Iterator<Item = &'a NodeId> + 'a {
        self.edges
            .keys()
            .filter(move |(src, rel, _)| src == id && *rel == relation)
            .map(|(_, _, dst)| dst)
    }

    /// Nearest ancestor of kind room. A room resolves to itself.
    pub fn room_of(&self, id: &NodeId) -> Option<NodeId> {
        let mut current = id.clone();
        for _ in 0..self.nodes.len() + 1 {
            match self.nodes.get(&current)?.kind {
                NodeKind::Room => return Some(current),
                NodeKind::Floor => return None,
                NodeKind::Object => {
                    let (parent, _) = self.parent_of(&current)?;
                    current = parent;
                }
            }
        }
        None
    }

    /// Parent chain from `id` up to its root, nearest ancestor first.
    pub fn ancestry(&self, id: &NodeId) -> Vec<NodeId> {
        let mut chain = Vec::new();
        let mut current = id.clone();
        while let Some((parent, _)) = self.parent_of(&current) {
            if chain.contains(&parent) {
                break;
            }
            chain.push(parent.clone());
            current = parent;
        }
        chain
    }

    /// Insert or update a node. New room and object nodes must come with a
    /// parent; the parent edge is applied atomically with the insert as one
    /// delta. The node kind is immutable across updates.
    pub fn upsert_node(
        &mut self,
        node: SceneNode,
        parent: Option<ParentRef>,
        at: Timestamp,
    ) -> Result<Delta, MemoryError> {
        if let Some(existing) = self.nodes.get(&node.id) {
            if existing.kind != node.kind {
                return Err(MemoryError::KindMismatch {
                    node: node.id.clone(),
                    existing: existing.kind,
                    requested: node.kind,
                });
            }
        } else {
            match node.kind {
                NodeKind::Floor => {}
                NodeKind::Room | NodeKind::Object => {
                    if parent.is_none() {
                        return Err(MemoryError::OrphanNode(node.id.clone()));
                    }
                }
            }
        }
        if let Some(p) = &parent {
            self.check_edge(&p.node, &node.id, p.relation, Some(&node))?;
        }

        let old = self.nodes.get(&node.id).cloned();
        let mut changes = BTreeMap::new();
        let inserted = old.is_none();
        if let Some(old) = &old {
            diff_field(&mut changes, "label", &old.label, &node.label);
            diff_field(&mut changes, "position", &old.position, &node.position);
            diff_field(&mut changes, "affordances", &old.affordances, &node.affordances);
            diff_field(&mut changes, "attributes", &old.attributes, &node.attributes);
            diff_field(&mut changes, "visibility", &old.visibility, &node.visibility);
        } else {
            changes.insert(
                "node".to_string(),
                (None, Some(serde_json::to_value(&node).unwrap_or_default())),
            );
        }

        if let Some(p) = &parent {
            let previous = self.parent_of(&node.id);
            if previous.as_ref() != Some(&(p.node.clone(), p.relation)) {
                changes.insert(
                    "parent".to_string(),
                    (
                        previous
                            .as_ref()
                            .map(|(n, r)| serde_json::json!({"node": n, "relation": r})),
                        Some(serde_json::json!({"node": p.node, "relation": p.relation})),
                    ),
                );
            }
        }

        let mut node = node;
        node.last_observed = at;
        self.nodes.insert(node.id.clone(), node.clone());
        if let Some(p) = parent {
            self.replace_parent_edge(&p.node, &node.id, p.relation, at);
        }

        self.revision += 1;
        Ok(Delta {
            revision: self.revision,
            node: node.id,
            kind: if inserted {
                DeltaKind::NodeInserted
            } else {
                DeltaKind::NodeUpdated
            },
            changes,
        })
    }

    /// Set a relation edge. For containment/support the previous parent edge
    /// of `dst` is removed atomically, preserving the single-parent rule.
    pub fn set_edge(
        &mut self,
        src: &NodeId,
        dst: &NodeId,
        relation: Relation,
        at: Timestamp,
    ) -> Result<Delta, MemoryError> {
        self.check_edge(src, dst, relation, None)?;
        let previous = if relation.is_parental() {
            self.parent_of(dst)
        } else {
            None
        };
        let mut changes = BTreeMap::new();
        if previous.as_ref() != Some(&(src.clone(), relation)) {
            changes.insert(
                "parent".to_string(),
                (
                    previous
                        .as_ref()
                        .map(|(n, r)| serde_json::json!({"node": n, "relation": r})),
                    Some(serde_json::json!({"node": src, "relation": relation})),
                ),
            );
        }
        if relation.is_parental() {
            self.replace_parent_edge(src, dst, relation, at);
        } else {
            self.edges
                .entry((src.clone(), relation, dst.clone()))
                .or_insert(at);
        }
        self.revision += 1;
        Ok(Delta {
            revision: self.revision,
            node: dst.clone(),
            kind: DeltaKind::EdgeSet,
            changes,
        })
    }

    /// Apply one observation: upsert what was seen, occlude what was expected
    /// but missing, tombstone what was reported removed.
    ///
    /// Occlusion is viewpoint-scoped: only nodes whose nearest room ancestor
    /// is the observation's room are eligible to become occluded.
    pub fn apply_observation(
        &mut self,
        obs: &Observation,
        at: Timestamp,
    ) -> Result<Vec<Delta>, MemoryError> {
        match self.nodes.get(&obs.room) {
            Some(node) if node.kind == NodeKind::Room => {}
            _ => return Err(MemoryError::UnknownRoom(obs.room.clone())),
        }

        let mut deltas = Vec::new();
        let mut seen_ids = BTreeSet::new();
        for (node, parent) in &obs.seen {
            seen_ids.insert(node.id.clone());
            let mut node = node.clone();
            node.visibility = Visibility::Visible;
            deltas.push(self.upsert_node(node, Some(parent.clone()), at)?);
        }

        let mut to_occlude: Vec<NodeId> = Vec::new();
        if obs.complete {
            for node in self.nodes.values() {
                if node.kind == NodeKind::Object
                    && node.visibility == Visibility::Visible
                    && !seen_ids.contains(&node.id)
                    && self.room_of(&node.id).as_ref() == Some(&obs.room)
                {
                    to_occlude.push(node.id.clone());
                }
            }
        }
        for id in &obs.absent {
            if seen_ids.contains(id) || to_occlude.contains(id) {
                continue;
            }
            if let Some(node) = self.nodes.get(id) {
                if node.visibility == Visibility::Visible
                    && self.room_of(id).as_ref() == Some(&obs.room)
                {
                    to_occlude.push(id.clone());
                }
            }
        }
        for id in to_occlude {
            deltas.push(self.set_visibility(&id, Visibility::Occluded));
        }
        for id in &obs.removed {
            if self.nodes.contains_key(id) {
                deltas.push(self.set_visibility(id, Visibility::Removed));
            }
        }
        Ok(deltas)
    }

    fn set_visibility(&mut self, id: &NodeId, visibility: Visibility) -> Delta {
        let node = self.nodes.get_mut(id).expect("caller checked presence");
        let old = node.visibility;
        node.visibility = visibility;
        let mut changes = BTreeMap::new();
        diff_field(&mut changes, "visibility", &old, &visibility);
        self.revision += 1;
        Delta {
            revision: self.revision,
            node: id.clone(),
            kind: match visibility {
                Visibility::Occluded => DeltaKind::NodeOccluded,
                Visibility::Removed => DeltaKind::NodeRemoved,
                Visibility::Visible => DeltaKind::NodeRevealed,
            },
            changes,
        }
    }

    /// All non-removed nodes matching the conjunction of filters, each with
    /// its ancestry chain, ordered by id.
    pub fn query(&self, query: &SpatialQuery) -> Result<Vec<SpatialMatch>, MemoryError> {
        if query.is_empty() {
            return Err(MemoryError::EmptyQuery);
        }
        let mut matches = Vec::new();
        for node in self.nodes.values() {
            if node.visibility == Visibility::Removed {
                continue;
            }
            if let Some(label) = &query.label {
                if &node.label != label {
                    continue;
                }
            }
            if let Some(room) = &query.room {
                if self.room_of(&node.id).as_ref() != Some(room) {
                    continue;
                }
            }
            if let Some(tag) = &query.affordance {
                if !node.affordances.contains(tag) {
                    continue;
                }
            }
            if let Some((src, rel)) = &query.child_of {
                if !self
                    .edges
                    .contains_key(&(src.clone(), *rel, node.id.clone()))
                {
                    continue;
                }
            }
            matches.push(SpatialMatch {
                node: node.clone(),
                ancestry: self.ancestry(&node.id),
            });
        }
        Ok(matches)
    }

    /// Hierarchy check: parental edges form a forest rooted at floors, every
    /// room and object has exactly one parent, endpoints resolve.
    pub fn validate(&self) -> Result<(), MemoryError> {
        for (src, _, dst) in self.edges.keys() {
            if !self.nodes.contains_key(src) {
                return Err(MemoryError::UnknownNode(src.clone()));
            }
            if !self.nodes.contains_key(dst) {
                return Err(MemoryError::UnknownNode(dst.clone()));
            }
        }
        for node in self.nodes.values() {
            let parents: Vec<_> = self
                .edges
                .keys()
                .filter(|(_, rel, dst)| rel.is_parental() && dst == &node.id)
                .collect();
            match node.kind {
                NodeKind::Floor => {
                    if !parents.is_empty() {
                        return Err(MemoryError::HierarchyViolation(format!(
                            "floor {} has a parent edge",
                            node.id
                        )));
                    }
                }
                NodeKind::Room | NodeKind::Object => {
                    if parents.len() != 1 {
                        return Err(MemoryError::HierarchyViolation(format!(
                            "{} {} has {} parent edges, expected 1",
                            node.kind,
                            node.id,
                            parents.len()
                        )));
                    }
                }
            }
            // every non-floor must reach a floor without revisiting a node
            if node.kind != NodeKind::Floor {
                let mut current = node.id.clone();
                let mut visited = BTreeSet::new();
                loop {
                    if !visited.insert(current.clone()) {
                        return Err(MemoryError::CycleDetected {
                            src: node.id.clone(),
                            dst: current,
                        });
                    }
                    match self.parent_of(&current) {
                        Some((parent, _)) => {
                            if self.nodes[&parent].kind == NodeKind::Floor {
                                break;
                            }
                            current = parent;
                        }
                        None => {
                            return Err(MemoryError::HierarchyViolation(format!(
                                "{} does not reach a floor",
                                node.id
                            )))
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn replace_parent_edge(&mut self, src: &NodeId, dst: &NodeId, relation: Relation, at: Timestamp) {
        let stale: Vec<EdgeKey> = self
            .edges
            .keys()
            .filter(|(_, rel, d)| rel.is_parental() && d == dst)
            .cloned()
            .collect();
        let key = (src.clone(), relation, dst.clone());
        let kept = self.edges.get(&key).copied();
        for k in stale {
            self.edges.remove(&k);
        }
        self.edges.insert(key, kept.unwrap_or(at));
    }

    fn check_edge(
        &self,
        src: &NodeId,
        dst: &NodeId,
        relation: Relation,
        pending_dst: Option<&SceneNode>,
    ) -> Result<(), MemoryError> {
        if !self.nodes.contains_key(src) {
            return Err(MemoryError::UnknownNode(src.clone()));
        }
        let dst_kind = match self.nodes.get(dst) {
            Some(node) => node.kind,
            None => match pending_dst {
                Some(node) if &node.id == dst => node.kind,
                _ => return Err(MemoryError::UnknownNode(dst.clone())),
            },
        };
        if relation.is_parental() {
            if dst_kind == NodeKind::Floor {
                return Err(MemoryError::HierarchyViolation(format!(
                    "floor {dst} cannot have a parent"
                )));
            }
            if src == dst {
                return Err(MemoryError::CycleDetected {
                    src: src.clone(),
                    dst: dst.clone(),
                });
            }
            // walking up from src must not encounter dst
            let mut current = src.clone();
            let mut hops = 0usize;
            while let Some((parent, _)) = self.parent_of(&current) {
                if &parent == dst {
                    return Err(MemoryError::CycleDetected {
                        src: src.clone(),
                        dst: dst.clone(),
                    });
                }
                current = parent;
                hops += 1;
                if hops > self.nodes.len() {
                    break;
                }
            }
        }
        Ok(())
    }
}

fn diff_field<T: Serialize + PartialEq>(
    changes: &mut BTreeMap<String, (Option<serde_json::Value>, Option<serde_json::Value>)>,
    name: &str,
    old: &T,
    new: &T,
) {
    if old != new {
        changes.insert(
            name.to_string(),
            (
                Some(serde_json::to_value(old).unwrap_or_default()),
                Some(serde_json::to_value(new).unwrap_or_default()),
            ),
        );
    }
}

/// Conjunction of spatial filters. At least one must be set.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SpatialQuery {
    pub label: Option<String>,
    pub room: Option<NodeId>,
    pub affordance: Option<String>,
    /// Matches nodes that are the `dst` of an edge `(src, relation, dst)`.
    pub child_of: Option<(NodeId, Relation)>,
}

impl SpatialQuery {
    pub fn is_empty(&self) -> bool {
        self.label.is_none()
            && self.room.is_none()
            && self.affordance.is_none()
            && self.child_of.is_none()
    }

    pub fn label(label: impl Into<String>) -> Self {
        Self {
            label: Some(label.into()),
            ..Self::default()
        }
    }

    pub fn in_room(mut self, room: impl Into<NodeId>) -> Self {
        self.room = Some(room.into());
        self
    }

    pub fn with_affordance(mut self, tag: impl Into<String>) -> Self {
        self.affordance = Some(tag.into());
        self
    }
}

/// Query result: the node plus its parent chain, nearest ancestor first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpatialMatch {
    pub node: SceneNode,
    pub ancestry: Vec<NodeId>,
}
