//! Rule-based task decomposition.
//!
//! Planning is a pure function of its input: the task text, a memory
//! snapshot, the goal templates declared by the scenario, and the replan
//! round. Same input, same graph. Templates are matched by keyword count,
//! objects and fixtures by label mention, robots by capability, and every
//! tie breaks deterministically (declaration order, text order, id order).

use crate::ids::{NodeId, RobotId, SubtaskId, TaskId, Timestamp, ToolId};
use crate::memory::{MemorySnapshot, SceneGraph, Visibility};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

use super::graph::{Condition, PlanError, RendezvousSpec, Subtask, SubtaskGraph};

/// A task as submitted by a user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRequest {
    pub id: TaskId,
    pub text: String,
    pub submitted_at: Timestamp,
}

impl TaskRequest {
    pub fn new(id: impl Into<TaskId>, text: impl Into<String>, submitted_at: Timestamp) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            submitted_at,
        }
    }
}

/// Shape of work a template decomposes into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    /// Bring mentioned objects to a destination. One object gives one
    /// subtask; several give parallel pickups plus a collaborative drop-off.
    Fetch,
    /// Two-stage pipeline: stage an item onto a carrier, then move the
    /// carrier to the destination.
    Relay,
    /// Open a container, then put an item inside it.
    Pack,
    /// Fill a vessel from a source container.
    Fill,
}

/// Scenario-declared decomposition rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalTemplate {
    pub name: String,
    pub kind: TemplateKind,
    /// Lowercase; a template is a candidate when any keyword occurs in the
    /// task text and wins by hit count, earliest declared on ties.
    pub keywords: Vec<String>,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
}

/// Everything planning depends on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlannerInput {
    pub task: TaskRequest,
    pub snapshot: MemorySnapshot,
    pub templates: Vec<GoalTemplate>,
    /// Object labels that may be referenced before they appear in memory
    /// (things robots may have to search for).
    #[serde(default)]
    pub vocabulary: Vec<String>,
    /// 0 for the first plan of a task, incremented per replan.
    #[serde(default)]
    pub round: u32,
}

/// Ordered rationale the planner emits alongside a graph: which template
/// matched, how names resolved, which robots were chosen. May be empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub steps: Vec<String>,
}

impl ReasoningTrace {
    pub fn note(&mut self, step: impl Into<String>) {
        self.steps.push(step.into());
    }
}

/// Decompose a task into a subtask graph. An empty graph means every
/// derivable goal already holds.
pub fn plan(input: &PlannerInput) -> Result<(ReasoningTrace, SubtaskGraph), PlanError> {
    if input.task.text.trim().is_empty() {
        return Err(PlanError::Infeasible("the task text is empty".into()));
    }
    let text = input.task.text.to_lowercase();
    let mut trace = ReasoningTrace::default();
    let template = match_template(&text, &input.templates)?;
    trace.note(format!(
        "template `{}` matched the instruction",
        template.name
    ));
    let scene = &input.snapshot.scene;
    let mentions = extract_mentions(&text, scene, &input.vocabulary);
    for m in &mentions {
        match &m.node {
            Some(node) => trace.note(format!("`{}` names scene node {node}", m.label)),
            None => trace.note(format!("`{}` is a search target not yet in memory", m.label)),
        }
    }

    let mut graph = SubtaskGraph::new(
        format!("{}-p{}", input.task.id, input.round),
        input.task.id.clone(),
        input.snapshot.taken_at,
    );
    let ids = IdMint::new(&input.task.id, input.round);

    match template.kind {
        TemplateKind::Fetch => {
            plan_fetch(input, template, &mentions, &mut graph, &ids, &mut trace)?;
        }
        TemplateKind::Relay => {
            plan_relay(input, template, &mentions, &mut graph, &ids, &mut trace)?;
        }
        TemplateKind::Pack => {
            plan_pack(input, template, &mentions, &mut graph, &ids, &mut trace)?;
        }
        TemplateKind::Fill => {
            plan_fill(input, template, &mentions, &mut graph, &ids, &mut trace)?;
        }
    }

    graph.fill_depths()?;
    graph.validate()?;
    Ok((trace, graph))
}

struct IdMint {
    prefix: String,
}

impl IdMint {
    fn new(task: &TaskId, round: u32) -> Self {
        Self {
            prefix: format!("{task}-p{round}"),
        }
    }

    fn subtask(&self, n: usize) -> SubtaskId {
        SubtaskId::from(format!("{}-s{n}", self.prefix))
    }
}

fn match_template<'a>(
    text: &str,
    templates: &'a [GoalTemplate],
) -> Result<&'a GoalTemplate, PlanError> {
    let mut best: Option<(usize, &GoalTemplate)> = None;
    for template in templates {
        let hits = template
            .keywords
            .iter()
            .filter(|kw| contains_word(text, kw))
            .count();
        if hits > 0 && best.map(|(h, _)| hits > h).unwrap_or(true) {
            best = Some((hits, template));
        }
    }
    best.map(|(_, t)| t)
        .ok_or_else(|| PlanError::NoTemplate("no keyword of any template occurs".into()))
}

/// Substring match on word boundaries: neighbours of the match must not be
/// alphanumeric.
fn contains_word(text: &str, word: &str) -> bool {
    if word.is_empty() {
        return false;
    }
    let mut start = 0;
    while let Some(pos) = text[start..].find(word) {
        let abs = start + pos;
        let before_ok = abs == 0
            || !text[..abs]
                .chars()
                .next_back()
                .map(|c| c.is_alphanumeric())
                .unwrap_or(false);
        let end = abs + word.len();
        let after_ok = end >= text.len()
            || !text[end..]
                .chars()
                .next()
                .map(|c| c.is_alphanumeric())
                .unwrap_or(false);
        if before_ok && after_ok {
            return true;
        }
        start = abs + 1;
        if start >= text.len() {
            break;
        }
    }
    false
}

/// One label found in the task text.
#[derive(Debug, Clone)]
struct Mention {
    position: usize,
    label: String,
    node: Option<NodeId>,
    graspable: bool,
    fixture: bool,
    room: bool,
}

/// Find known labels in the text, longest label first so multiword labels
/// win over their parts, each character consumed at most once. Result is in
/// text order.
fn extract_mentions(text: &str, scene: &SceneGraph, vocabulary: &[String]) -> Vec<Mention> {
    let mut labels: Vec<(String, Option<NodeId>, bool, bool, bool)> = Vec::new();
    let mut seen = BTreeSet::new();
    for node in scene.nodes() {
        if node.visibility == Visibility::Removed {
            continue;
        }
        let label = node.label.to_lowercase();
        if !seen.insert(label.clone()) {
            continue;
        }
        labels.push((
            label,
            Some(node.id.clone()),
            node.affordances.contains("graspable"),
            node.affordances.contains("surface") || node.affordances.contains("container"),
            matches!(node.kind, crate::memory::NodeKind::Room),
        ));
    }
    for word in vocabulary {
        let label = word.to_lowercase();
        if seen.insert(label.clone()) {
            // unknown objects are assumed graspable search targets
            labels.push((label, None, true, false, false));
        }
    }
    labels.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));

    let mut consumed = vec![false; text.len()];
    let mut mentions = Vec::new();
    for (label, node, graspable, fixture, room) in labels {
        let mut start = 0;
        while start < text.len() {
            let Some(pos) = text[start..].find(&label) else { break };
            let abs = start + pos;
            let end = abs + label.len();
            let boundary_ok = (abs == 0
                || !text[..abs]
                    .chars()
                    .next_back()
                    .map(|c| c.is_alphanumeric())
                    .unwrap_or(false))
                && (end >= text.len()
                    || !text[end..]
                        .chars()
                        .next()
                        .map(|c| c.is_alphanumeric())
                        .unwrap_or(false));
            let free = !consumed[abs..end].iter().any(|c| *c);
            if boundary_ok && free {
                consumed[abs..end].iter_mut().for_each(|c| *c = true);
                mentions.push(Mention {
                    position: abs,
                    label: label.clone(),
                    node: node.clone(),
                    graspable,
                    fixture,
                    room,
                });
            }
            start = abs + 1;
        }
    }
    mentions.sort_by_key(|m| m.position);
    mentions
}

/// Resolve a label against the scene: the lowest-id non-removed node with
/// that label, preferring visible nodes.
fn resolve_label(scene: &SceneGraph, label: &str) -> Option<NodeId> {
    let mut candidates: Vec<&crate::memory::SceneNode> = scene
        .nodes()
        .filter(|n| n.label.eq_ignore_ascii_case(label))
        .filter(|n| n.visibility != Visibility::Removed)
        .collect();
    candidates.sort_by(|a, b| {
        let va = a.visibility != Visibility::Visible;
        let vb = b.visibility != Visibility::Visible;
        va.cmp(&vb).then(a.id.cmp(&b.id))
    });
    candidates.first().map(|n| n.id.clone())
}

fn tools(names: &[&str]) -> BTreeSet<ToolId> {
    names.iter().map(|n| ToolId::from(*n)).collect()
}

/// Robots able to run the given tools in the given rooms. Offline robots
/// are never assigned; the rest rank by battery (fullest first), then id.
fn capable(
    input: &PlannerInput,
    skills: &BTreeSet<ToolId>,
    rooms: &BTreeSet<NodeId>,
) -> Vec<RobotId> {
    let registry = &input.snapshot.registry;
    let mut robots: Vec<RobotId> = registry
        .capable_robots(skills, rooms)
        .into_iter()
        .filter(|id| {
            registry
                .state(id)
                .map(|s| s.status != crate::memory::RobotStatus::Offline)
                .unwrap_or(false)
        })
        .collect();
    robots.sort_by(|a, b| {
        let battery = |id: &RobotId| {
            registry
                .state(id)
                .map(|s| s.battery)
                .unwrap_or(0.0)
        };
        battery(b)
            .partial_cmp(&battery(a))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.cmp(b))
    });
    robots
}

/// Rooms a piece of work touches; unknown locations contribute nothing.
fn rooms_for(scene: &SceneGraph, nodes: &[Option<&NodeId>]) -> BTreeSet<NodeId> {
    nodes
        .iter()
        .flatten()
        .filter_map(|id| scene.room_of(id))
        .collect()
}

/// Destination condition: containers take things inside, surfaces on top.
fn arrival(scene: &SceneGraph, object: &NodeId, target: &NodeId) -> Condition {
    let container = scene
        .node(target)
        .map(|n| n.affordances.contains("container"))
        .unwrap_or(false);
    if container {
        Condition::ContainedIn {
            object: object.clone(),
            target: target.clone(),
        }
    } else {
        Condition::PlacedOn {
            object: object.clone(),
            target: target.clone(),
        }
    }
}

struct FetchTarget {
    node: NodeId,
    room: Option<NodeId>,
}

/// The drop-off point: the last fixture mentioned in the text, else the
/// template's `target` parameter.
fn resolve_target(
    input: &PlannerInput,
    template: &GoalTemplate,
    mentions: &[Mention],
    param: &str,
) -> Result<FetchTarget, PlanError> {
    let scene = &input.snapshot.scene;
    let from_text = mentions
        .iter()
        .rev()
        .find(|m| m.fixture)
        .and_then(|m| m.node.clone());
    let node = match from_text {
        Some(node) => node,
        None => {
            let label = template.params.get(param).ok_or_else(|| {
                PlanError::Infeasible(format!(
                    "no destination in task text and template {} has no `{param}` parameter",
                    template.name
                ))
            })?;
            resolve_label(scene, label).ok_or_else(|| {
                PlanError::Infeasible(format!("destination label `{label}` is not in the scene"))
            })?
        }
    };
    let room = scene.room_of(&node);
    Ok(FetchTarget { node, room })
}

/// Objects the task asks for: graspable mentions that are not the target,
/// first mention first, deduplicated. Labels absent from the scene become
/// synthesized ids (search targets).
fn requested_objects(mentions: &[Mention], target: &NodeId) -> Vec<(NodeId, Option<NodeId>)> {
    let mut out: Vec<(NodeId, Option<NodeId>)> = Vec::new();
    let mut seen = BTreeSet::new();
    for m in mentions {
        if !m.graspable || m.room {
            continue;
        }
        let id = m
            .node
            .clone()
            .unwrap_or_else(|| NodeId::from(m.label.replace(' ', "_")));
        if &id == target || !seen.insert(id.clone()) {
            continue;
        }
        out.push((id, m.node.clone()));
    }
    out
}

fn mentioned_room(mentions: &[Mention]) -> Option<NodeId> {
    mentions.iter().find(|m| m.room).and_then(|m| m.node.clone())
}

fn plan_fetch(
    input: &PlannerInput,
    template: &GoalTemplate,
    mentions: &[Mention],
    graph: &mut SubtaskGraph,
    ids: &IdMint,
    trace: &mut ReasoningTrace,
) -> Result<(), PlanError> {
    let scene = &input.snapshot.scene;
    let target = resolve_target(input, template, mentions, "target")?;
    trace.note(format!("destination resolved to {}", target.node));
    let objects = requested_objects(mentions, &target.node);
    if objects.is_empty() {
        return Err(PlanError::Infeasible(
            "the task names no object to fetch".into(),
        ));
    }

    // drop objects whose arrival condition already holds
    let pending: Vec<(NodeId, Option<NodeId>)> = objects
        .into_iter()
        .filter(|(id, _)| !arrival(scene, id, &target.node).eval(scene))
        .collect();
    if pending.is_empty() {
        trace.note("every requested arrival already holds; nothing to do");
        return Ok(());
    }

    let hinted_room = mentioned_room(mentions);
    if pending.len() == 1 {
        let (object, known) = &pending[0];
        let skills = tools(&["navigate", "detect", "grasp", "place"]);
        let rooms = rooms_for(scene, &[known.as_ref(), Some(&target.node)]);
        let robots = capable(input, &skills, &rooms);
        let robot = robots.first().cloned().ok_or_else(|| {
            PlanError::Infeasible(format!("no robot can fetch {object} to {}", target.node))
        })?;
        trace.note(format!("{robot} fetches {object} alone"));
        let search_room = known
            .as_ref()
            .and_then(|id| scene.room_of(id))
            .or(hinted_room)
            .or(target.room.clone());
        let mut subtask = Subtask::single(
            ids.subtask(1),
            format!("bring {object} to {}", target.node),
            robot,
            vec![arrival(scene, object, &target.node)],
        );
        subtask.target_room = search_room;
        graph.push(subtask);
        return Ok(());
    }

    // several objects: parallel pickups, then a collaborative drop-off
    let pickup_skills = tools(&["navigate", "detect", "grasp", "handover"]);
    let all_rooms: BTreeSet<NodeId> = {
        let mut r = rooms_for(
            scene,
            &pending
                .iter()
                .map(|(_, known)| known.as_ref())
                .collect::<Vec<_>>(),
        );
        r.extend(target.room.clone());
        r
    };
    let robots = capable(input, &pickup_skills, &all_rooms);
    if robots.is_empty() {
        return Err(PlanError::Infeasible(
            "no robot can carry out the pickups".into(),
        ));
    }

    if robots.len() == 1 {
        // one capable robot: sequential solo trips, no collaboration
        let solo_skills = tools(&["navigate", "detect", "grasp", "place"]);
        let solo = capable(input, &solo_skills, &all_rooms);
        let robot = solo.first().cloned().ok_or_else(|| {
            PlanError::Infeasible("the only capable robot cannot place objects".into())
        })?;
        trace.note(format!("only {robot} is available; sequential solo trips"));
        for (n, (object, known)) in pending.iter().enumerate() {
            let mut subtask = Subtask::single(
                ids.subtask(n + 1),
                format!("bring {object} to {}", target.node),
                robot.clone(),
                vec![arrival(scene, object, &target.node)],
            );
            subtask.target_room = known
                .as_ref()
                .and_then(|id| scene.room_of(id))
                .or_else(|| hinted_room.clone())
                .or_else(|| target.room.clone());
            graph.push(subtask);
        }
        return Ok(());
    }

    let mut participants: Vec<RobotId> = Vec::new();
    let mut pickup_ids: Vec<SubtaskId> = Vec::new();
    let mut drop_goal: Vec<Condition> = Vec::new();
    let mut n = 0;
    for (object, known) in &pending {
        drop_goal.push(arrival(scene, object, &target.node));
        let holder = scene.parent_of(object).and_then(|(parent, _)| {
            robots
                .iter()
                .find(|r| parent.as_str() == r.as_str())
                .cloned()
        });
        if let Some(robot) = holder {
            // already in a capable robot's hand: no pickup needed
            if !participants.contains(&robot) {
                participants.push(robot);
            }
            continue;
        }
        let robot = robots[n % robots.len()].clone();
        n += 1;
        if !participants.contains(&robot) {
            participants.push(robot.clone());
        }
        let id = ids.subtask(n);
        let mut subtask = Subtask::single(
            id.clone(),
            format!("pick up {object}"),
            robot.clone(),
            vec![Condition::HeldBy {
                object: object.clone(),
                robot,
            }],
        );
        subtask.target_room = known
            .as_ref()
            .and_then(|id| scene.room_of(id))
            .or_else(|| hinted_room.clone());
        pickup_ids.push(id);
        graph.push(subtask);
    }

    participants.sort();
    if participants.len() < 2 {
        // everything rests with one robot after filtering: let it finish alone
        for (i, cond) in drop_goal.iter().enumerate() {
            if let Some(object) = cond.object() {
                let mut subtask = Subtask::single(
                    ids.subtask(100 + i),
                    format!("bring {object} to {}", target.node),
                    participants
                        .first()
                        .cloned()
                        .unwrap_or_else(|| robots[0].clone()),
                    vec![cond.clone()],
                );
                subtask.target_room = target.room.clone();
                graph.push(subtask);
            }
        }
        return Ok(());
    }

    trace.note(format!(
        "parallel pickups by {}, joint drop-off at {}",
        participants
            .iter()
            .map(|r| r.as_str())
            .collect::<Vec<_>>()
            .join(", "),
        target.node
    ));
    let mut drop_off = Subtask::collaborative(
        ids.subtask(pending.len() + 1),
        format!("deliver everything to {}", target.node),
        participants,
        drop_goal,
        RendezvousSpec {
            location: target.node.clone(),
            timeout_ms: None,
        },
    );
    for id in pickup_ids {
        drop_off = drop_off.after(id);
    }
    drop_off.target_room = target.room.clone();
    graph.push(drop_off);
    Ok(())
}

fn plan_relay(
    input: &PlannerInput,
    template: &GoalTemplate,
    mentions: &[Mention],
    graph: &mut SubtaskGraph,
    ids: &IdMint,
    trace: &mut ReasoningTrace,
) -> Result<(), PlanError> {
    let scene = &input.snapshot.scene;
    let param = |key: &str| -> Result<NodeId, PlanError> {
        let label = template.params.get(key).ok_or_else(|| {
            PlanError::Infeasible(format!("template {} lacks `{key}` parameter", template.name))
        })?;
        resolve_label(scene, label)
            .ok_or_else(|| PlanError::Infeasible(format!("label `{label}` is not in the scene")))
    };
    let carrier = param("via")?;
    let dest = param("dest")?;
    let item = requested_objects(mentions, &carrier)
        .into_iter()
        .map(|(id, _)| id)
        .find(|id| id != &dest)
        .map(Ok)
        .unwrap_or_else(|| param("item"))?;

    let stage_done = arrival(scene, &item, &carrier);
    let deliver_done = arrival(scene, &carrier, &dest);
    let skills = tools(&["navigate", "detect", "grasp", "place"]);
    let stage_rooms = rooms_for(scene, &[Some(&item), Some(&carrier)]);
    let deliver_rooms = rooms_for(scene, &[Some(&carrier), Some(&dest)]);
    let stage_robots = capable(input, &skills, &stage_rooms);
    let deliver_robots = capable(input, &skills, &deliver_rooms);
    let stage_robot = stage_robots
        .first()
        .cloned()
        .ok_or_else(|| PlanError::Infeasible("no robot can stage the item".into()))?;
    // prefer a different robot for the second leg
    let deliver_robot = deliver_robots
        .iter()
        .find(|r| **r != stage_robot)
        .or_else(|| deliver_robots.first())
        .cloned()
        .ok_or_else(|| PlanError::Infeasible("no robot can deliver the carrier".into()))?;
    trace.note(format!(
        "{stage_robot} stages {item} on {carrier}; {deliver_robot} moves it to {dest}"
    ));

    let mut n = 0;
    let mut stage_id = None;
    if !stage_done.eval(scene) {
        n += 1;
        let id = ids.subtask(n);
        let mut subtask = Subtask::single(
            id.clone(),
            format!("stage {item} on {carrier}"),
            stage_robot,
            vec![stage_done.clone()],
        );
        subtask.target_room = scene.room_of(&item).or_else(|| scene.room_of(&carrier));
        graph.push(subtask);
        stage_id = Some(id);
    }
    if !deliver_done.eval(scene) {
        n += 1;
        let mut subtask = Subtask::single(
            ids.subtask(n),
            format!("move {carrier} to {dest}"),
            deliver_robot,
            vec![deliver_done],
        );
        subtask.target_room = scene.room_of(&carrier);
        if let Some(prev) = stage_id {
            subtask = subtask.after(prev);
        }
        graph.push(subtask);
    }
    Ok(())
}

fn plan_pack(
    input: &PlannerInput,
    template: &GoalTemplate,
    mentions: &[Mention],
    graph: &mut SubtaskGraph,
    ids: &IdMint,
    trace: &mut ReasoningTrace,
) -> Result<(), PlanError> {
    let scene = &input.snapshot.scene;
    let container_label = template.params.get("container").ok_or_else(|| {
        PlanError::Infeasible(format!("template {} lacks `container` parameter", template.name))
    })?;
    let container = mentions
        .iter()
        .filter(|m| m.fixture)
        .find(|m| m.label.eq_ignore_ascii_case(container_label))
        .and_then(|m| m.node.clone())
        .or_else(|| resolve_label(scene, container_label))
        .ok_or_else(|| {
            PlanError::Infeasible(format!("container `{container_label}` is not in the scene"))
        })?;
    let item = requested_objects(mentions, &container)
        .into_iter()
        .map(|(id, _)| id)
        .next()
        .map(Ok)
        .unwrap_or_else(|| {
            let label = template.params.get("item").ok_or_else(|| {
                PlanError::Infeasible("the task names no item to pack".into())
            })?;
            resolve_label(scene, label).ok_or_else(|| {
                PlanError::Infeasible(format!("item `{label}` is not in the scene"))
            })
        })?;

    let opened = Condition::Attribute {
        node: container.clone(),
        key: "open".into(),
        value: crate::memory::AttrValue::Bool(true),
    };
    let packed = Condition::ContainedIn {
        object: item.clone(),
        target: container.clone(),
    };

    let open_skills = tools(&["navigate", "detect", "open_container"]);
    let pack_skills = tools(&["navigate", "detect", "grasp", "place"]);
    let container_rooms = rooms_for(scene, &[Some(&container)]);
    let pack_rooms = rooms_for(scene, &[Some(&item), Some(&container)]);
    let openers = capable(input, &open_skills, &container_rooms);
    let packers = capable(input, &pack_skills, &pack_rooms);
    let opener = openers
        .first()
        .cloned()
        .ok_or_else(|| PlanError::Infeasible("no robot can open the container".into()))?;
    let packer = packers
        .iter()
        .find(|r| **r != opener)
        .or_else(|| packers.first())
        .cloned()
        .ok_or_else(|| PlanError::Infeasible("no robot can pack the item".into()))?;
    trace.note(format!(
        "{opener} opens {container}; {packer} packs {item} inside"
    ));

    let mut n = 0;
    let mut open_id = None;
    if !opened.eval(scene) {
        n += 1;
        let id = ids.subtask(n);
        let mut subtask = Subtask::single(
            id.clone(),
            format!("open {container}"),
            opener,
            vec![opened.clone()],
        );
        subtask.target_room = scene.room_of(&container);
        graph.push(subtask);
        open_id = Some(id);
    }
    if !packed.eval(scene) {
        n += 1;
        let mut subtask = Subtask::single(
            ids.subtask(n),
            format!("pack {item} into {container}"),
            packer,
            vec![packed],
        );
        subtask.target_room = scene.room_of(&item).or_else(|| scene.room_of(&container));
        if let Some(prev) = open_id {
            subtask = subtask.after(prev);
        }
        graph.push(subtask);
    }
    Ok(())
}

fn plan_fill(
    input: &PlannerInput,
    template: &GoalTemplate,
    mentions: &[Mention],
    graph: &mut SubtaskGraph,
    ids: &IdMint,
    trace: &mut ReasoningTrace,
) -> Result<(), PlanError> {
    let scene = &input.snapshot.scene;
    let source_label = template.params.get("source").ok_or_else(|| {
        PlanError::Infeasible(format!("template {} lacks `source` parameter", template.name))
    })?;
    let source = resolve_label(scene, source_label).ok_or_else(|| {
        PlanError::Infeasible(format!("source `{source_label}` is not in the scene"))
    })?;
    let vessel = requested_objects(mentions, &source)
        .into_iter()
        .map(|(id, _)| id)
        .next()
        .map(Ok)
        .unwrap_or_else(|| {
            let label = template.params.get("vessel").ok_or_else(|| {
                PlanError::Infeasible("the task names no vessel to fill".into())
            })?;
            resolve_label(scene, label).ok_or_else(|| {
                PlanError::Infeasible(format!("vessel `{label}` is not in the scene"))
            })
        })?;

    let filled = Condition::Attribute {
        node: vessel.clone(),
        key: "filled".into(),
        value: crate::memory::AttrValue::Bool(true),
    };
    if filled.eval(scene) {
        return Ok(());
    }
    let skills = tools(&["navigate", "detect", "grasp", "pour"]);
    let rooms = rooms_for(scene, &[Some(&vessel), Some(&source)]);
    let robots = capable(input, &skills, &rooms);
    let robot = robots
        .first()
        .cloned()
        .ok_or_else(|| PlanError::Infeasible("no robot can pour".into()))?;
    trace.note(format!("{robot} fills {vessel} from {source}"));
    let mut subtask = Subtask::single(
        ids.subtask(1),
        format!("fill {vessel} from {source}"),
        robot,
        vec![filled],
    )
    .with_hint("source", source.as_str());
    subtask.target_room = scene.room_of(&vessel);
    graph.push(subtask);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::super::graph::SubtaskKind;
    use crate::clock::VirtualClock;
    use crate::memory::{
        Embodiment, Memory, NodeKind, ParentRef, RobotProfile, SceneNode,
    };
    use std::sync::Arc;

    fn base_memory() -> Memory {
        let mem = Memory::new(Arc::new(VirtualClock::new()));
        mem.upsert_node(SceneNode::new("ground", NodeKind::Floor, "ground"), None)
            .unwrap();
        for room in ["kitchen", "living_room"] {
            mem.upsert_node(
                SceneNode::new(room, NodeKind::Room, room.replace('_', " ")),
                Some(ParentRef::contains("ground")),
            )
            .unwrap();
        }
        mem.upsert_node(
            SceneNode::new("table", NodeKind::Object, "table").with_affordance("surface"),
            Some(ParentRef::contains("living_room")),
        )
        .unwrap();
        mem.upsert_node(
            SceneNode::new("counter", NodeKind::Object, "counter").with_affordance("surface"),
            Some(ParentRef::contains("kitchen")),
        )
        .unwrap();
        for obj in ["orange", "knife"] {
            mem.upsert_node(
                SceneNode::new(obj, NodeKind::Object, obj).with_affordance("graspable"),
                Some(ParentRef::supports("counter")),
            )
            .unwrap();
        }
        mem
    }

    fn robot(id: &str, skills: &[&str]) -> RobotProfile {
        RobotProfile {
            robot_id: RobotId::from(id),
            embodiment: Embodiment::Wheeled,
            skills: skills.iter().map(|s| ToolId::from(*s)).collect(),
            motion_domain: [NodeId::from("kitchen"), NodeId::from("living_room")]
                .into_iter()
                .collect(),
            home_position: [0.0; 3],
        }
    }

    const ALL_TOOLS: &[&str] = &[
        "navigate",
        "detect",
        "grasp",
        "place",
        "handover",
        "open_container",
        "pour",
    ];

    fn templates() -> Vec<GoalTemplate> {
        vec![GoalTemplate {
            name: "fetch".into(),
            kind: TemplateKind::Fetch,
            keywords: vec!["bring".into(), "fetch".into(), "give".into(), "find".into()],
            params: [("target".to_string(), "table".to_string())]
                .into_iter()
                .collect(),
        }]
    }

    fn input(mem: &Memory, text: &str) -> PlannerInput {
        PlannerInput {
            task: TaskRequest::new("t1", text, Timestamp::ZERO),
            snapshot: mem.snapshot(),
            templates: templates(),
            vocabulary: vec!["egg".into()],
            round: 0,
        }
    }

    #[test]
    fn single_object_fetch_is_one_subtask() {
        let mem = base_memory();
        mem.register_robot(robot("r1", ALL_TOOLS)).unwrap();
        let (_, graph) = plan(&input(&mem, "Please bring the orange to the table")).unwrap();
        assert_eq!(graph.len(), 1);
        let subtask = graph.subtasks.values().next().unwrap();
        assert_eq!(subtask.kind, SubtaskKind::Single);
        assert_eq!(subtask.assignees, vec![RobotId::from("r1")]);
        assert_eq!(
            subtask.goal,
            vec![Condition::PlacedOn {
                object: NodeId::from("orange"),
                target: NodeId::from("table"),
            }]
        );
        assert_eq!(subtask.target_room, Some(NodeId::from("kitchen")));
        assert_eq!(graph.max_depth().unwrap(), 1);
    }

    #[test]
    fn two_object_fetch_gets_parallel_pickups_and_collab_dropoff() {
        let mem = base_memory();
        mem.register_robot(robot("r1", ALL_TOOLS)).unwrap();
        mem.register_robot(robot("r2", ALL_TOOLS)).unwrap();
        let (_, graph) = plan(&input(&mem, "Give me the orange and the knife")).unwrap();
        assert_eq!(graph.len(), 3);
        let depths = graph.depths().unwrap();
        let by_depth = |d: u32| depths.values().filter(|v| **v == d).count();
        assert_eq!(by_depth(1), 2);
        assert_eq!(by_depth(2), 1);
        let collab = graph
            .subtasks
            .values()
            .find(|s| s.kind == SubtaskKind::Collaborative)
            .unwrap();
        assert_eq!(collab.assignees.len(), 2);
        assert_eq!(collab.prerequisites.len(), 2);
        assert_eq!(collab.goal.len(), 2);
        assert!(collab.rendezvous.is_some());
        // pickups go to different robots, first mention to the first robot
        let pickups: Vec<&Subtask> = graph
            .subtasks
            .values()
            .filter(|s| s.kind == SubtaskKind::Single)
            .collect();
        let orange = pickups
            .iter()
            .find(|s| s.goal[0].object() == Some(&NodeId::from("orange")))
            .unwrap();
        let knife = pickups
            .iter()
            .find(|s| s.goal[0].object() == Some(&NodeId::from("knife")))
            .unwrap();
        assert_eq!(orange.assignees, vec![RobotId::from("r1")]);
        assert_eq!(knife.assignees, vec![RobotId::from("r2")]);
        assert_eq!(
            orange.goal,
            vec![Condition::HeldBy {
                object: NodeId::from("orange"),
                robot: RobotId::from("r1"),
            }]
        );
    }

    #[test]
    fn unknown_object_in_vocabulary_becomes_search_subtask() {
        let mem = base_memory();
        mem.register_robot(robot("r1", ALL_TOOLS)).unwrap();
        let (_, graph) = plan(&input(&mem, "Find the egg and place it on the table")).unwrap();
        assert_eq!(graph.len(), 1);
        let subtask = graph.subtasks.values().next().unwrap();
        assert_eq!(
            subtask.goal,
            vec![Condition::PlacedOn {
                object: NodeId::from("egg"),
                target: NodeId::from("table"),
            }]
        );
        // search starts where the destination lives
        assert_eq!(subtask.target_room, Some(NodeId::from("living_room")));
    }

    #[test]
    fn unmatched_text_has_no_template() {
        let mem = base_memory();
        mem.register_robot(robot("r1", ALL_TOOLS)).unwrap();
        let err = plan(&input(&mem, "sing a song about rust")).unwrap_err();
        assert!(matches!(err, PlanError::NoTemplate(_)));
    }

    #[test]
    fn fetch_without_capable_robot_is_infeasible() {
        let mem = base_memory();
        mem.register_robot(robot("r1", &["navigate", "detect"])).unwrap();
        let err = plan(&input(&mem, "bring the orange to the table")).unwrap_err();
        assert!(matches!(err, PlanError::Infeasible(_)));
    }

    #[test]
    fn satisfied_goal_plans_to_empty_graph() {
        let mem = base_memory();
        mem.register_robot(robot("r1", ALL_TOOLS)).unwrap();
        mem.set_edge(
            &NodeId::from("table"),
            &NodeId::from("orange"),
            crate::memory::Relation::Supports,
        )
        .unwrap();
        let (_, graph) = plan(&input(&mem, "bring the orange to the table")).unwrap();
        assert!(graph.is_empty());
    }

    #[test]
    fn one_robot_fleet_falls_back_to_sequential_singles() {
        let mem = base_memory();
        mem.register_robot(robot("r1", ALL_TOOLS)).unwrap();
        let (_, graph) = plan(&input(&mem, "give me the orange and the knife")).unwrap();
        assert_eq!(graph.len(), 2);
        assert!(graph
            .subtasks
            .values()
            .all(|s| s.kind == SubtaskKind::Single && s.assignees == vec![RobotId::from("r1")]));
        assert_eq!(graph.max_depth().unwrap(), 1);
    }

    #[test]
    fn planning_is_deterministic() {
        let mem = base_memory();
        mem.register_robot(robot("r1", ALL_TOOLS)).unwrap();
        mem.register_robot(robot("r2", ALL_TOOLS)).unwrap();
        let a = plan(&input(&mem, "give me the orange and the knife")).unwrap();
        let b = plan(&input(&mem, "give me the orange and the knife")).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn multiword_labels_beat_their_parts() {
        let mem = base_memory();
        mem.upsert_node(
            SceneNode::new("cutting_board", NodeKind::Object, "cutting board")
                .with_affordance("surface"),
            Some(ParentRef::contains("kitchen")),
        )
        .unwrap();
        mem.upsert_node(
            SceneNode::new("board_game", NodeKind::Object, "board")
                .with_affordance("graspable"),
            Some(ParentRef::contains("living_room")),
        )
        .unwrap();
        mem.register_robot(robot("r1", ALL_TOOLS)).unwrap();
        let (_, graph) = plan(&input(&mem, "bring the knife to the cutting board")).unwrap();
        let subtask = graph.subtasks.values().next().unwrap();
        // "board" inside "cutting board" must not register as the board game
        assert_eq!(
            subtask.goal,
            vec![Condition::PlacedOn {
                object: NodeId::from("knife"),
                target: NodeId::from("cutting_board"),
            }]
        );
    }

    #[test]
    fn relay_template_builds_two_stage_pipeline() {
        let mem = base_memory();
        mem.upsert_node(
            SceneNode::new("tray", NodeKind::Object, "tray")
                .with_affordance("graspable")
                .with_affordance("surface"),
            Some(ParentRef::supports("counter")),
        )
        .unwrap();
        mem.upsert_node(
            SceneNode::new("burger", NodeKind::Object, "burger").with_affordance("graspable"),
            Some(ParentRef::supports("counter")),
        )
        .unwrap();
        mem.register_robot(robot("r1", ALL_TOOLS)).unwrap();
        mem.register_robot(robot("r2", ALL_TOOLS)).unwrap();
        let templates = vec![GoalTemplate {
            name: "serve".into(),
            kind: TemplateKind::Relay,
            keywords: vec!["order".into(), "serve".into()],
            params: [
                ("via".to_string(), "tray".to_string()),
                ("dest".to_string(), "table".to_string()),
                ("item".to_string(), "burger".to_string()),
            ]
            .into_iter()
            .collect(),
        }];
        let input = PlannerInput {
            task: TaskRequest::new("t1", "I would like to order a burger", Timestamp::ZERO),
            snapshot: mem.snapshot(),
            templates,
            vocabulary: vec![],
            round: 0,
        };
        let (_, graph) = plan(&input).unwrap();
        assert_eq!(graph.len(), 2);
        assert_eq!(graph.max_depth().unwrap(), 2);
        let order = graph.topo_order().unwrap();
        let first = graph.get(&order[0]).unwrap();
        let second = graph.get(&order[1]).unwrap();
        assert_eq!(
            first.goal,
            vec![Condition::PlacedOn {
                object: NodeId::from("burger"),
                target: NodeId::from("tray"),
            }]
        );
        assert_eq!(
            second.goal,
            vec![Condition::PlacedOn {
                object: NodeId::from("tray"),
                target: NodeId::from("table"),
            }]
        );
        // two robots, sequential legs on different machines
        assert_ne!(first.assignees, second.assignees);
    }

    #[test]
    fn pack_template_opens_then_inserts() {
        let mem = base_memory();
        mem.upsert_node(
            SceneNode::new("box", NodeKind::Object, "box")
                .with_affordance("container")
                .with_affordance("openable")
                .with_attribute("open", false),
            Some(ParentRef::contains("kitchen")),
        )
        .unwrap();
        mem.register_robot(robot("r1", ALL_TOOLS)).unwrap();
        mem.register_robot(robot("r2", ALL_TOOLS)).unwrap();
        let templates = vec![GoalTemplate {
            name: "pack".into(),
            kind: TemplateKind::Pack,
            keywords: vec!["pack".into()],
            params: [("container".to_string(), "box".to_string())]
                .into_iter()
                .collect(),
        }];
        let input = PlannerInput {
            task: TaskRequest::new("t1", "pack the orange into the box", Timestamp::ZERO),
            snapshot: mem.snapshot(),
            templates,
            vocabulary: vec![],
            round: 0,
        };
        let (_, graph) = plan(&input).unwrap();
        assert_eq!(graph.len(), 2);
        let order = graph.topo_order().unwrap();
        let first = graph.get(&order[0]).unwrap();
        let second = graph.get(&order[1]).unwrap();
        assert!(matches!(first.goal[0], Condition::Attribute { .. }));
        assert_eq!(
            second.goal,
            vec![Condition::ContainedIn {
                object: NodeId::from("orange"),
                target: NodeId::from("box"),
            }]
        );
        assert!(second.prerequisites.contains(&first.id));
    }

    #[test]
    fn fill_template_is_single_subtask_with_source_hint() {
        let mem = base_memory();
        mem.upsert_node(
            SceneNode::new("cup", NodeKind::Object, "cup")
                .with_affordance("graspable")
                .with_attribute("filled", false),
            Some(ParentRef::supports("table")),
        )
        .unwrap();
        mem.upsert_node(
            SceneNode::new("kettle", NodeKind::Object, "kettle").with_affordance("graspable"),
            Some(ParentRef::supports("counter")),
        )
        .unwrap();
        mem.register_robot(robot("r1", ALL_TOOLS)).unwrap();
        let templates = vec![GoalTemplate {
            name: "fill".into(),
            kind: TemplateKind::Fill,
            keywords: vec!["fill".into(), "water".into()],
            params: [("source".to_string(), "kettle".to_string())]
                .into_iter()
                .collect(),
        }];
        let input = PlannerInput {
            task: TaskRequest::new("t1", "fill the cup with water", Timestamp::ZERO),
            snapshot: mem.snapshot(),
            templates,
            vocabulary: vec![],
            round: 0,
        };
        let (_, graph) = plan(&input).unwrap();
        assert_eq!(graph.len(), 1);
        let subtask = graph.subtasks.values().next().unwrap();
        assert_eq!(subtask.hints.get("source"), Some(&"kettle".to_string()));
        assert!(matches!(subtask.goal[0], Condition::Attribute { .. }));
    }
}
