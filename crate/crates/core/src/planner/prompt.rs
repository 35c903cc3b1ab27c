//! Prompt assembly for the remote planner.
//!
//! The context blocks are serialized in a fixed order (scene, event tail,
//! robot profiles, robot states, task) and substituted into the template by
//! placeholder, so the rendered prompt is a deterministic function of the
//! planner input.

use super::rules::PlannerInput;

/// Placeholders understood by [`render_prompt`].
pub const PLACEHOLDERS: [&str; 5] = [
    "{{scene}}",
    "{{events}}",
    "{{robots}}",
    "{{states}}",
    "{{task}}",
];

/// Bundled template for whole-task decomposition planning.
pub const DECOMPOSITION_TEMPLATE: &str = include_str!("../../assets/prompts/decomposition.txt");

/// Bundled template for single-robot tool-calling execution.
pub const TOOL_CALLING_TEMPLATE: &str = include_str!("../../assets/prompts/tool_calling.txt");

/// Fill a prompt template with serialized context blocks. Unknown
/// placeholders are left untouched; an empty template yields the context
/// blocks concatenated in canonical order.
pub fn render_prompt(template: &str, input: &PlannerInput) -> String {
    let scene = serde_json::to_string_pretty(&input.snapshot.scene).unwrap_or_default();
    let events = serde_json::to_string_pretty(&input.snapshot.recent_events).unwrap_or_default();
    let profiles: Vec<_> = input
        .snapshot
        .registry
        .iter()
        .map(|(_, r)| r.profile.clone())
        .collect();
    let states: Vec<_> = input
        .snapshot
        .registry
        .iter()
        .map(|(_, r)| r.state.clone())
        .collect();
    let robots = serde_json::to_string_pretty(&profiles).unwrap_or_default();
    let states = serde_json::to_string_pretty(&states).unwrap_or_default();
    let task = serde_json::to_string_pretty(&input.task).unwrap_or_default();

    if template.is_empty() {
        return [scene, events, robots, states, task].join("\n\n");
    }
    template
        .replace("{{scene}}", &scene)
        .replace("{{events}}", &events)
        .replace("{{robots}}", &robots)
        .replace("{{states}}", &states)
        .replace("{{task}}", &task)
}
