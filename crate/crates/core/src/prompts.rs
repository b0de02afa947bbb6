//! Prompt templates for the external model paths and their slot filling.
//!
//! Templates are kept verbatim in `prompts/*.txt`; LaTeX quote pairs are
//! rendered as plain ASCII double quotes.

pub const TEMPORAL_REORDER: &str = include_str!("../prompts/temporal_reorder.txt");
pub const SUBGOAL_LOCALIZER: &str = include_str!("../prompts/subgoal_localizer.txt");
pub const SKILL_ROUTER: &str = include_str!("../prompts/skill_router.txt");
pub const SYNTHESIS_TEMPORAL: &str = include_str!("../prompts/instruction_synthesis_temporal.txt");
pub const SYNTHESIS_ATOMIC: &str = include_str!("../prompts/instruction_synthesis_atomic.txt");

/// Substitute `{name}` slots. Braces that are not listed slots are left alone,
/// so literal JSON and set notation in the templates survive.
pub fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in slots {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

pub fn temporal_reorder(instruction: &str) -> String {
    fill(TEMPORAL_REORDER, &[("instruction", instruction)])
}

/// Localizer prompt; viewpoint summaries go after the trailing images label,
/// one per line, in visit order.
pub fn subgoal_localizer(reordered: &str, previous: &[String], viewpoints: &[String]) -> String {
    let prev = previous.join(" ");
    let mut out = fill(
        SUBGOAL_LOCALIZER,
        &[("instruction", reordered), ("previous_sub_instructions", &prev)],
    );
    for (i, v) in viewpoints.iter().enumerate() {
        out.push_str(&format!("[{}] {}\n", i + 1, v));
    }
    out
}

/// Router prompt with the reordered plan in its template slot; the original
/// instruction is appended as a trailing context block.
pub fn skill_router(original: &str, reordered: &str, sub_instruction: &str, reasoning: &str) -> String {
    let mut out = fill(
        SKILL_ROUTER,
        &[
            ("full_instruction", reordered),
            ("sub_instruction", sub_instruction),
            ("reasoning", reasoning),
        ],
    );
    out.push_str(&format!("\n<Original Whole Instruction>:\n\"{original}\"\n"));
    out
}

pub fn synthesis_temporal(path_observations: &str) -> String {
    fill(SYNTHESIS_TEMPORAL, &[("path_images", path_observations)])
}

pub fn synthesis_atomic(path_observations: &str, skill_name: &str) -> String {
    fill(
        SYNTHESIS_ATOMIC,
        &[("path_images", path_observations), ("skill_name", skill_name)],
    )
}

/// Suffix appended when asking the model to repair an invalid answer; it
/// also makes the retry a distinct transcript key.
pub fn repair_note(prompt: &str, problem: &str) -> String {
    format!("{prompt}\nYour previous answer was rejected: {problem}. Answer again following the output format exactly.\n")
}
