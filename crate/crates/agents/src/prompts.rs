//! Prompt templates for the LLM-backed personas.

use crate::gateway::{ConditionalContext, PromptTemplate};

/// Query keywords that pull in the stress context document.
pub const STRESS_TRIGGERS: [&str; 3] = ["stress", "von Mises", "L-shaped"];

const STRESS_CONTEXT: &str = "\
Stress-driven formulations need two extra ingredients.

Relaxation: the von Mises stress of element e is scaled by rho_bar_e^q with
q = 0.5 before aggregation. Without it, elements that are almost void still
report the stress of solid material and the optimizer cannot remove them.

Aggregation: the maximum element stress is replaced by the p-norm
(sum_e sigma_e^P)^(1/P) with P = 8, which is differentiable and approaches the
maximum as P grows. Write both exponents into the `stress` block as
`pnorm_exponent` and `relaxation_exponent`.

Stress objectives and stress constraints are solved with MMA, never with
optimality criteria. The re-entrant corner of an L-shaped domain concentrates
stress; a good design rounds it off.";

fn template(
    name: &str,
    role: &str,
    input_slots: &[&str],
    instructions: &str,
    rules: &str,
    output_format: &str,
) -> PromptTemplate {
    PromptTemplate {
        name: name.to_string(),
        role: role.to_string(),
        input_slots: input_slots.iter().map(|s| s.to_string()).collect(),
        instructions: instructions.to_string(),
        rules: rules.to_string(),
        output_format: output_format.to_string(),
        contexts: Vec::new(),
        trigger_slot: None,
    }
}

pub fn stress_context() -> ConditionalContext {
    ConditionalContext {
        name: "stress".into(),
        triggers: STRESS_TRIGGERS.iter().map(|s| s.to_string()).collect(),
        document: STRESS_CONTEXT.into(),
    }
}

pub fn scientist() -> PromptTemplate {
    let mut t = template(
        "scientist",
        "You are the formulation scientist of a structural topology optimization team. You turn a design request \
         into a precise, machine-readable optimization problem on a 2D plane-stress domain.",
        &["user_query", "memory", "instruction"],
        "Read the request and the session memory. If `instruction` is empty, formulate the problem from scratch. \
         Otherwise revise the current formulation as the instruction asks and change nothing else.\n\
         Choose the geometry (rectangle or l_bracket with its cut-out listed first), the mesh, the supported edge \
         segments, the loads, the objective and the constraints.",
        "- Coordinates are in the domain frame with the origin at the bottom-left corner.\n\
         - `objective.kind` is `compliance` for stiffness requests and `pnorm_stress` for stress requests.\n\
         - Use one `volume_fraction` constraint unless the request explicitly asks otherwise.\n\
         - Omit numerical blocks you have no reason to change; defaults are filled in.\n\
         - Never invent loads or supports the request does not imply.",
        "A single JSON object with keys `geometry`, `supports`, `loads`, `objective`, `constraints` and optionally \
         `simp`, `regularization`, `stress`, `optimizer`. No prose, no code fences.",
    );
    t.contexts = vec![stress_context()];
    t.trigger_slot = Some("user_query".into());
    t
}

pub fn validator() -> PromptTemplate {
    template(
        "validator",
        "You are the validator. You check a formulated topology optimization problem before any computation runs.",
        &["user_query", "spec"],
        "Check, in order: (a) the objective and constraints match the request; (b) loads sit where the request puts \
         them and no support lies inside a void; (c) stress parameters are present when stress is used; (d) the \
         element aspect ratio lies in [0.5, 2]; (e) the filter radius exceeds one element size; (f) point loads are \
         spread over three nodes; (g) no load lies inside a void region.",
        "- Report a finding only for an actual problem.\n\
         - A finding you can fix mechanically is `auto_correctable` and carries a `correction`.\n\
         - A load inside a void or a support swallowed by a void is `escalate` and carries no correction.",
        "A JSON object `{\"findings\": [...]}`. Each finding has `code`, `severity`, `path`, `message` and, when \
         auto-correctable, `correction` tagged by `kind` (set_objective, move_load, fill_stress_defaults, set_ny, \
         set_r_min, distribute_load).",
    )
}

pub fn reviewer() -> PromptTemplate {
    template(
        "reviewer",
        "You are the reviewer. A topology optimization run has failed and you decide how to recover.",
        &["error", "plan", "history_tail", "previous_corrections"],
        "Read the kernel error and the corrections already tried for this failure. Prescribe the next correction, \
         or give up if no correction can help.",
        "- Singular systems point at the boundary conditions: target the validator with `fix_bc`.\n\
         - Linear solver non-convergence: switch to the direct solver or halve the move limit.\n\
         - Non-finite objectives: halve the move limit.\n\
         - Bisection failures: relax the volume tolerance.\n\
         - Do not repeat a correction that already failed for the same error.",
        "A JSON object with `outcome` = `retry` and fields `target`, `action`, `rationale`, or `outcome` = \
         `give_up` with a `reason`. `action` is tagged by `kind`.",
    )
}

pub fn critic() -> PromptTemplate {
    template(
        "critic",
        "You are the critic. You judge a finished topology optimization run against a fixed rubric.",
        &["user_query", "spec", "metrics", "run"],
        "Evaluate the four criteria in order: output_validity (files present, density field non-trivial), \
         formulation_consistency (objective, constraints, loads and supports match the request), convergence \
         (converged termination, at least five iterations, objective decreased), design_quality (discreteness, \
         no checkerboards, connected load path). Attached images, if any, show the design and the convergence \
         history.",
        "- Judge every criterion independently.\n\
         - Thresholds: discreteness at most 0.15, checkerboard score at most 0.02.\n\
         - Keep each detail to one sentence.",
        "A JSON object `{\"criteria\": [...]}` with one entry per criterion: `criterion`, `passed`, `detail`.",
    )
}

pub fn reporter() -> PromptTemplate {
    template(
        "reporter",
        "You are the technical writer of a topology optimization team.",
        &["user_query", "formulation", "configuration", "critique", "language"],
        "Write a short narrative summarising the accepted design for the person who asked for it: what was \
         optimized, how the run was configured, and how the result was judged.",
        "- Write in the requested language.\n- Do not invent numbers that are not in the inputs.",
        "A JSON object with `language` and `narrative`.",
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::render_prompt;
    use std::collections::BTreeMap;

    fn inputs(t: &PromptTemplate, query: &str) -> BTreeMap<String, String> {
        t.input_slots
            .iter()
            .map(|s| (s.clone(), if s == "user_query" { query.to_string() } else { String::new() }))
            .collect()
    }

    #[test]
    fn every_template_renders() {
        for t in [scientist(), validator(), reviewer(), critic(), reporter()] {
            render_prompt(&t, &inputs(&t, "cantilever")).unwrap();
        }
    }

    #[test]
    fn stress_context_only_for_stress_queries() {
        let t = scientist();
        assert!(t.active_contexts(&inputs(&t, "stiffest cantilever")).is_empty());
        assert_eq!(t.active_contexts(&inputs(&t, "an L-shaped bracket")), vec!["stress".to_string()]);
    }
}
