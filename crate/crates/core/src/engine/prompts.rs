//! Request builders and reply parsers for every agent role.
//!
//! Replies are line-oriented `key: value` text so that both real models and
//! the simulated backends can produce them. Parsers are lenient about
//! whitespace and case of keys, strict about which keys they accept.

use crate::backend::{Agent, ChatMessage, CompletionRequest};
use crate::graph::DecompositionStep;

pub const ANSWER_KEY: &str = "answer";

fn request(agent: Agent, system: String, user: String, temperature: f64) -> CompletionRequest {
    CompletionRequest::new(agent, vec![ChatMessage::system(system), ChatMessage::user(user)], temperature)
}

/// Value of the first `key: value` line (key compared case-insensitively).
pub fn field<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines().find_map(|line| {
        let (k, v) = line.split_once(':')?;
        k.trim().eq_ignore_ascii_case(key).then(|| v.trim())
    })
}

/// Values of `key N: value` lines, in order of appearance.
pub fn numbered_fields<'a>(text: &'a str, key: &str) -> Vec<(usize, &'a str)> {
    text.lines()
        .filter_map(|line| {
            let (k, v) = line.split_once(':')?;
            let mut parts = k.split_whitespace();
            let name = parts.next()?;
            let n: usize = parts.next()?.parse().ok()?;
            (name.eq_ignore_ascii_case(key) && parts.next().is_none()).then(|| (n, v.trim()))
        })
        .collect()
}

// ---- learner ----

pub struct LearnerContext<'a> {
    pub skill: &'a str,
    pub strategy: &'a str,
    pub template: &'a str,
    pub principles: &'a [String],
}

pub fn learner_request(ctx: &LearnerContext<'_>, body: &str, temperature: f64) -> CompletionRequest {
    let mut system = format!(
        "You are the Learner.\nskill: {}\nstrategy: {}\ntemplate: {}",
        ctx.skill, ctx.strategy, ctx.template
    );
    if !ctx.principles.is_empty() {
        system.push_str("\nprinciples:");
        for p in ctx.principles {
            system.push_str("\n- ");
            system.push_str(p);
        }
    }
    let user = format!(
        "{body}\n\nReason step by step. Write each step as `Step N [skill]: ...` and finish with `Answer: <answer>`."
    );
    request(Agent::Learner, system, user, temperature)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LearnerReply {
    pub answer: Option<String>,
    pub steps: Vec<DecompositionStep>,
    /// Full reasoning text without the answer line.
    pub trace: String,
}

pub fn parse_learner_reply(text: &str) -> LearnerReply {
    let mut answer = None;
    let mut steps = Vec::new();
    let mut trace = Vec::new();
    for line in text.lines() {
        let trimmed = line.trim();
        if let Some((k, v)) = trimmed.split_once(':') {
            if k.trim().eq_ignore_ascii_case(ANSWER_KEY) {
                answer = Some(v.trim().to_string());
                continue;
            }
            if let Some(step) = parse_step(k, v) {
                steps.push(step);
            }
        }
        trace.push(line);
    }
    LearnerReply {
        answer,
        steps,
        trace: trace.join("\n").trim().to_string(),
    }
}

fn parse_step(key: &str, value: &str) -> Option<DecompositionStep> {
    let rest = key.trim().strip_prefix("Step")?;
    let open = rest.find('[')?;
    let close = rest.rfind(']')?;
    rest[..open].trim().parse::<usize>().ok()?;
    let skill = rest.get(open + 1..close)?.trim();
    (!skill.is_empty()).then(|| DecompositionStep {
        skill_name: skill.to_string(),
        step_output: value.trim().to_string(),
    })
}

// ---- judge ----

pub fn judge_request(question: &str, gold: &str, predicted: &str, temperature: f64) -> CompletionRequest {
    request(
        Agent::Critic,
        "You are the Critic. Decide whether the predicted answer matches the gold answer. Reply with exactly CORRECT or INCORRECT.".into(),
        format!("question: {question}\ngold: {gold}\npredicted: {predicted}"),
        temperature,
    )
}

/// `Some(true)` for CORRECT, `Some(false)` for INCORRECT, `None` when the
/// verdict cannot be read.
pub fn parse_judge_reply(text: &str) -> Option<bool> {
    let word = text.split_whitespace().next()?.trim_matches(|c: char| !c.is_ascii_alphabetic());
    if word.eq_ignore_ascii_case("correct") {
        Some(true)
    } else if word.eq_ignore_ascii_case("incorrect") {
        Some(false)
    } else {
        None
    }
}

pub fn normalize_answer(s: &str) -> String {
    s.trim().trim_end_matches('.').trim().to_lowercase()
}

/// Local exact-match scoring used in frozen evaluation.
pub fn exact_match(predicted: &str, gold: &str) -> bool {
    normalize_answer(predicted) == normalize_answer(gold)
}

// ---- navigator ----

pub fn navigator_request(frontier: &[(String, f64)], temperature: f64) -> CompletionRequest {
    let mut user = String::from("learnable frontier:");
    for (name, m) in frontier {
        user.push_str(&format!("\n- {name} (mastery {m:.3})"));
    }
    user.push_str("\n\nReply with `order: a, b, ...` listing the skills to practice first. Use only names from the list.");
    request(Agent::Navigator, "You are the Navigator.".into(), user, temperature)
}

/// Frontier skills from a navigator reply. Names outside `allowed` and
/// duplicates are dropped.
pub fn parse_navigator_reply(text: &str, allowed: &[String]) -> Vec<String> {
    let Some(list) = field(text, "order") else {
        return Vec::new();
    };
    let mut out: Vec<String> = Vec::new();
    for name in list.split(',').map(str::trim) {
        if allowed.iter().any(|a| a == name) && !out.iter().any(|o| o == name) {
            out.push(name.to_string());
        }
    }
    out
}

/// Skill names listed in a navigator request, in order.
pub fn navigator_listing(user: &str) -> Vec<(String, f64)> {
    user.lines()
        .filter_map(|l| {
            let rest = l.strip_prefix("- ")?;
            let (name, m) = rest.split_once(" (mastery ")?;
            let m: f64 = m.trim_end_matches(')').parse().ok()?;
            Some((name.to_string(), m))
        })
        .collect()
}

// ---- evolve ----

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvolveAction {
    FailureMemories,
    Principle,
    PromptRefinement,
    ToolAuthoring,
    SkillSplit,
}

impl EvolveAction {
    pub fn key(self) -> &'static str {
        match self {
            EvolveAction::FailureMemories => "failure_memories",
            EvolveAction::Principle => "principle",
            EvolveAction::PromptRefinement => "prompt_refinement",
            EvolveAction::ToolAuthoring => "tool",
            EvolveAction::SkillSplit => "split",
        }
    }

    pub fn from_key(s: &str) -> Option<Self> {
        [
            EvolveAction::FailureMemories,
            EvolveAction::Principle,
            EvolveAction::PromptRefinement,
            EvolveAction::ToolAuthoring,
            EvolveAction::SkillSplit,
        ]
        .into_iter()
        .find(|a| a.key() == s)
    }

    pub fn agent(self) -> Agent {
        match self {
            EvolveAction::PromptRefinement | EvolveAction::SkillSplit => Agent::Curator,
            _ => Agent::SkillDiscovery,
        }
    }

    fn instructions(self) -> &'static str {
        match self {
            EvolveAction::FailureMemories => {
                "For each error write `correction N: <corrective reasoning>`. Then write one \
                 `strategy: [Question type: <pattern>] <how to recognise and solve it>` line."
            }
            EvolveAction::Principle => "Write one `principle: <reusable rule>` line.",
            EvolveAction::PromptRefinement => "Write one `template: <improved instruction>` line.",
            EvolveAction::ToolAuthoring => "Write `tool_name: <identifier>` and `description: <what the tool does>`.",
            EvolveAction::SkillSplit => "Write one `split: <name of a narrower sub-skill>` line.",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorRecord {
    pub question: String,
    pub predicted: String,
    pub gold: String,
}

pub fn evolve_request(
    action: EvolveAction,
    task_type: &str,
    skill: &str,
    template: &str,
    errors: &[ErrorRecord],
    temperature: f64,
) -> CompletionRequest {
    let mut user = format!(
        "action: {}\ntask_type: {task_type}\nskill: {skill}\ntemplate: {template}\nerrors:",
        action.key()
    );
    for (i, e) in errors.iter().enumerate() {
        let n = i + 1;
        user.push_str(&format!(
            "\nquestion {n}: {}\npredicted {n}: {}\ngold {n}: {}",
            e.question, e.predicted, e.gold
        ));
    }
    user.push_str("\n\n");
    user.push_str(action.instructions());
    let system = format!("You are the {}. You write to the knowledge graph.", action.agent().name());
    request(action.agent(), system, user, temperature)
}

/// Error records listed in an evolve request.
pub fn parse_errors(user: &str) -> Vec<ErrorRecord> {
    let qs = numbered_fields(user, "question");
    let ps = numbered_fields(user, "predicted");
    let gs = numbered_fields(user, "gold");
    qs.iter()
        .filter_map(|(n, q)| {
            let p = ps.iter().find(|(m, _)| m == n)?.1;
            let g = gs.iter().find(|(m, _)| m == n)?.1;
            Some(ErrorRecord {
                question: q.to_string(),
                predicted: p.to_string(),
                gold: g.to_string(),
            })
        })
        .collect()
}

// ---- explorer ----

pub struct ExplorerView<'a> {
    pub goal: &'a str,
    pub focus: &'a str,
    pub actions: &'a [&'a str],
    pub recent: &'a [String],
    pub recipe: &'a [String],
    pub episode: i64,
    pub step: usize,
}

pub fn explorer_request(view: &ExplorerView<'_>, temperature: f64) -> CompletionRequest {
    let mut user = format!(
        "episode: {}\nstep: {}\ngoal: {}\nfocus: {}\nactions: {}\nrecent: {}",
        view.episode,
        view.step,
        view.goal,
        view.focus,
        view.actions.join(", "),
        view.recent.join(", ")
    );
    if !view.recipe.is_empty() {
        user.push_str(&format!("\nrecipe: {}", view.recipe.join(", ")));
    }
    user.push_str("\n\nReply with `action: <one of the actions>`.");
    request(Agent::Explorer, "You are the Explorer.".into(), user, temperature)
}

pub fn parse_explorer_reply(text: &str) -> Option<String> {
    field(text, "action").map(|s| s.to_string()).filter(|s| !s.is_empty())
}

/// Splits a comma list field, dropping empties.
pub fn list_field(text: &str, key: &str) -> Vec<String> {
    field(text, key)
        .map(|v| {
            v.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect()
        })
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learner_reply_round_trip() {
        let r = parse_learner_reply("Step 1 [ratio_reasoning]: 3 x 4 = 12\nStep 2 [quantity_extraction]: 12 + 4 = 16\nAnswer: 16");
        assert_eq!(r.answer.as_deref(), Some("16"));
        assert_eq!(r.steps.len(), 2);
        assert_eq!(r.steps[0].skill_name, "ratio_reasoning");
        assert_eq!(r.steps[1].step_output, "12 + 4 = 16");
        assert!(!r.trace.contains("Answer"));
        assert_eq!(parse_learner_reply("no answer here").answer, None);
    }

    #[test]
    fn judge_parsing() {
        assert_eq!(parse_judge_reply("CORRECT"), Some(true));
        assert_eq!(parse_judge_reply(" incorrect."), Some(false));
        assert_eq!(parse_judge_reply("maybe"), None);
        assert_eq!(parse_judge_reply(""), None);
        assert!(exact_match(" 42. ", "42"));
        assert!(!exact_match("41", "42"));
    }

    #[test]
    fn navigator_keeps_only_frontier_names() {
        let allowed = vec!["a".to_string(), "b".to_string()];
        assert_eq!(parse_navigator_reply("order: b, zzz, a, b", &allowed), vec!["b", "a"]);
        assert!(parse_navigator_reply("nothing", &allowed).is_empty());
        let req = navigator_request(&[("a".into(), 0.25), ("b".into(), 0.1)], 0.3);
        assert_eq!(navigator_listing(req.user_text()), vec![("a".to_string(), 0.25), ("b".to_string(), 0.1)]);
    }

    #[test]
    fn evolve_request_lists_errors() {
        let errs = vec![
            ErrorRecord {
                question: "q1".into(),
                predicted: "1".into(),
                gold: "2".into(),
            },
            ErrorRecord {
                question: "q2".into(),
                predicted: "3".into(),
                gold: "4".into(),
            },
        ];
        let req = evolve_request(EvolveAction::FailureMemories, "t", "s", "tmpl", &errs, 0.3);
        assert_eq!(req.agent, Agent::SkillDiscovery);
        assert_eq!(parse_errors(req.user_text()), errs);
        assert_eq!(field(req.user_text(), "action"), Some("failure_memories"));
        assert_eq!(evolve_request(EvolveAction::SkillSplit, "t", "s", "x", &[], 0.3).agent, Agent::Curator);
    }

    #[test]
    fn numbered_fields_ignore_other_keys() {
        let text = "correction 2: b\ncorrection 1: a\ncorrections: x\ncorrection x: y";
        assert_eq!(numbered_fields(text, "correction"), vec![(2, "b"), (1, "a")]);
    }
}
