//! Turning plan steps into actions: prompt the backend with each grounded
//! objective, parse its reply, apply world events, verify, and retry through
//! the planner when the outcome is wrong.
//!
//! Replies follow a small action grammar:
//!
//! ```text
//! ACT POINT <id>
//! ACT MOVE <id> <x> <y> <w> <h>
//! ACT SAY <text>
//! ACT ASK <text>
//! ACT HIGHLIGHT <id> [<id> ...]
//! ```
//!
//! Text not starting with `ACT ` is taken as a plain response.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, CompletionParams, ModelBackend, Phase, PromptBundle};
use crate::memory::MemoryState;
use crate::perception::Percept;
use crate::planner::{ground_subtask, GroundContext, Grounding, Instruction, ObjectiveLine, Plan, Subtask, SubtaskStatus};
use crate::text::bracketed_ids;
use crate::world::{apply_event, relation_holds, BBox, SceneWorld, SpatialRelation, WorldEvent};

/// Subtask id attached to the closing summary response.
pub const SUMMARY_SUBTASK: &str = "summary";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionTag {
    Respond,
    Point,
    Highlight,
    Clarify,
    WorldEvent,
}

impl ActionTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionTag::Respond => "respond",
            ActionTag::Point => "point",
            ActionTag::Highlight => "highlight",
            ActionTag::Clarify => "clarify",
            ActionTag::WorldEvent => "world_event",
        }
    }
}

impl fmt::Display for ActionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ActionKind {
    Respond {
        text: String,
    },
    Point {
        entity_id: String,
        /// Box from the detection (or the scene); absent for unknown ids.
        bbox: Option<BBox>,
    },
    Highlight {
        entity_ids: Vec<String>,
    },
    Clarify {
        question: String,
    },
    WorldEvent {
        event: WorldEvent,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentAction {
    #[serde(flatten)]
    pub kind: ActionKind,
    pub subtask_id: String,
    pub attempt: u32,
}

impl AgentAction {
    pub fn new(kind: ActionKind, subtask_id: impl Into<String>, attempt: u32) -> Self {
        Self {
            kind,
            subtask_id: subtask_id.into(),
            attempt,
        }
    }

    pub fn tag(&self) -> ActionTag {
        match self.kind {
            ActionKind::Respond { .. } => ActionTag::Respond,
            ActionKind::Point { .. } => ActionTag::Point,
            ActionKind::Highlight { .. } => ActionTag::Highlight,
            ActionKind::Clarify { .. } => ActionTag::Clarify,
            ActionKind::WorldEvent { .. } => ActionTag::WorldEvent,
        }
    }

    /// Entity ids this action talks about, in order, without duplicates.
    /// Free text contributes ids written as `[id]`.
    pub fn referenced_ids(&self) -> Vec<String> {
        let mut ids = match &self.kind {
            ActionKind::Respond { text } => bracketed_ids(text),
            ActionKind::Clarify { question } => bracketed_ids(question),
            ActionKind::Point { entity_id, .. } => vec![entity_id.clone()],
            ActionKind::Highlight { entity_ids } => entity_ids.clone(),
            ActionKind::WorldEvent { event } => vec![event.target().to_string()],
        };
        let mut seen = std::collections::HashSet::new();
        ids.retain(|id| seen.insert(id.clone()));
        ids
    }

    pub fn summary(&self) -> String {
        match &self.kind {
            ActionKind::Respond { text } => format!("SAY {text}"),
            ActionKind::Point { entity_id, .. } => format!("POINT {entity_id}"),
            ActionKind::Highlight { entity_ids } => format!("HIGHLIGHT {}", entity_ids.join(" ")),
            ActionKind::Clarify { question } => format!("ASK {question}"),
            ActionKind::WorldEvent { event } => match event {
                WorldEvent::Move { id, bbox } => {
                    let b = bbox.to_array();
                    format!("MOVE {id} {:.3} {:.3} {:.3} {:.3}", b[0], b[1], b[2], b[3])
                }
                other => format!("EVENT {}", other.target()),
            },
        }
    }

    pub fn is_summary(&self) -> bool {
        self.subtask_id == SUMMARY_SUBTASK
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("malformed action reply: {0}")]
    MalformedActionReply(String),
}

/// Parses a backend reply into an action. POINT boxes come from the
/// detection when one exists, else from the scene.
pub fn parse_action_reply(
    reply: &str,
    subtask_id: &str,
    attempt: u32,
    scene: &SceneWorld,
    percept: &Percept,
) -> Result<AgentAction, ExecError> {
    let text = reply.trim();
    let bad = |why: &str| ExecError::MalformedActionReply(format!("{why}: `{text}`"));
    if text.is_empty() {
        return Err(bad("empty reply"));
    }
    let Some(rest) = text.strip_prefix("ACT ") else {
        return Ok(AgentAction::new(ActionKind::Respond { text: text.to_string() }, subtask_id, attempt));
    };
    let rest = rest.trim_start();
    let (verb, args) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
    let args = args.trim();
    let kind = match verb {
        "POINT" => {
            let mut it = args.split_whitespace();
            let id = it.next().ok_or_else(|| bad("POINT without id"))?;
            if it.next().is_some() {
                return Err(bad("POINT takes one id"));
            }
            let bbox = percept
                .detection_for(id)
                .map(|d| d.bbox)
                .or_else(|| scene.get(id).map(|e| e.bbox));
            ActionKind::Point {
                entity_id: id.to_string(),
                bbox,
            }
        }
        "MOVE" => {
            let parts: Vec<&str> = args.split_whitespace().collect();
            if parts.len() != 5 {
                return Err(bad("MOVE takes an id and four numbers"));
            }
            let nums: Vec<f64> = parts[1..]
                .iter()
                .map(|p| p.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| bad("MOVE with non-numeric box"))?;
            let bbox = BBox::new(nums[0], nums[1], nums[2], nums[3]).map_err(|_| bad("MOVE box outside the scene"))?;
            ActionKind::WorldEvent {
                event: WorldEvent::Move {
                    id: parts[0].to_string(),
                    bbox,
                },
            }
        }
        "SAY" if !args.is_empty() => ActionKind::Respond { text: args.to_string() },
        "ASK" if !args.is_empty() => ActionKind::Clarify {
            question: args.to_string(),
        },
        "HIGHLIGHT" if !args.is_empty() => ActionKind::Highlight {
            entity_ids: args.split_whitespace().map(str::to_string).collect(),
        },
        _ => return Err(bad("unknown or incomplete ACT")),
    };
    Ok(AgentAction::new(kind, subtask_id, attempt))
}

/// What a correct action for a subtask must satisfy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "expect", rename_all = "snake_case")]
pub enum Expectation {
    EntityResolved { id: String },
    RelationAfter { rel: SpatialRelation, a: String, b: String },
    AnswerEquals { value: String },
    ActionKind { kind: ActionTag },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MismatchReason {
    WrongEntity,
    RelationUnsatisfied,
    WrongAnswer,
    WrongActionKind,
}

impl MismatchReason {
    pub fn as_str(self) -> &'static str {
        match self {
            MismatchReason::WrongEntity => "wrong-entity",
            MismatchReason::RelationUnsatisfied => "relation-unsatisfied",
            MismatchReason::WrongAnswer => "wrong-answer",
            MismatchReason::WrongActionKind => "wrong-action-kind",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub reason: MismatchReason,
    pub detail: String,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.reason.as_str(), self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Ok,
    Mismatch(Mismatch),
}

impl Verdict {
    fn mismatch(reason: MismatchReason, detail: impl Into<String>) -> Self {
        Verdict::Mismatch(Mismatch {
            reason,
            detail: detail.into(),
        })
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, Verdict::Ok)
    }
}

/// Checks an action against its expectation on the post-action scene.
pub fn verify(action: &AgentAction, expectation: &Expectation, scene: &SceneWorld, margin: f64) -> Verdict {
    use MismatchReason::*;
    let kind_error = |want: ActionTag| Verdict::mismatch(WrongActionKind, format!("expected {want}, got {}", action.tag()));
    match expectation {
        Expectation::EntityResolved { id } => match &action.kind {
            ActionKind::Point { entity_id, .. } if entity_id == id => Verdict::Ok,
            ActionKind::Point { entity_id, .. } => Verdict::mismatch(WrongEntity, format!("expected {id}, got {entity_id}")),
            _ => kind_error(ActionTag::Point),
        },
        Expectation::RelationAfter { rel, a, b } => match &action.kind {
            ActionKind::WorldEvent {
                event: WorldEvent::Move { id, .. },
            } if id != a => Verdict::mismatch(WrongEntity, format!("expected {a} to move, got {id}")),
            ActionKind::WorldEvent { .. } => match relation_holds(*rel, a, b, scene, margin) {
                Ok(true) => Verdict::Ok,
                Ok(false) => Verdict::mismatch(RelationUnsatisfied, format!("{rel} {a} {b} does not hold")),
                Err(e) => Verdict::mismatch(RelationUnsatisfied, e.to_string()),
            },
            _ => kind_error(ActionTag::WorldEvent),
        },
        Expectation::AnswerEquals { value } => match &action.kind {
            ActionKind::Respond { text } if text.trim() == value => Verdict::Ok,
            ActionKind::Respond { text } => Verdict::mismatch(WrongAnswer, format!("expected `{value}`, got `{}`", text.trim())),
            _ => kind_error(ActionTag::Respond),
        },
        Expectation::ActionKind { kind } if action.tag() == *kind => Verdict::Ok,
        Expectation::ActionKind { kind } => kind_error(*kind),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrectionPolicy {
    pub max_retries: u32,
}

impl Default for CorrectionPolicy {
    fn default() -> Self {
        Self { max_retries: 2 }
    }
}

/// One backend round for one subtask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub subtask_id: String,
    pub attempt: u32,
    pub objective: String,
    pub reply: String,
    pub action: Option<AgentAction>,
    pub verdict: Verdict,
    /// Wall-clock time of the round, split into generation and verification.
    #[serde(skip)]
    pub generate_ms: f64,
    #[serde(skip)]
    pub verify_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    /// Final action per subtask, in plan order, then the summary response.
    pub actions: Vec<AgentAction>,
    /// First attempt of every subtask.
    pub first_attempts: Vec<AttemptRecord>,
    /// Retries, in order.
    pub corrections: Vec<AttemptRecord>,
    pub thoughts: Vec<String>,
    #[serde(skip)]
    pub summary_ms: f64,
}

/// Everything the executor reads besides the plan and the mutable scene.
#[derive(Clone, Copy)]
pub struct ExecContext<'a> {
    pub backend: &'a dyn ModelBackend,
    pub params: &'a CompletionParams,
    pub policy: CorrectionPolicy,
    pub margin: f64,
    pub memory: &'a MemoryState,
    pub memory_text: &'a str,
    pub percept: &'a Percept,
    pub instruction: &'a Instruction,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1000.0
}

/// One backend round: prompt, parse, apply, verify.
fn attempt_once(
    subtask: &Subtask,
    grounding: &Grounding,
    attempt: u32,
    phase: Phase,
    context: &str,
    scene: &mut SceneWorld,
    ctx: &ExecContext,
) -> Result<AttemptRecord, BackendError> {
    let started = Instant::now();
    let objective = grounding.objective.to_string();
    let bundle = PromptBundle::new(phase, context, &ctx.percept.rendered_text, &objective, &ctx.instruction.raw);
    let reply = ctx.backend.complete(&bundle, ctx.params)?;
    let parsed = parse_action_reply(&reply, &subtask.id, attempt, scene, ctx.percept);
    let mut applied_error = None;
    if let Ok(AgentAction {
        kind: ActionKind::WorldEvent { event },
        ..
    }) = &parsed
    {
        match apply_event(scene, event) {
            Ok(next) => *scene = next,
            Err(e) => applied_error = Some(e),
        }
    }
    let generate_ms = ms(started);
    let started = Instant::now();
    let (action, verdict) = match parsed {
        Err(e) => (None, Verdict::mismatch(MismatchReason::WrongActionKind, e.to_string())),
        Ok(action) => {
            let verdict = if let Some(e) = applied_error {
                Verdict::mismatch(MismatchReason::RelationUnsatisfied, format!("event rejected: {e}"))
            } else {
                match &grounding.expectation {
                    Some(exp) => verify(&action, exp, scene, ctx.margin),
                    None => Verdict::Ok,
                }
            };
            (Some(action), verdict)
        }
    };
    Ok(AttemptRecord {
        subtask_id: subtask.id.clone(),
        attempt,
        objective,
        reply,
        action,
        verdict,
        generate_ms,
        verify_ms: ms(started),
    })
}

/// Result of the bounded retry loop.
#[derive(Debug, Clone, PartialEq)]
pub enum Correction {
    Corrected { action: AgentAction, grounding: Grounding },
    Escalation(AgentAction),
}

/// Retries a failed subtask through the planner until it verifies or the
/// policy runs out. Each retry re-grounds the subtask on the current scene
/// and shows the model the previous mismatch.
#[allow(clippy::too_many_arguments)]
pub fn self_correct(
    mismatch: &Mismatch,
    subtask: &Subtask,
    failed_attempt: u32,
    recent: Option<&str>,
    scene: &mut SceneWorld,
    ctx: &ExecContext,
    log: &mut Vec<AttemptRecord>,
    thoughts: &mut Vec<String>,
) -> Result<Correction, BackendError> {
    let limit = ctx.policy.max_retries + 1;
    let mut last = mismatch.clone();
    let mut attempt = failed_attempt;
    while attempt < limit {
        attempt += 1;
        let grounding = {
            let snapshot = scene.clone();
            let gctx = GroundContext::new(ctx.memory, ctx.percept, &snapshot, ctx.margin, recent);
            ground_subtask(subtask, &gctx)
        };
        let context = format!("{}\n[mismatch] {}", ctx.memory_text, last);
        let record = attempt_once(subtask, &grounding, attempt, Phase::Correct, context.trim_start(), scene, ctx)?;
        thoughts.push(format!(
            "CORRECTION {} attempt {}: {}",
            subtask.id,
            attempt,
            match &record.verdict {
                Verdict::Ok => "ok".to_string(),
                Verdict::Mismatch(m) => m.to_string(),
            }
        ));
        let verdict = record.verdict.clone();
        let action = record.action.clone();
        log.push(record);
        match (verdict, action) {
            (Verdict::Ok, Some(action)) => return Ok(Correction::Corrected { action, grounding }),
            (Verdict::Mismatch(m), _) => last = m,
            (Verdict::Ok, None) => unreachable!("ok verdicts always carry an action"),
        }
    }
    thoughts.push(format!("ESCALATION {} after {} attempts: {}", subtask.id, attempt, last));
    Ok(Correction::Escalation(AgentAction::new(
        ActionKind::Clarify {
            question: format!("I could not complete \"{}\" ({}). Can you help?", subtask.objective.canonical(), last.reason.as_str()),
        },
        &subtask.id,
        attempt,
    )))
}

fn outcome_text(action: &AgentAction) -> String {
    match &action.kind {
        ActionKind::Respond { text } => text.clone(),
        ActionKind::Clarify { question } => question.clone(),
        ActionKind::Point { entity_id, .. } => format!("pointed at [{entity_id}]"),
        ActionKind::Highlight { entity_ids } => {
            let ids: Vec<String> = entity_ids.iter().map(|i| format!("[{i}]")).collect();
            format!("highlighted {}", ids.join(" "))
        }
        ActionKind::WorldEvent { event } => format!("moved [{}]", event.target()),
    }
}

/// Runs every subtask of `plan` in order, mutating `scene` as world events
/// are applied, and closes with one summary response.
pub fn execute_generate(plan: &mut Plan, scene: &mut SceneWorld, ctx: &ExecContext) -> Result<ExecutionOutcome, BackendError> {
    let mut out = ExecutionOutcome {
        actions: Vec::new(),
        first_attempts: Vec::new(),
        corrections: Vec::new(),
        thoughts: Vec::new(),
        summary_ms: 0.0,
    };
    let mut recent: Option<String> = None;
    for idx in 0..plan.subtasks.len() {
        plan.subtasks[idx]
            .transition(SubtaskStatus::Active)
            .expect("fresh plans start pending");
        let subtask = plan.subtasks[idx].clone();
        let grounding = {
            let snapshot = scene.clone();
            let gctx = GroundContext::new(ctx.memory, ctx.percept, &snapshot, ctx.margin, recent.as_deref());
            ground_subtask(&subtask, &gctx)
        };
        let first = attempt_once(&subtask, &grounding, 1, Phase::Execute, ctx.memory_text, scene, ctx)?;
        let verdict = first.verdict.clone();
        let first_action = first.action.clone();
        out.first_attempts.push(first);

        let (action, final_grounding) = match (verdict, first_action) {
            (Verdict::Ok, Some(a)) => (Some(a), Some(grounding)),
            (Verdict::Mismatch(m), _) => {
                out.thoughts.push(format!("CORRECTION {} attempt 1: {}", subtask.id, m));
                match self_correct(&m, &subtask, 1, recent.as_deref(), scene, ctx, &mut out.corrections, &mut out.thoughts)? {
                    Correction::Corrected { action, grounding } => (Some(action), Some(grounding)),
                    Correction::Escalation(esc) => {
                        out.actions.push(esc);
                        (None, None)
                    }
                }
            }
            (Verdict::Ok, None) => unreachable!("ok verdicts always carry an action"),
        };

        let status = match (action, final_grounding) {
            (Some(action), Some(g)) => {
                out.thoughts.extend(g.thoughts.iter().cloned());
                if g.resolved.is_some() {
                    recent = g.resolved.clone();
                }
                out.actions.push(action);
                SubtaskStatus::Done
            }
            _ => SubtaskStatus::Failed,
        };
        plan.subtasks[idx].transition(status).expect("active subtasks finish once");
        out.thoughts.push(format!(
            "SUBTASK {} {} {}",
            subtask.id,
            subtask.objective.canonical(),
            match status {
                SubtaskStatus::Done => "done",
                _ => "failed",
            }
        ));
    }

    let started = Instant::now();
    let answers: Vec<String> = out.actions.iter().map(outcome_text).collect();
    let answers = answers.join(" | ");
    let objective = ObjectiveLine::new("summarize").field("answers", &answers).to_string();
    let bundle = PromptBundle::new(Phase::Execute, ctx.memory_text, &ctx.percept.rendered_text, &objective, &ctx.instruction.raw);
    let reply = ctx.backend.complete(&bundle, ctx.params)?;
    let text = match parse_action_reply(&reply, SUMMARY_SUBTASK, 1, scene, ctx.percept) {
        Ok(AgentAction {
            kind: ActionKind::Respond { text },
            ..
        }) => text,
        Ok(AgentAction {
            kind: ActionKind::Clarify { question },
            ..
        }) => question,
        _ => answers,
    };
    out.actions
        .push(AgentAction::new(ActionKind::Respond { text }, SUMMARY_SUBTASK, 1));
    out.summary_ms = ms(started);
    Ok(out)
}
