//! Check evaluation, per-dimension scores, turn buckets and the error taxonomy.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::scenario::{Check, CheckKind, Dimension, Scenario};
use crate::agent::TurnRecord;
use crate::executor::{ActionKind, ActionTag, AgentAction};
use crate::planner::SubtaskStatus;
use crate::text::bracketed_ids;
use crate::world::relation_holds;

pub const FLUENCY_NOTE: &str = "n/a (human-eval only)";

/// Turns this far behind their antecedent count as long-range references.
pub const LONG_RANGE_GAP: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoreError {
    #[error("transcript does not belong to scenario: {0}")]
    ScenarioMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimScore {
    pub passed: usize,
    pub total: usize,
    pub score: f64,
    /// `1 + 4 * score`.
    pub mapped: f64,
}

impl DimScore {
    pub fn from_counts(passed: usize, total: usize) -> Self {
        let score = if total == 0 { 0.0 } else { passed as f64 / total as f64 };
        Self {
            passed,
            total,
            score,
            mapped: mapped_scale(score),
        }
    }
}

pub fn mapped_scale(score: f64) -> f64 {
    1.0 + 4.0 * score
}

pub type DimensionScores = BTreeMap<Dimension, DimScore>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub turn: u32,
    pub check: Check,
    pub passed: bool,
}

/// Ids an action grounds on: pointed, highlighted or moved entities, or the
/// first `[id]` of a response.
pub fn grounded_ids(action: &AgentAction) -> Vec<String> {
    match &action.kind {
        ActionKind::Point { entity_id, .. } => vec![entity_id.clone()],
        ActionKind::Highlight { entity_ids } => entity_ids.clone(),
        ActionKind::WorldEvent { event } => vec![event.target().to_string()],
        ActionKind::Respond { text } => bracketed_ids(text).into_iter().take(1).collect(),
        ActionKind::Clarify { .. } => Vec::new(),
    }
}

fn first_response(record: &TurnRecord) -> Option<&str> {
    record.subtask_actions().find_map(|a| match &a.kind {
        ActionKind::Respond { text } => Some(text.as_str()),
        _ => None,
    })
}

/// Ids named by any action of the turn that are not visible after it.
pub fn hallucinated_ids(record: &TurnRecord) -> Vec<String> {
    let mut out: Vec<String> = record
        .actions
        .iter()
        .flat_map(AgentAction::referenced_ids)
        .filter(|id| !record.scene_after.is_visible(id))
        .collect();
    out.sort();
    out.dedup();
    out
}

pub fn evaluate_check(check: &Check, turn: u32, transcript: &[TurnRecord], margin: f64) -> bool {
    let Some(record) = transcript.get(turn as usize - 1) else {
        return false;
    };
    match &check.kind {
        CheckKind::ResolveEntity { entity } => record
            .subtask_actions()
            .any(|a| grounded_ids(a).iter().any(|g| g == entity)),
        CheckKind::AnswerEquals { value } => record.subtask_actions().any(|a| match &a.kind {
            ActionKind::Respond { text } => text == value,
            _ => false,
        }),
        CheckKind::ActionSequence { kinds } => {
            let got: Vec<ActionTag> = record.subtask_actions().map(AgentAction::tag).collect();
            &got == kinds
        }
        CheckKind::RelationAfter { relation, a, b } => {
            relation_holds(*relation, a, b, &record.scene_after, margin).unwrap_or(false)
        }
        CheckKind::NoHallucination { forbid_grounding } => {
            let clean = hallucinated_ids(record).is_empty();
            let grounded = record.actions.iter().any(|a| !grounded_ids(a).is_empty());
            clean && !(*forbid_grounding && grounded)
        }
        CheckKind::ConsistencyPair { turn_i, turn_j } => {
            let get = |t: u32| transcript.get(t as usize - 1).and_then(first_response);
            matches!((get(*turn_i), get(*turn_j)), (Some(x), Some(y)) if x == y)
        }
    }
}

fn ensure_matches(transcript: &[TurnRecord], scenario: &Scenario) -> Result<(), ScoreError> {
    if transcript.len() != scenario.turns.len() {
        return Err(ScoreError::ScenarioMismatch(format!(
            "{} turns recorded, scenario `{}` has {}",
            transcript.len(),
            scenario.id,
            scenario.turns.len()
        )));
    }
    for (i, (rec, turn)) in transcript.iter().zip(&scenario.turns).enumerate() {
        if rec.instruction != turn.instruction {
            return Err(ScoreError::ScenarioMismatch(format!("turn {} instruction differs", i + 1)));
        }
    }
    Ok(())
}

pub fn evaluate_checks(transcript: &[TurnRecord], scenario: &Scenario) -> Result<Vec<CheckOutcome>, ScoreError> {
    ensure_matches(transcript, scenario)?;
    let mut out = Vec::with_capacity(scenario.check_count());
    for (i, turn) in scenario.turns.iter().enumerate() {
        let n = i as u32 + 1;
        for check in &turn.checks {
            out.push(CheckOutcome {
                turn: n,
                check: check.clone(),
                passed: evaluate_check(check, n, transcript, scenario.margin),
            });
        }
    }
    Ok(out)
}

/// Passed over total per dimension; dimensions without checks are absent.
pub fn scores_from_outcomes(outcomes: &[CheckOutcome]) -> DimensionScores {
    let mut counts: BTreeMap<Dimension, (usize, usize)> = BTreeMap::new();
    for o in outcomes {
        let c = counts.entry(o.check.dimension).or_default();
        c.1 += 1;
        if o.passed {
            c.0 += 1;
        }
    }
    counts
        .into_iter()
        .map(|(d, (p, t))| (d, DimScore::from_counts(p, t)))
        .collect()
}

pub fn score(transcript: &[TurnRecord], scenario: &Scenario) -> Result<DimensionScores, ScoreError> {
    Ok(scores_from_outcomes(&evaluate_checks(transcript, scenario)?))
}

pub fn bucket_of(turn: u32) -> &'static str {
    match turn {
        0..=3 => "1-3",
        4..=6 => "4-6",
        _ => "7+",
    }
}

pub const BUCKETS: [&str; 3] = ["1-3", "4-6", "7+"];

/// Pooled pass rate of all checks in each turn bucket.
pub fn bucket_scores(outcomes: &[CheckOutcome]) -> BTreeMap<String, DimScore> {
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for o in outcomes {
        let c = counts.entry(bucket_of(o.turn)).or_default();
        c.1 += 1;
        if o.passed {
            c.0 += 1;
        }
    }
    counts
        .into_iter()
        .map(|(b, (p, t))| (b.to_string(), DimScore::from_counts(p, t)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    ContextLoss,
    VisualHallucination,
    InstructionMisinterpretation,
    IncompleteExecution,
    FactualError,
}

impl ErrorKind {
    pub const ALL: [ErrorKind; 5] = [
        ErrorKind::ContextLoss,
        ErrorKind::VisualHallucination,
        ErrorKind::InstructionMisinterpretation,
        ErrorKind::IncompleteExecution,
        ErrorKind::FactualError,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ErrorKind::ContextLoss => "Context Loss",
            ErrorKind::VisualHallucination => "Visual Hallucination",
            ErrorKind::InstructionMisinterpretation => "Instruction Misinterpretation",
            ErrorKind::IncompleteExecution => "Incomplete Execution",
            ErrorKind::FactualError => "Factual Error",
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Turns exhibiting each error type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ErrorCounters {
    pub context_loss: u32,
    pub visual_hallucination: u32,
    pub instruction_misinterpretation: u32,
    pub incomplete_execution: u32,
    pub factual_error: u32,
    pub turns: u32,
}

impl ErrorCounters {
    pub fn get(&self, kind: ErrorKind) -> u32 {
        match kind {
            ErrorKind::ContextLoss => self.context_loss,
            ErrorKind::VisualHallucination => self.visual_hallucination,
            ErrorKind::InstructionMisinterpretation => self.instruction_misinterpretation,
            ErrorKind::IncompleteExecution => self.incomplete_execution,
            ErrorKind::FactualError => self.factual_error,
        }
    }

    fn bump(&mut self, kind: ErrorKind) {
        match kind {
            ErrorKind::ContextLoss => self.context_loss += 1,
            ErrorKind::VisualHallucination => self.visual_hallucination += 1,
            ErrorKind::InstructionMisinterpretation => self.instruction_misinterpretation += 1,
            ErrorKind::IncompleteExecution => self.incomplete_execution += 1,
            ErrorKind::FactualError => self.factual_error += 1,
        }
    }

    /// Share of turns with the error, 0 when no turns were seen.
    pub fn rate(&self, kind: ErrorKind) -> f64 {
        if self.turns == 0 {
            0.0
        } else {
            f64::from(self.get(kind)) / f64::from(self.turns)
        }
    }

    pub fn merge(&mut self, other: &ErrorCounters) {
        self.context_loss += other.context_loss;
        self.visual_hallucination += other.visual_hallucination;
        self.instruction_misinterpretation += other.instruction_misinterpretation;
        self.incomplete_execution += other.incomplete_execution;
        self.factual_error += other.factual_error;
        self.turns += other.turns;
    }
}

/// Error types present in each turn, in turn order. Turns beyond the shorter
/// of transcript and scenario are ignored.
pub fn turn_errors(transcript: &[TurnRecord], scenario: &Scenario) -> Vec<BTreeSet<ErrorKind>> {
    transcript
        .iter()
        .zip(&scenario.turns)
        .enumerate()
        .map(|(i, (rec, turn))| {
            let n = i as u32 + 1;
            let mut errs = BTreeSet::new();
            let outcome = |c: &Check| evaluate_check(c, n, transcript, scenario.margin);
            let mut resolve_failed = false;
            let mut answer_failed = false;
            for c in &turn.checks {
                let passed = outcome(c);
                match &c.kind {
                    CheckKind::ResolveEntity { .. } if !passed => {
                        resolve_failed = true;
                        if c.antecedent_turn.is_some_and(|a| n - a >= LONG_RANGE_GAP) {
                            errs.insert(ErrorKind::ContextLoss);
                        }
                    }
                    CheckKind::AnswerEquals { .. } if !passed => answer_failed = true,
                    CheckKind::NoHallucination { .. } if !passed => {
                        errs.insert(ErrorKind::VisualHallucination);
                    }
                    _ => {}
                }
            }
            if !hallucinated_ids(rec).is_empty() {
                errs.insert(ErrorKind::VisualHallucination);
            }
            if !turn.intents.is_empty() && rec.intents != turn.intents {
                errs.insert(ErrorKind::InstructionMisinterpretation);
            }
            if rec.plan.subtasks.iter().any(|s| s.status == SubtaskStatus::Failed) {
                errs.insert(ErrorKind::IncompleteExecution);
            }
            if answer_failed && !resolve_failed {
                errs.insert(ErrorKind::FactualError);
            }
            errs
        })
        .collect()
}

pub fn classify_errors(transcript: &[TurnRecord], scenario: &Scenario) -> ErrorCounters {
    let mut c = ErrorCounters::default();
    for errs in turn_errors(transcript, scenario) {
        c.turns += 1;
        for e in errs {
            c.bump(e);
        }
    }
    c
}
