use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::ScriptedTurn;
use crate::executor::ActionTag;
use crate::world::{apply_events, SceneWorld, SpatialRelation, WorldEvent, DEFAULT_MARGIN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    VisualEntityTracking,
    DialogueConsistency,
    ReasoningDepth,
    InstructionAdherence,
    ErrorSuppression,
    ResponseFluency,
}

impl Dimension {
    pub const ALL: [Dimension; 6] = [
        Dimension::VisualEntityTracking,
        Dimension::DialogueConsistency,
        Dimension::ReasoningDepth,
        Dimension::InstructionAdherence,
        Dimension::ErrorSuppression,
        Dimension::ResponseFluency,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::VisualEntityTracking => "visual_entity_tracking",
            Dimension::DialogueConsistency => "dialogue_consistency",
            Dimension::ReasoningDepth => "reasoning_depth",
            Dimension::InstructionAdherence => "instruction_adherence",
            Dimension::ErrorSuppression => "error_suppression",
            Dimension::ResponseFluency => "response_fluency",
        }
    }

    /// Column header used in the text tables.
    pub fn short_name(self) -> &'static str {
        match self {
            Dimension::VisualEntityTracking => "Tracking",
            Dimension::DialogueConsistency => "Consist.",
            Dimension::ReasoningDepth => "Reason.",
            Dimension::InstructionAdherence => "Adher.",
            Dimension::ErrorSuppression => "ErrSup.",
            Dimension::ResponseFluency => "Fluency",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CheckKind {
    /// Some subtask action grounds on `entity`.
    ResolveEntity { entity: String },
    /// Some subtask response text equals `value`.
    AnswerEquals { value: String },
    /// Subtask action kinds, in plan order.
    ActionSequence { kinds: Vec<ActionTag> },
    /// The relation holds in the scene after the turn.
    RelationAfter { relation: SpatialRelation, a: String, b: String },
    /// Every id named by the turn's actions is visible; with
    /// `forbid_grounding`, the turn must not ground on anything at all.
    NoHallucination {
        #[serde(default)]
        forbid_grounding: bool,
    },
    /// First subtask responses of turns `turn_i` and `turn_j` agree.
    ConsistencyPair { turn_i: u32, turn_j: u32 },
}

impl CheckKind {
    pub fn name(&self) -> &'static str {
        match self {
            CheckKind::ResolveEntity { .. } => "resolve_entity",
            CheckKind::AnswerEquals { .. } => "answer_equals",
            CheckKind::ActionSequence { .. } => "action_sequence",
            CheckKind::RelationAfter { .. } => "relation_after",
            CheckKind::NoHallucination { .. } => "no_hallucination",
            CheckKind::ConsistencyPair { .. } => "consistency_pair",
        }
    }

    /// Dimensions a check of this kind may be filed under.
    pub fn allowed_dimensions(&self) -> &'static [Dimension] {
        use Dimension::*;
        match self {
            CheckKind::ResolveEntity { .. } => &[VisualEntityTracking],
            CheckKind::AnswerEquals { .. } => &[ReasoningDepth, VisualEntityTracking, DialogueConsistency],
            CheckKind::ActionSequence { .. } => &[InstructionAdherence, ErrorSuppression],
            CheckKind::RelationAfter { .. } => &[InstructionAdherence, ReasoningDepth],
            CheckKind::NoHallucination { .. } => &[ErrorSuppression],
            CheckKind::ConsistencyPair { .. } => &[DialogueConsistency],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub dimension: Dimension,
    #[serde(flatten)]
    pub kind: CheckKind,
    /// Turn in which the referent was last mentioned, for anaphoric checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub antecedent_turn: Option<u32>,
}

impl Check {
    pub fn new(dimension: Dimension, kind: CheckKind) -> Self {
        Self {
            dimension,
            kind,
            antecedent_turn: None,
        }
    }

    pub fn with_antecedent(mut self, turn: u32) -> Self {
        self.antecedent_turn = Some(turn);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTurn {
    #[serde(default)]
    pub events: Vec<WorldEvent>,
    pub instruction: String,
    /// Annotated canonical clauses; empty means unannotated.
    #[serde(default)]
    pub intents: Vec<String>,
    /// Intended referent of each clause's target, parallel to `intents`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub targets: Vec<Option<String>>,
    #[serde(default)]
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub scene: SceneWorld,
    pub turns: Vec<ScenarioTurn>,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_margin() -> f64 {
    DEFAULT_MARGIN
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("scenario json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("scenario `{id}`: {msg}")]
    Invalid { id: String, msg: String },
}

impl Scenario {
    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }

    pub fn scripted_turns(&self) -> Vec<ScriptedTurn> {
        self.turns
            .iter()
            .map(|t| ScriptedTurn {
                events: t.events.clone(),
                instruction: t.instruction.clone(),
            })
            .collect()
    }

    pub fn check_count(&self) -> usize {
        self.turns.iter().map(|t| t.checks.len()).sum()
    }

    /// Load-time invariants: dimension/kind compatibility, turn references
    /// in range, events applicable, and every checked id present in the
    /// scene as it evolves through the event batches.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |msg: String| ScenarioError::Invalid {
            id: self.id.clone(),
            msg,
        };
        if self.turns.is_empty() {
            return Err(bad("no turns".into()));
        }
        self.scene.validate().map_err(|e| bad(format!("scene: {e}")))?;
        let mut scene = self.scene.clone();
        for (i, turn) in self.turns.iter().enumerate() {
            let n = i as u32 + 1;
            scene = apply_events(&scene, &turn.events).map_err(|e| bad(format!("turn {n} events: {e}")))?;
            if !turn.targets.is_empty() && turn.targets.len() != turn.intents.len() {
                return Err(bad(format!("turn {n}: targets and intents differ in length")));
            }
            for c in &turn.checks {
                if !c.kind.allowed_dimensions().contains(&c.dimension) {
                    return Err(bad(format!("turn {n}: {} cannot score {}", c.kind.name(), c.dimension)));
                }
                if let Some(a) = c.antecedent_turn {
                    if a == 0 || a >= n {
                        return Err(bad(format!("turn {n}: antecedent turn {a} out of range")));
                    }
                }
                let known = |id: &str| scene.get(id).is_some();
                match &c.kind {
                    CheckKind::ResolveEntity { entity } if !known(entity) => {
                        return Err(bad(format!("turn {n}: unknown entity {entity}")));
                    }
                    CheckKind::RelationAfter { a, b, .. } if !known(a) || !known(b) || a == b => {
                        return Err(bad(format!("turn {n}: relation over unknown or equal ids {a}, {b}")));
                    }
                    CheckKind::ConsistencyPair { turn_i, turn_j } if *turn_j != n || *turn_i == 0 || turn_i >= turn_j => {
                        return Err(bad(format!("turn {n}: consistency pair ({turn_i}, {turn_j}) must end at this turn")));
                    }
                    CheckKind::ActionSequence { kinds } if kinds.is_empty() => {
                        return Err(bad(format!("turn {n}: empty action sequence")));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenarios always serialize")
    }
}

/// Loads `dir/*.json` (or `dir/scenarios/*.json` when present), sorted by file name.
pub fn load_dir(dir: &Path) -> Result<Vec<Scenario>, ScenarioError> {
    let nested = dir.join("scenarios");
    let dir = if nested.is_dir() { nested } else { dir.to_path_buf() };
    let io = |source| ScenarioError::Io {
        path: dir.clone(),
        source,
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| Scenario::load(p)).collect()
}

/// Writes each scenario to `dir/<id>.json`.
pub fn write_dir(dir: &Path, scenarios: &[Scenario]) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for s in scenarios {
        std::fs::write(dir.join(format!("{}.json", s.id)), s.to_json() + "\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{BBox, Entity};

    fn scenario(checks: Vec<Check>) -> Scenario {
        Scenario {
            id: "t".into(),
            scene: SceneWorld::new(vec![
                Entity::new("e1", "ball", BBox::new(0.1, 0.1, 0.1, 0.1).unwrap()),
                Entity::new("e2", "cup", BBox::new(0.5, 0.1, 0.1, 0.1).unwrap()),
            ])
            .unwrap(),
            turns: vec![ScenarioTurn {
                events: vec![],
                instruction: "point to the ball".into(),
                intents: vec!["point to the ball".into()],
                targets: vec![Some("e1".into())],
                checks,
            }],
            tags: vec![],
            margin: DEFAULT_MARGIN,
        }
    }

    #[test]
    fn compatibility_table_enforced() {
        let ok = scenario(vec![Check::new(
            Dimension::VisualEntityTracking,
            CheckKind::ResolveEntity { entity: "e1".into() },
        )]);
        ok.validate().unwrap();
        let wrong = scenario(vec![Check::new(
            Dimension::ErrorSuppression,
            CheckKind::ResolveEntity { entity: "e1".into() },
        )]);
        assert!(wrong.validate().is_err());
        let fluency = scenario(vec![Check::new(
            Dimension::ResponseFluency,
            CheckKind::NoHallucination { forbid_grounding: false },
        )]);
        assert!(fluency.validate().is_err());
    }

    #[test]
    fn rejects_unknown_ids_and_bad_pairs() {
        let s = scenario(vec![Check::new(
            Dimension::VisualEntityTracking,
            CheckKind::ResolveEntity { entity: "e9".into() },
        )]);
        assert!(s.validate().is_err());
        let s = scenario(vec![Check::new(
            Dimension::DialogueConsistency,
            CheckKind::ConsistencyPair { turn_i: 1, turn_j: 1 },
        )]);
        assert!(s.validate().is_err());
    }

    #[test]
    fn check_json_shape() {
        let c = Check::new(
            Dimension::InstructionAdherence,
            CheckKind::ActionSequence {
                kinds: vec![ActionTag::Point, ActionTag::Respond],
            },
        );
        let v = serde_json::to_value(&c).unwrap();
        assert_eq!(v["kind"], "action_sequence");
        assert_eq!(v["kinds"][1], "respond");
        assert_eq!(serde_json::from_value::<Check>(v).unwrap(), c);
    }
}
