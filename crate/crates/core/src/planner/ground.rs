//! Grounding a subtask against the current scene: resolve its phrases,
//! precompute answers or destinations, and state what a correct action
//! looks like.
//!
//! The result is rendered as an objective line for the model, e.g.
//! `point; label=the red ball; target=e1`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::reason::{describe_entity, place_relative, reason};
use super::reference::{resolve_reference, ResolveContext};
use super::{rel_phrase, EntityQuery, Intent, Objective, PlanError, Subtask, Verb};
use crate::executor::{ActionTag, Expectation};
use crate::memory::MemoryState;
use crate::perception::Percept;
use crate::world::SceneWorld;

/// `verb; key=value; ...` with keys in sorted order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ObjectiveLine {
    pub verb: String,
    pub fields: BTreeMap<String, String>,
}

impl ObjectiveLine {
    pub fn new(verb: &str) -> Self {
        Self {
            verb: verb.to_string(),
            fields: BTreeMap::new(),
        }
    }

    pub fn field(mut self, key: &str, value: impl Into<String>) -> Self {
        self.fields.insert(key.to_string(), value.into());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.get(key).map(String::as_str)
    }

    /// Parses a line written by `Display`; `None` if a field lacks `=`.
    pub fn parse(line: &str) -> Option<Self> {
        let mut parts = line.split("; ");
        let verb = parts.next()?.trim().to_string();
        if verb.is_empty() || verb.contains('=') {
            return None;
        }
        let mut fields = BTreeMap::new();
        for p in parts {
            let (k, v) = p.split_once('=')?;
            fields.insert(k.to_string(), v.to_string());
        }
        Some(Self { verb, fields })
    }
}

impl fmt::Display for ObjectiveLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.verb)?;
        for (k, v) in &self.fields {
            write!(f, "; {k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grounding {
    pub objective: ObjectiveLine,
    pub expectation: Option<Expectation>,
    /// Facts established while grounding, as memory thoughts (`REL ...`).
    pub thoughts: Vec<String>,
    /// Entity the subtask is about, bound by later pronouns in the turn.
    pub resolved: Option<String>,
}

impl Grounding {
    fn clarify(question: impl Into<String>) -> Self {
        Self {
            objective: ObjectiveLine::new("clarify").field("question", question),
            expectation: Some(Expectation::ActionKind { kind: ActionTag::Clarify }),
            thoughts: Vec::new(),
            resolved: None,
        }
    }

    pub fn is_clarification(&self) -> bool {
        self.objective.verb == "clarify"
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GroundContext<'a> {
    pub resolve: ResolveContext<'a>,
}

impl<'a> GroundContext<'a> {
    pub fn new(memory: &'a MemoryState, percept: &'a Percept, scene: &'a SceneWorld, margin: f64, recent: Option<&'a str>) -> Self {
        Self {
            resolve: ResolveContext::new(memory, percept, scene, margin).with_recent(recent),
        }
    }
}

fn question_for(err: &PlanError, q: Option<&EntityQuery>) -> String {
    match (err, q) {
        (PlanError::UnresolvedReference(m), _) if m == "it" || m == "that one" => {
            format!("what does \"{m}\" refer to?")
        }
        (PlanError::UnresolvedReference(m), _) => format!("I cannot find {m}; which one do you mean?"),
        (PlanError::DepthExceeded(_), _) => "that question chains too many relations; can you split it?".to_string(),
        (_, Some(q)) => format!("I cannot work out {}", q.canonical()),
        _ => "could you rephrase that?".to_string(),
    }
}

/// With detections requested, an entity must actually have been detected
/// before the agent may act on it.
fn located(percept: &Percept, id: &str) -> bool {
    !percept.tools_used || percept.detection_for(id).is_some()
}

fn resolve_located(q: &EntityQuery, ctx: &ResolveContext, exclude: &[String]) -> Result<String, Grounding> {
    let id = resolve_reference(q, ctx, exclude).map_err(|e| Grounding::clarify(question_for(&e, Some(q))))?;
    if !located(ctx.percept, &id) {
        return Err(Grounding::clarify(format!("I cannot locate {} in the view", q.canonical())));
    }
    Ok(id)
}

fn facts(answer_hops: &[super::Hop]) -> Vec<String> {
    let mut out: Vec<String> = answer_hops.iter().filter(|h| h.holds).map(|h| h.to_string()).collect();
    out.dedup();
    out
}

fn ground_intent(intent: &Intent, ctx: &GroundContext) -> Result<Grounding, Grounding> {
    let rc = &ctx.resolve;
    let label = intent.target.as_ref().map(EntityQuery::canonical).unwrap_or_default();
    match intent.verb {
        Verb::Point => {
            let q = intent.target.as_ref().ok_or_else(|| Grounding::clarify("point to what?"))?;
            let id = resolve_located(q, rc, &[])?;
            Ok(Grounding {
                objective: ObjectiveLine::new("point").field("target", &id).field("label", label),
                expectation: Some(Expectation::EntityResolved { id: id.clone() }),
                thoughts: Vec::new(),
                resolved: Some(id),
            })
        }
        Verb::Describe => {
            let q = intent.target.as_ref().ok_or_else(|| Grounding::clarify("describe what?"))?;
            let id = resolve_located(q, rc, &[])?;
            let entity = rc.scene.get(&id).expect("resolved ids are in the scene");
            let answer = describe_entity(entity);
            Ok(Grounding {
                objective: ObjectiveLine::new("describe")
                    .field("target", &id)
                    .field("label", label)
                    .field("answer", &answer),
                expectation: Some(Expectation::AnswerEquals { value: answer }),
                thoughts: Vec::new(),
                resolved: Some(id),
            })
        }
        Verb::Count | Verb::QueryWhat | Verb::QueryRelation => {
            let answer = reason(intent, rc).map_err(|e| Grounding::clarify(question_for(&e, intent.target.as_ref())))?;
            let resolved = if intent.verb == Verb::QueryRelation {
                answer.derivation.last().map(|h| h.a.clone())
            } else {
                None
            };
            Ok(Grounding {
                objective: ObjectiveLine::new(intent.verb.as_str())
                    .field("question", intent.canonical())
                    .field("answer", &answer.value),
                expectation: Some(Expectation::AnswerEquals { value: answer.value }),
                thoughts: facts(&answer.derivation),
                resolved,
            })
        }
        Verb::Move => {
            let (Some(t), Some(rel), Some(o)) = (&intent.target, intent.relation, &intent.object2) else {
                return Err(Grounding::clarify("move what where?"));
            };
            let b = resolve_reference(o, rc, &[]).map_err(|e| Grounding::clarify(question_for(&e, Some(o))))?;
            let a = resolve_located(t, rc, std::slice::from_ref(&b))?;
            let dest = place_relative(rc.scene, &a, rel, &b, rc.margin)
                .ok_or_else(|| Grounding::clarify(format!("there is no room to put {} {} {}", t.canonical(), rel_phrase(rel), o.canonical())))?;
            let d = dest.to_array();
            Ok(Grounding {
                objective: ObjectiveLine::new("move")
                    .field("target", &a)
                    .field("dest", format!("{} {} {} {}", d[0], d[1], d[2], d[3]))
                    .field("relation", rel.as_str())
                    .field("reference", &b),
                expectation: Some(Expectation::RelationAfter {
                    rel,
                    a: a.clone(),
                    b: b.clone(),
                }),
                thoughts: vec![format!("REL {rel} {a} {b}")],
                resolved: Some(a),
            })
        }
        Verb::ClarifyNeeded => Err(Grounding::clarify("could you rephrase that?")),
    }
}

/// Grounds one subtask. Failures become a clarification objective rather than an error.
pub fn ground_subtask(subtask: &Subtask, ctx: &GroundContext) -> Grounding {
    match &subtask.objective {
        Objective::PassThrough(raw) => Grounding {
            objective: ObjectiveLine::new("passthrough").field("request", raw),
            expectation: None,
            thoughts: Vec::new(),
            resolved: None,
        },
        Objective::Intent(intent) => ground_intent(intent, ctx).unwrap_or_else(|g| g),
    }
}
