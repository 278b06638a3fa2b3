//! Instruction parsing, reference resolution, relational reasoning and plan
//! construction.

mod grammar;
mod ground;
mod plan;
mod reason;
mod reference;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{SpatialRelation, WorldError};

pub use grammar::{
    parse_command, parse_grammar, parse_instruction, parse_reply_intents, parse_with_backend, ParseMode, RESERVED,
};
pub use ground::{ground_subtask, GroundContext, Grounding, ObjectiveLine};
pub use plan::{is_topological, make_plan, pass_through_plan, topo_order, Objective, Plan, Subtask, SubtaskStatus};
pub use reason::{describe_entity, eval_description, place_relative, reason, Answer, Hop, MAX_DEPTH};
pub use reference::{resolve_reference, ResolveContext};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub raw: String,
    pub turn: u32,
}

impl Instruction {
    pub fn new(raw: impl Into<String>, turn: u32) -> Self {
        Self { raw: raw.into(), turn }
    }

    pub fn is_empty(&self) -> bool {
        self.raw.trim().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("cannot resolve `{0}`")]
    UnresolvedReference(String),
    #[error("reasoning depth {0} exceeds the limit of {MAX_DEPTH}")]
    DepthExceeded(usize),
    #[error("dependency cycle among subtasks")]
    Cycle,
    #[error("subtask `{0}` depends on unknown subtask `{1}`")]
    UnknownDependency(String, String),
    #[error("invalid status transition {0:?} -> {1:?}")]
    InvalidTransition(SubtaskStatus, SubtaskStatus),
    #[error("intent `{0}` cannot be answered by reasoning")]
    NotAQuery(String),
    #[error(transparent)]
    World(#[from] WorldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    Point,
    Describe,
    Count,
    Move,
    QueryRelation,
    QueryWhat,
    ClarifyNeeded,
}

impl Verb {
    pub fn as_str(self) -> &'static str {
        match self {
            Verb::Point => "point",
            Verb::Describe => "describe",
            Verb::Count => "count",
            Verb::Move => "move",
            Verb::QueryRelation => "query_relation",
            Verb::QueryWhat => "query_what",
            Verb::ClarifyNeeded => "clarify",
        }
    }
}

/// How a clause attaches to the one before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Connective {
    #[default]
    First,
    And,
    Then,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pronoun {
    It,
    ThatOne,
}

/// A noun phrase naming one or more entities.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EntityQuery {
    Pronoun {
        pronoun: Pronoun,
    },
    Description {
        attributes: Vec<String>,
        category: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        relative: Option<Box<RelativeClause>>,
    },
}

/// `that is <rel> <desc>` attached to a description.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelativeClause {
    pub relation: SpatialRelation,
    pub object: EntityQuery,
}

impl EntityQuery {
    pub fn it() -> Self {
        EntityQuery::Pronoun { pronoun: Pronoun::It }
    }

    pub fn described(attributes: &[&str], category: &str) -> Self {
        EntityQuery::Description {
            attributes: attributes.iter().map(|a| a.to_string()).collect(),
            category: category.to_string(),
            relative: None,
        }
    }

    pub fn with_relative(self, relation: SpatialRelation, object: EntityQuery) -> Self {
        match self {
            EntityQuery::Description { attributes, category, .. } => EntityQuery::Description {
                attributes,
                category,
                relative: Some(Box::new(RelativeClause { relation, object })),
            },
            p => p,
        }
    }

    pub fn is_pronoun(&self) -> bool {
        matches!(self, EntityQuery::Pronoun { .. })
    }

    /// Number of relation hops nested inside this phrase.
    pub fn depth(&self) -> usize {
        match self {
            EntityQuery::Description {
                relative: Some(rc), ..
            } => 1 + rc.object.depth(),
            _ => 0,
        }
    }

    pub fn canonical(&self) -> String {
        match self {
            EntityQuery::Pronoun { pronoun: Pronoun::It } => "it".to_string(),
            EntityQuery::Pronoun {
                pronoun: Pronoun::ThatOne,
            } => "that one".to_string(),
            EntityQuery::Description {
                attributes,
                category,
                relative,
            } => {
                let mut s = String::from("the ");
                for a in attributes {
                    s.push_str(a);
                    s.push(' ');
                }
                s.push_str(category);
                if let Some(rc) = relative {
                    s.push_str(" that is ");
                    s.push_str(rel_phrase(rc.relation));
                    s.push(' ');
                    s.push_str(&rc.object.canonical());
                }
                s
            }
        }
    }
}

impl fmt::Display for EntityQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

pub(crate) fn rel_phrase(rel: SpatialRelation) -> &'static str {
    rel.phrase().unwrap_or("overlapping")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Intent {
    pub verb: Verb,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<EntityQuery>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<SpatialRelation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object2: Option<EntityQuery>,
    #[serde(default)]
    pub connective: Connective,
}

impl Intent {
    pub fn clarify() -> Self {
        Self {
            verb: Verb::ClarifyNeeded,
            target: None,
            relation: None,
            object2: None,
            connective: Connective::First,
        }
    }

    pub fn new(verb: Verb, target: Option<EntityQuery>, relation: Option<SpatialRelation>, object2: Option<EntityQuery>) -> Self {
        Self {
            verb,
            target,
            relation,
            object2,
            connective: Connective::First,
        }
    }

    pub fn then(mut self) -> Self {
        self.connective = Connective::Then;
        self
    }

    pub fn and(mut self) -> Self {
        self.connective = Connective::And;
        self
    }

    /// Clause text in the instruction grammar; `<clarify>` for the sink intent.
    pub fn canonical(&self) -> String {
        let t = || self.target.as_ref().map(EntityQuery::canonical).unwrap_or_default();
        let o = || self.object2.as_ref().map(EntityQuery::canonical).unwrap_or_default();
        let r = || self.relation.map(rel_phrase).unwrap_or_default();
        match self.verb {
            Verb::Point => format!("point to {}", t()),
            Verb::Describe => format!("describe {}", t()),
            Verb::Count => format!("count {}", t()),
            Verb::Move => format!("move {} to {} {}", t(), r(), o()),
            Verb::QueryRelation => format!("is {} {} {}", t(), r(), o()),
            Verb::QueryWhat => format!("what is {} {}", r(), o()),
            Verb::ClarifyNeeded => "<clarify>".to_string(),
        }
    }

    /// Phrases this intent needs grounded, in clause order.
    pub fn queries(&self) -> Vec<EntityQuery> {
        self.target.iter().chain(self.object2.iter()).cloned().collect()
    }
}

/// Re-serializes a parsed command, joining clauses with their connectives.
pub fn canonical_command(intents: &[Intent]) -> String {
    let mut out = String::new();
    for (i, intent) in intents.iter().enumerate() {
        if i > 0 {
            out.push_str(match intent.connective {
                Connective::Then => " then ",
                _ => " and ",
            });
        }
        out.push_str(&intent.canonical());
    }
    out
}
