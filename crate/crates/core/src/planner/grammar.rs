//! Recursive-descent parser for the instruction grammar.
//!
//! ```text
//! command := clause { (" and " | " then ") clause }
//! clause  := "point to " desc | "describe " desc | "count " desc
//!          | "move " desc " to " rel " " desc
//!          | "is " desc " " rel " " desc | "what is " rel " " desc
//! rel     := "left of" | "right of" | "above" | "below" | "inside" | "containing"
//! desc    := ["the "] {attr " "} category [" that is " rel " " desc] | "it" | "that one"
//! ```
//!
//! Matching is case-insensitive, tolerant of repeated whitespace and of
//! trailing `.`, `?` or `!`.

use serde::{Deserialize, Serialize};

use super::{Connective, EntityQuery, Instruction, Intent, Pronoun, RelativeClause, Verb};
use crate::backend::{BackendError, CompletionParams, ModelBackend, Phase, PromptBundle};
use crate::world::SpatialRelation;

/// Words that can never be an attribute or a category.
pub const RESERVED: &[&str] = &[
    "to", "of", "and", "then", "that", "is", "it", "the", "left", "right", "above", "below", "inside",
    "containing", "what", "point", "describe", "count", "move",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    #[default]
    Grammar,
    Backend,
}

struct Cursor<'a> {
    toks: &'a [String],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&str> {
        self.toks.get(self.pos).map(String::as_str)
    }

    fn peek_at(&self, k: usize) -> Option<&str> {
        self.toks.get(self.pos + k).map(String::as_str)
    }

    fn eat(&mut self, word: &str) -> bool {
        if self.peek() == Some(word) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, word: &str) -> Option<()> {
        self.eat(word).then_some(())
    }

    fn done(&self) -> bool {
        self.pos >= self.toks.len()
    }
}

fn is_reserved(w: &str) -> bool {
    RESERVED.contains(&w)
}

fn rel(c: &mut Cursor) -> Option<SpatialRelation> {
    let r = match c.peek()? {
        "left" => {
            c.pos += 1;
            c.expect("of")?;
            SpatialRelation::LeftOf
        }
        "right" => {
            c.pos += 1;
            c.expect("of")?;
            SpatialRelation::RightOf
        }
        "above" => {
            c.pos += 1;
            SpatialRelation::Above
        }
        "below" => {
            c.pos += 1;
            SpatialRelation::Below
        }
        "inside" => {
            c.pos += 1;
            SpatialRelation::Inside
        }
        "containing" => {
            c.pos += 1;
            SpatialRelation::Contains
        }
        _ => return None,
    };
    Some(r)
}

fn desc(c: &mut Cursor) -> Option<EntityQuery> {
    if c.eat("it") {
        return Some(EntityQuery::Pronoun { pronoun: Pronoun::It });
    }
    if c.peek() == Some("that") && c.peek_at(1) == Some("one") {
        c.pos += 2;
        return Some(EntityQuery::Pronoun {
            pronoun: Pronoun::ThatOne,
        });
    }
    c.eat("the");
    let mut words = Vec::new();
    while let Some(w) = c.peek() {
        if is_reserved(w) {
            break;
        }
        words.push(w.to_string());
        c.pos += 1;
    }
    let category = words.pop()?;
    let relative = if c.peek() == Some("that") && c.peek_at(1) == Some("is") {
        c.pos += 2;
        let relation = rel(c)?;
        let object = desc(c)?;
        Some(Box::new(RelativeClause { relation, object }))
    } else {
        None
    };
    Some(EntityQuery::Description {
        attributes: words,
        category,
        relative,
    })
}

fn clause(c: &mut Cursor) -> Option<Intent> {
    let intent = match c.peek()? {
        "point" => {
            c.pos += 1;
            c.expect("to")?;
            Intent::new(Verb::Point, Some(desc(c)?), None, None)
        }
        "describe" => {
            c.pos += 1;
            Intent::new(Verb::Describe, Some(desc(c)?), None, None)
        }
        "count" => {
            c.pos += 1;
            Intent::new(Verb::Count, Some(desc(c)?), None, None)
        }
        "move" => {
            c.pos += 1;
            let target = desc(c)?;
            c.expect("to")?;
            let r = rel(c)?;
            let object = desc(c)?;
            Intent::new(Verb::Move, Some(target), Some(r), Some(object))
        }
        "is" => {
            c.pos += 1;
            let target = desc(c)?;
            let r = rel(c)?;
            let object = desc(c)?;
            Intent::new(Verb::QueryRelation, Some(target), Some(r), Some(object))
        }
        "what" => {
            c.pos += 1;
            c.expect("is")?;
            let r = rel(c)?;
            let object = desc(c)?;
            Intent::new(Verb::QueryWhat, None, Some(r), Some(object))
        }
        _ => return None,
    };
    Some(intent)
}

fn normalize(text: &str) -> Vec<String> {
    let trimmed = text.trim().trim_end_matches(['.', '?', '!']);
    trimmed.split_whitespace().map(str::to_lowercase).collect()
}

/// Strict grammar parse; `None` when any clause fails.
pub fn parse_grammar(text: &str) -> Option<Vec<Intent>> {
    let toks = normalize(text);
    let mut c = Cursor { toks: &toks, pos: 0 };
    let mut out = vec![clause(&mut c)?];
    while !c.done() {
        let conn = if c.eat("and") {
            Connective::And
        } else if c.eat("then") {
            Connective::Then
        } else {
            return None;
        };
        let mut next = clause(&mut c)?;
        next.connective = conn;
        out.push(next);
    }
    Some(out)
}

/// Total parse: unparseable input yields a single clarify intent.
pub fn parse_command(text: &str) -> Vec<Intent> {
    parse_grammar(text).unwrap_or_else(|| vec![Intent::clarify()])
}

pub fn parse_instruction(instruction: &Instruction) -> Vec<Intent> {
    parse_command(&instruction.raw)
}

/// Validates a model's parse reply by re-reading it with the grammar.
pub fn parse_reply_intents(reply: &str) -> Vec<Intent> {
    let line = reply.trim();
    let line = line.strip_prefix("PARSE ").unwrap_or(line);
    parse_command(line)
}

/// Backend-delegated parse: the model rewrites the request into grammar form.
pub fn parse_with_backend(
    instruction: &Instruction,
    backend: &dyn ModelBackend,
    params: &CompletionParams,
    context: &str,
    percept: &str,
) -> Result<Vec<Intent>, BackendError> {
    let bundle = PromptBundle::new(Phase::Parse, context, percept, &instruction.raw, &instruction.raw);
    let reply = backend.complete(&bundle, params)?;
    Ok(parse_reply_intents(&reply))
}
