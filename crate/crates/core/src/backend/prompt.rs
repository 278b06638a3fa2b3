use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Parse,
    Reason,
    Execute,
    Correct,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Parse => "parse",
            Phase::Reason => "reason",
            Phase::Execute => "execute",
            Phase::Correct => "correct",
        }
    }

    fn system_template(self) -> &'static str {
        match self {
            Phase::Parse => {
                "You rewrite a user request about a scene into the command grammar. \
                 Clauses: point to <desc> | describe <desc> | count <desc> | move <desc> to <rel> <desc> | \
                 is <desc> <rel> <desc> | what is <rel> <desc>, joined by \"and\" or \"then\". \
                 Relations: left of, right of, above, below, inside, containing. \
                 Reply with the command only."
            }
            Phase::Reason => {
                "You answer questions about spatial relations among the entities listed in the percept. \
                 Reply with ACT SAY <answer>."
            }
            Phase::Execute => {
                "You are a visually grounded assistant carrying out one objective. \
                 Reply with exactly one line: ACT POINT <id> | ACT MOVE <id> <x> <y> <w> <h> | \
                 ACT SAY <text> | ACT ASK <text>. Refer to entities as [id]."
            }
            Phase::Correct => {
                "Your previous action for this objective was wrong; the mismatch is listed in the context. \
                 Reply with one corrected line: ACT POINT <id> | ACT MOVE <id> <x> <y> <w> <h> | \
                 ACT SAY <text> | ACT ASK <text>."
            }
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything sent to the model for one call.
///
/// `instruction` carries the objective line for execute/correct calls;
/// `request` is the user's raw utterance for the turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub context: String,
    pub percept: String,
    pub instruction: String,
    pub request: String,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl PromptBundle {
    pub fn new(phase: Phase, context: &str, percept: &str, instruction: &str, request: &str) -> Self {
        Self {
            system: phase.system_template().to_string(),
            context: context.to_string(),
            percept: percept.to_string(),
            instruction: instruction.to_string(),
            request: request.to_string(),
            phase,
        }
    }

    pub fn user_text(&self) -> String {
        format!(
            "## memory\n{}\n## percept\n{}\n## request\n{}\n## objective\n{}",
            self.context, self.percept, self.request, self.instruction
        )
    }

    pub fn messages(&self) -> Vec<Message> {
        vec![
            Message {
                role: "system".into(),
                content: self.system.clone(),
            },
            Message {
                role: "user".into(),
                content: self.user_text(),
            },
        ]
    }
}
