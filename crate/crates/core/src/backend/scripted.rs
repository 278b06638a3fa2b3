//! Deterministic rule-driven backend.
//!
//! Rules are tried in order against the bundle's `instruction` (the
//! objective line during execution). A reply template may use `{key}` for
//! any `key=value` field of the objective, `{id}` as an alias for `target`,
//! and `{instruction}` / `{request}` for the raw texts. A rule whose
//! template names a field the objective does not have does not match.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendError, CompletionParams, ModelBackend, Phase, PromptBundle};
use crate::planner::ObjectiveLine;

pub const FALLBACK_REPLY: &str = "ACT ASK unable";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedRule {
    /// Phases the rule applies to; empty means any.
    #[serde(default)]
    pub phases: Vec<Phase>,
    /// Literal text with `*` wildcards, matched against the whole instruction.
    pub pattern: String,
    pub reply: String,
    #[serde(default)]
    pub consume_once: bool,
}

impl ScriptedRule {
    pub fn new(phases: &[Phase], pattern: &str, reply: &str) -> Self {
        Self {
            phases: phases.to_vec(),
            pattern: pattern.to_string(),
            reply: reply.to_string(),
            consume_once: false,
        }
    }

    pub fn once(mut self) -> Self {
        self.consume_once = true;
        self
    }
}

/// `*` matches any run of characters, everything else matches itself.
pub fn glob_match(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    let (mut pi, mut ti) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && p[pi] == '*' {
            star = Some((pi, ti));
            pi += 1;
        } else if pi < p.len() && p[pi] == t[ti] {
            pi += 1;
            ti += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == '*')
}

fn render(template: &str, bundle: &PromptBundle) -> Option<String> {
    let fields = ObjectiveLine::parse(&bundle.instruction).unwrap_or_default();
    let lookup = |key: &str| -> Option<String> {
        match key {
            "instruction" => Some(bundle.instruction.clone()),
            "request" => Some(bundle.request.clone()),
            "id" => fields.get("target").map(str::to_string),
            k => fields.get(k).map(str::to_string),
        }
    };
    let mut out = String::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}')?;
        out.push_str(&lookup(&after[..close])?);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Some(out)
}

/// Session-local scripted backend; `consume_once` rules fire at most once.
#[derive(Debug)]
pub struct ScriptedBackend {
    rules: Vec<ScriptedRule>,
    consumed: Mutex<Vec<bool>>,
}

impl Clone for ScriptedBackend {
    /// Clones start with every rule available again.
    fn clone(&self) -> Self {
        Self::new(self.rules.clone())
    }
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptedRule>) -> Self {
        let consumed = Mutex::new(vec![false; rules.len()]);
        Self { rules, consumed }
    }

    /// Backend that carries out every grounded objective faithfully.
    pub fn golden() -> Self {
        Self::new(golden_rules())
    }

    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        let rules: Vec<ScriptedRule> =
            serde_json::from_str(text).map_err(|e| BackendError::Config(format!("script file: {e}")))?;
        Ok(Self::new(rules))
    }

    pub fn rules(&self) -> &[ScriptedRule] {
        &self.rules
    }

    /// Rules placed ahead of the golden ones.
    pub fn with_overrides(overrides: Vec<ScriptedRule>) -> Self {
        let mut rules = overrides;
        rules.extend(golden_rules());
        Self::new(rules)
    }
}

impl ModelBackend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, bundle: &PromptBundle, _params: &CompletionParams) -> Result<String, BackendError> {
        let mut consumed = self.consumed.lock().map_err(|_| BackendError::Failure("poisoned rule state".into()))?;
        for (i, rule) in self.rules.iter().enumerate() {
            if consumed[i] {
                continue;
            }
            if !rule.phases.is_empty() && !rule.phases.contains(&bundle.phase) {
                continue;
            }
            if !glob_match(&rule.pattern, &bundle.instruction) {
                continue;
            }
            let Some(reply) = render(&rule.reply, bundle) else {
                continue;
            };
            if rule.consume_once {
                consumed[i] = true;
            }
            return Ok(reply);
        }
        Ok(FALLBACK_REPLY.to_string())
    }
}

pub fn golden_rules() -> Vec<ScriptedRule> {
    let act = [Phase::Execute, Phase::Correct];
    vec![
        ScriptedRule::new(&[Phase::Parse], "*", "{request}"),
        ScriptedRule::new(&act, "point;*", "ACT POINT {target}"),
        ScriptedRule::new(&act, "move;*", "ACT MOVE {target} {dest}"),
        ScriptedRule::new(&act, "describe;*", "ACT SAY {answer}"),
        ScriptedRule::new(&act, "count;*", "ACT SAY {answer}"),
        ScriptedRule::new(&act, "query_relation;*", "ACT SAY {answer}"),
        ScriptedRule::new(&act, "query_what;*", "ACT SAY {answer}"),
        ScriptedRule::new(&act, "clarify;*", "ACT ASK {question}"),
        ScriptedRule::new(&act, "summarize;*", "ACT SAY {answers}"),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(instruction: &str) -> PromptBundle {
        PromptBundle::new(Phase::Execute, "", "", instruction, "point to the red ball")
    }

    fn call(b: &ScriptedBackend, instruction: &str) -> String {
        b.complete(&bundle(instruction), &CompletionParams::default()).unwrap()
    }

    #[test]
    fn globbing() {
        assert!(glob_match("point*red ball*", "point; label=the red ball; target=e1"));
        assert!(glob_match("*", ""));
        assert!(glob_match("a*b*c", "aXXbYYc"));
        assert!(!glob_match("a*b*c", "aXXbYY"));
        assert!(!glob_match("point", "point; x=1"));
    }

    #[test]
    fn rule_substitutes_ids() {
        let b = ScriptedBackend::new(vec![ScriptedRule::new(&[Phase::Execute], "point*red ball*", "ACT POINT {id}")]);
        assert_eq!(call(&b, "point; label=the red ball; target=e1"), "ACT POINT e1");
    }

    #[test]
    fn fallback_and_phase_filter() {
        let b = ScriptedBackend::new(vec![ScriptedRule::new(&[Phase::Correct], "*", "ACT SAY hi")]);
        assert_eq!(call(&b, "anything"), FALLBACK_REPLY);
    }

    #[test]
    fn missing_placeholder_falls_through() {
        let b = ScriptedBackend::new(vec![
            ScriptedRule::new(&[], "*", "ACT POINT {target}"),
            ScriptedRule::new(&[], "*", "ACT SAY {request}"),
        ]);
        assert_eq!(call(&b, "passthrough; request=x"), "ACT SAY point to the red ball");
    }

    #[test]
    fn consume_once_falls_through_on_second_call() {
        let b = ScriptedBackend::new(vec![
            ScriptedRule::new(&[], "count;*", "ACT SAY 99").once(),
            ScriptedRule::new(&[], "count;*", "ACT SAY {answer}"),
        ]);
        assert_eq!(call(&b, "count; answer=3"), "ACT SAY 99");
        assert_eq!(call(&b, "count; answer=3"), "ACT SAY 3");
        assert_eq!(call(&b.clone(), "count; answer=3"), "ACT SAY 99");
    }

    #[test]
    fn script_file_round_trip() {
        let json = r#"[{"phases":["execute"],"pattern":"point;*","reply":"ACT POINT {target}","consume_once":true},
                       {"pattern":"*","reply":"ACT SAY ok"}]"#;
        let b = ScriptedBackend::from_json(json).unwrap();
        assert_eq!(b.rules().len(), 2);
        assert!(b.rules()[1].phases.is_empty());
        assert!(ScriptedBackend::from_json("{").is_err());
    }
}
