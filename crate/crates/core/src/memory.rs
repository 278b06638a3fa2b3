//! Hierarchical dialogue memory.
//!
//! Entries live in a short tier holding the last `k_turns` turns and a long
//! tier for entities and facts that proved to matter. Each turn appends the
//! instruction, a summary of the agent's actions and its intermediate
//! thoughts; entity mentions are tracked in one entry per entity whose
//! mention count drives promotion.
//!
//! Salience of an entry `e` at turn `t`:
//!
//! ```text
//! salience = w_r * exp(-decay * (t - e.turn_created)) + w_m * min(1, e.mention_count / 3)
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::AgentAction;
use crate::planner::Instruction;
use crate::text::{bracketed_ids, tokens};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryKind {
    Utterance,
    AgentResponse,
    EntityMention,
    SpatialFact,
    SubtaskState,
    Reflection,
}

impl EntryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntryKind::Utterance => "utterance",
            EntryKind::AgentResponse => "agent-response",
            EntryKind::EntityMention => "entity-mention",
            EntryKind::SpatialFact => "spatial-fact",
            EntryKind::SubtaskState => "subtask-state",
            EntryKind::Reflection => "reflection",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Short,
    Long,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub id: String,
    pub kind: EntryKind,
    pub content: String,
    pub entity_refs: Vec<String>,
    pub turn_created: u32,
    pub last_accessed: u32,
    pub mention_count: u32,
    pub salience: f64,
    pub tier: Tier,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid memory config: {0}")]
pub struct MemoryConfigError(String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryConfig {
    pub k_turns: u32,
    pub promote_mentions: u32,
    pub recency_weight: f64,
    pub mention_weight: f64,
    pub decay: f64,
    pub retrieval_budget: usize,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            k_turns: 4,
            promote_mentions: 2,
            recency_weight: 0.5,
            mention_weight: 0.5,
            decay: 0.3,
            retrieval_budget: 12,
        }
    }
}

impl MemoryConfig {
    pub fn validate(&self) -> Result<(), MemoryConfigError> {
        if self.k_turns < 1 {
            return Err(MemoryConfigError("k_turns must be >= 1".into()));
        }
        if self.promote_mentions < 1 {
            return Err(MemoryConfigError("promote_mentions must be >= 1".into()));
        }
        if self.retrieval_budget < 1 {
            return Err(MemoryConfigError("retrieval_budget must be >= 1".into()));
        }
        let weights_ok = self.recency_weight >= 0.0
            && self.mention_weight >= 0.0
            && ((self.recency_weight + self.mention_weight) - 1.0).abs() < 1e-9;
        if !weights_ok {
            return Err(MemoryConfigError("salience weights must be >= 0 and sum to 1".into()));
        }
        if self.decay.is_nan() || self.decay < 0.0 {
            return Err(MemoryConfigError("decay must be >= 0".into()));
        }
        Ok(())
    }

    pub fn salience(&self, age_turns: u32, mention_count: u32) -> f64 {
        let recency = (-self.decay * f64::from(age_turns)).exp();
        let mentions = (f64::from(mention_count) / 3.0).min(1.0);
        (self.recency_weight * recency + self.mention_weight * mentions).clamp(0.0, 1.0)
    }
}

/// JSON export shape used by the service and the console.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorySnapshot {
    pub short: Vec<MemoryEntry>,
    pub long: Vec<MemoryEntry>,
    pub current_turn: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryState {
    short: Vec<MemoryEntry>,
    /// Sorted by entry id; ids double as the entity/topic key.
    long: Vec<MemoryEntry>,
    config: MemoryConfig,
    current_turn: u32,
}

impl Default for MemoryState {
    fn default() -> Self {
        Self::new(MemoryConfig::default())
    }
}

pub fn entity_entry_id(entity: &str) -> String {
    format!("entity:{entity}")
}

impl MemoryState {
    pub fn new(config: MemoryConfig) -> Self {
        Self {
            short: Vec::new(),
            long: Vec::new(),
            config,
            current_turn: 0,
        }
    }

    /// Builds a state from raw parts; used by tests and oracles.
    pub fn from_parts(
        short: Vec<MemoryEntry>,
        mut long: Vec<MemoryEntry>,
        config: MemoryConfig,
        current_turn: u32,
    ) -> Self {
        long.sort_by(|a, b| a.id.cmp(&b.id));
        Self {
            short,
            long,
            config,
            current_turn,
        }
    }

    pub fn config(&self) -> &MemoryConfig {
        &self.config
    }

    pub fn current_turn(&self) -> u32 {
        self.current_turn
    }

    pub fn short(&self) -> &[MemoryEntry] {
        &self.short
    }

    pub fn long(&self) -> &[MemoryEntry] {
        &self.long
    }

    pub fn is_empty(&self) -> bool {
        self.short.is_empty() && self.long.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.short.iter().chain(self.long.iter())
    }

    pub fn get(&self, id: &str) -> Option<&MemoryEntry> {
        self.entries().find(|e| e.id == id)
    }

    fn get_mut(&mut self, id: &str) -> Option<&mut MemoryEntry> {
        self.short
            .iter_mut()
            .chain(self.long.iter_mut())
            .find(|e| e.id == id)
    }

    pub fn snapshot(&self) -> MemorySnapshot {
        MemorySnapshot {
            short: self.short.clone(),
            long: self.long.clone(),
            current_turn: self.current_turn,
        }
    }

    /// Highest salience among entries that reference `entity`.
    pub fn strongest_salience(&self, entity: &str) -> Option<f64> {
        self.entries()
            .filter(|e| e.entity_refs.iter().any(|r| r == entity))
            .map(|e| e.salience)
            .max_by(f64::total_cmp)
    }

    /// True if a long-tier entry references `entity`.
    pub fn in_long_tier(&self, entity: &str) -> bool {
        self.long
            .iter()
            .any(|e| e.entity_refs.iter().any(|r| r == entity))
    }

    /// Salience of the entity's own mention entry.
    pub fn mention_salience(&self, entity: &str) -> Option<f64> {
        self.get(&entity_entry_id(entity)).map(|e| e.salience)
    }

    /// Latest turn in which any entry referencing `entity` was created.
    pub fn last_mention_turn(&self, entity: &str) -> Option<u32> {
        self.entries()
            .filter(|e| e.entity_refs.iter().any(|r| r == entity))
            .map(|e| e.turn_created)
            .max()
    }

    fn push_short(&mut self, id: String, kind: EntryKind, content: String, refs: Vec<String>, turn: u32) {
        self.short.push(MemoryEntry {
            id,
            kind,
            content,
            entity_refs: refs,
            turn_created: turn,
            last_accessed: turn,
            mention_count: 1,
            salience: 0.0,
            tier: Tier::Short,
        });
    }

    /// Bumps an existing entry's mention count, or creates it in the short tier.
    fn mention(&mut self, id: String, kind: EntryKind, content: String, refs: Vec<String>, turn: u32) {
        if let Some(e) = self.get_mut(&id) {
            e.mention_count += 1;
            e.last_accessed = turn;
        } else {
            self.push_short(id, kind, content, refs, turn);
        }
    }

    fn promote(&mut self, entry: MemoryEntry) {
        let mut entry = entry;
        entry.tier = Tier::Long;
        let pos = self.long.partition_point(|e| e.id < entry.id);
        self.long.insert(pos, entry);
    }

    /// One-turn memory update from the instruction, the turn's actions and
    /// the intermediate thoughts produced while planning and executing.
    ///
    /// Thoughts starting with `REL ` become spatial facts, `SUBTASK ` become
    /// subtask-state entries and anything else a reflection.
    pub fn update(&self, instruction: &Instruction, actions: &[AgentAction], thoughts: &[String]) -> MemoryState {
        let mut next = self.clone();
        let turn = self.current_turn + 1;
        let cfg = self.config.clone();

        let mut mentions: Vec<String> = Vec::new();
        for a in actions {
            for id in a.referenced_ids() {
                if !mentions.contains(&id) {
                    mentions.push(id);
                }
            }
        }

        next.push_short(
            format!("t{turn}.utterance"),
            EntryKind::Utterance,
            instruction.raw.clone(),
            mentions.clone(),
            turn,
        );
        let summary = actions
            .iter()
            .map(AgentAction::summary)
            .collect::<Vec<_>>()
            .join("; ");
        next.push_short(
            format!("t{turn}.response"),
            EntryKind::AgentResponse,
            summary,
            mentions.clone(),
            turn,
        );

        for (i, thought) in thoughts.iter().enumerate() {
            if let Some(fact) = parse_fact(thought) {
                let (rel, a, b) = fact;
                next.mention(
                    format!("fact:{rel}:{a}:{b}"),
                    EntryKind::SpatialFact,
                    thought.clone(),
                    vec![a.to_string(), b.to_string()],
                    turn,
                );
            } else {
                let kind = if thought.starts_with("SUBTASK ") {
                    EntryKind::SubtaskState
                } else {
                    EntryKind::Reflection
                };
                next.push_short(
                    format!("t{turn}.thought{i}"),
                    kind,
                    thought.clone(),
                    bracketed_ids(thought),
                    turn,
                );
            }
        }

        for id in &mentions {
            next.mention(
                entity_entry_id(id),
                EntryKind::EntityMention,
                format!("entity {id}"),
                vec![id.clone()],
                turn,
            );
        }

        let short = std::mem::take(&mut next.short);
        for entry in short {
            let qualifies = entry.mention_count >= cfg.promote_mentions;
            let expired = entry.turn_created + cfg.k_turns <= turn;
            if qualifies || entry.kind == EntryKind::SpatialFact {
                next.promote(entry);
            } else if expired {
                // evicted: mentions and facts with enough mentions were promoted above
                continue;
            } else {
                next.short.push(entry);
            }
        }

        for e in next.short.iter_mut().chain(next.long.iter_mut()) {
            e.salience = cfg.salience(turn - e.turn_created, e.mention_count);
        }
        next.current_turn = turn;
        next
    }

    /// Ranks entries for prompt assembly and marks them accessed.
    ///
    /// `score = 2 * [entry references a hinted entity] + token overlap ratio + salience`,
    /// ties broken by newer `turn_created` then id.
    pub fn retrieve(&mut self, query: &str, hints: &[String], budget: usize) -> Vec<MemoryEntry> {
        let ranked = rank_entries(self.entries(), query, hints, budget);
        let ids: Vec<String> = ranked.iter().map(|e| e.id.clone()).collect();
        let turn = self.current_turn;
        for e in self.short.iter_mut().chain(self.long.iter_mut()) {
            if ids.contains(&e.id) {
                e.last_accessed = turn.max(e.turn_created);
            }
        }
        ranked
            .into_iter()
            .map(|mut e| {
                e.last_accessed = turn.max(e.turn_created);
                e
            })
            .collect()
    }
}

/// Free-function form of [`MemoryState::update`].
pub fn update_memory(
    prev: &MemoryState,
    instruction: &Instruction,
    actions: &[AgentAction],
    thoughts: &[String],
) -> MemoryState {
    prev.update(instruction, actions, thoughts)
}

fn parse_fact(thought: &str) -> Option<(&str, &str, &str)> {
    let mut parts = thought.strip_prefix("REL ")?.split_whitespace();
    let rel = parts.next()?;
    let a = parts.next()?;
    let b = parts.next()?;
    if parts.next().is_some() {
        return None;
    }
    Some((rel, a, b))
}

/// Fraction of distinct query tokens that also occur in `content`.
pub fn overlap_ratio(query_tokens: &[String], content: &str) -> f64 {
    let mut q: Vec<&String> = query_tokens.iter().collect();
    q.sort();
    q.dedup();
    if q.is_empty() {
        return 0.0;
    }
    let content_tokens = tokens(content);
    let hits = q.iter().filter(|t| content_tokens.contains(t)).count();
    hits as f64 / q.len() as f64
}

fn rank_entries<'a>(
    entries: impl Iterator<Item = &'a MemoryEntry>,
    query: &str,
    hints: &[String],
    budget: usize,
) -> Vec<MemoryEntry> {
    let query_tokens = tokens(query);
    let mut scored: Vec<(f64, &MemoryEntry)> = entries
        .map(|e| {
            let id_match = e.entity_refs.iter().any(|r| hints.contains(r));
            let score = if id_match { 2.0 } else { 0.0 } + overlap_ratio(&query_tokens, &e.content) + e.salience;
            (score, e)
        })
        .collect();
    scored.sort_by(|(sa, a), (sb, b)| {
        sb.total_cmp(sa)
            .then(b.turn_created.cmp(&a.turn_created))
            .then(a.id.cmp(&b.id))
    });
    scored.into_iter().take(budget).map(|(_, e)| e.clone()).collect()
}

/// One line per entry: `[turn N][kind] content`.
pub fn render_context(entries: &[MemoryEntry]) -> String {
    entries
        .iter()
        .map(|e| format!("[turn {}][{}] {}", e.turn_created, e.kind.as_str(), e.content))
        .collect::<Vec<_>>()
        .join("\n")
}
