use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use super::{canonical_command, Connective, EntityQuery, Intent, PlanError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubtaskStatus {
    Pending,
    Active,
    Done,
    Failed,
}

/// What a subtask asks for: a parsed intent, or the raw request when the
/// planner is bypassed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Intent(Intent),
    PassThrough(String),
}

impl Objective {
    pub fn canonical(&self) -> String {
        match self {
            Objective::Intent(i) => i.canonical(),
            Objective::PassThrough(raw) => raw.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subtask {
    pub id: String,
    pub objective: Objective,
    pub required_percepts: Vec<EntityQuery>,
    pub depends_on: Vec<String>,
    pub status: SubtaskStatus,
}

impl Subtask {
    pub fn new(id: impl Into<String>, objective: Objective) -> Self {
        let required_percepts = match &objective {
            Objective::Intent(i) => i.queries(),
            Objective::PassThrough(_) => Vec::new(),
        };
        Self {
            id: id.into(),
            objective,
            required_percepts,
            depends_on: Vec::new(),
            status: SubtaskStatus::Pending,
        }
    }

    /// Moves along pending -> active -> done|failed; anything else is rejected.
    pub fn transition(&mut self, to: SubtaskStatus) -> Result<(), PlanError> {
        use SubtaskStatus::*;
        let ok = matches!((self.status, to), (Pending, Active) | (Active, Done) | (Active, Failed));
        if !ok {
            return Err(PlanError::InvalidTransition(self.status, to));
        }
        self.status = to;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub subtasks: Vec<Subtask>,
    pub goal: String,
}

impl Plan {
    /// Orders `subtasks` topologically (ties by input position).
    pub fn new(subtasks: Vec<Subtask>, goal: impl Into<String>) -> Result<Self, PlanError> {
        Ok(Self {
            subtasks: topo_order(subtasks)?,
            goal: goal.into(),
        })
    }

    pub fn get(&self, id: &str) -> Option<&Subtask> {
        self.subtasks.iter().find(|s| s.id == id)
    }

    pub fn is_valid(&self) -> bool {
        is_topological(&self.subtasks)
    }
}

/// Stable Kahn sort: among ready subtasks the earliest-created goes first.
pub fn topo_order(subtasks: Vec<Subtask>) -> Result<Vec<Subtask>, PlanError> {
    let index: HashMap<&str, usize> = subtasks.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    let n = subtasks.len();
    let mut indegree = vec![0usize; n];
    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, s) in subtasks.iter().enumerate() {
        for d in &s.depends_on {
            let &j = index
                .get(d.as_str())
                .ok_or_else(|| PlanError::UnknownDependency(s.id.clone(), d.clone()))?;
            indegree[i] += 1;
            dependents[j].push(i);
        }
    }
    let mut ready: BinaryHeap<Reverse<usize>> = (0..n).filter(|&i| indegree[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(i)) = ready.pop() {
        order.push(i);
        for &k in &dependents[i] {
            indegree[k] -= 1;
            if indegree[k] == 0 {
                ready.push(Reverse(k));
            }
        }
    }
    if order.len() != n {
        return Err(PlanError::Cycle);
    }
    let mut slots: Vec<Option<Subtask>> = subtasks.into_iter().map(Some).collect();
    Ok(order.into_iter().map(|i| slots[i].take().expect("each index once")).collect())
}

/// True when every subtask comes after all of its dependencies.
pub fn is_topological(subtasks: &[Subtask]) -> bool {
    let pos: HashMap<&str, usize> = subtasks.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    subtasks.iter().enumerate().all(|(i, s)| {
        s.depends_on
            .iter()
            .all(|d| pos.get(d.as_str()).is_some_and(|&j| j < i))
    })
}

/// One subtask per intent; a `then` clause depends on the clause before it.
pub fn make_plan(intents: &[Intent]) -> Plan {
    let mut subtasks = Vec::with_capacity(intents.len());
    for (i, intent) in intents.iter().enumerate() {
        let mut s = Subtask::new(format!("s{}", i + 1), Objective::Intent(intent.clone()));
        if i > 0 && intent.connective == Connective::Then {
            s.depends_on.push(format!("s{i}"));
        }
        subtasks.push(s);
    }
    Plan::new(subtasks, canonical_command(intents)).expect("chain dependencies are acyclic")
}

/// Single opaque subtask carrying the raw request.
pub fn pass_through_plan(raw: &str) -> Plan {
    Plan {
        subtasks: vec![Subtask::new("s1", Objective::PassThrough(raw.to_string()))],
        goal: raw.to_string(),
    }
}
