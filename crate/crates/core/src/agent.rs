//! One agent step per turn: perceive, retrieve, plan, execute (with
//! verification and correction), memorize. Every phase leaves a
//! [`TraceEvent`]; sinks receive them as they happen.

use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::backend::{BackendError, CompletionParams, ModelBackend};
use crate::executor::{execute_generate, AgentAction, CorrectionPolicy, ExecContext, Verdict};
use crate::memory::{render_context, MemoryConfig, MemorySnapshot, MemoryState};
use crate::perception::{perceive, NoiseProfile, PerceptionConfig, PerceptionFlags, ToolRegistry};
use crate::planner::{
    make_plan, parse_instruction, parse_with_backend, pass_through_plan, Instruction, Intent, ParseMode, Plan,
};
use crate::world::{apply_events, SceneWorld, WorldEvent};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    pub disable_memory: bool,
    pub disable_perception: bool,
    pub disable_planner: bool,
    pub disable_tools: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorConfig {
    #[default]
    Oracle,
    Noisy { drop_prob: f64, jitter: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct AgentConfig {
    pub flags: AblationFlags,
    pub policy: CorrectionPolicy,
    pub memory: MemoryConfig,
    pub perception: PerceptionConfig,
    pub detector: DetectorConfig,
    pub parse_mode: ParseMode,
    pub params: CompletionParams,
}

impl AgentConfig {
    pub fn with_flags(mut self, flags: AblationFlags) -> Self {
        self.flags = flags;
        self
    }

    pub fn tools(&self) -> Result<ToolRegistry, AgentError> {
        let reg = match self.detector {
            DetectorConfig::Oracle => ToolRegistry::with_oracle_detector(),
            DetectorConfig::Noisy { drop_prob, jitter } => {
                ToolRegistry::with_noisy_detector(NoiseProfile { drop_prob, jitter }).map_err(|e| AgentError::Config(e.to_string()))?
            }
        };
        if reg.get(&self.perception.detector).is_none() {
            return Err(AgentError::Config(format!("no tool named `{}`", self.perception.detector)));
        }
        Ok(reg)
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        self.memory.validate().map_err(|e| AgentError::Config(e.to_string()))?;
        if self.perception.n_focus == 0 {
            return Err(AgentError::Config("n_focus must be at least 1".into()));
        }
        if !(self.perception.margin >= 0.0 && self.perception.margin < 0.5) {
            return Err(AgentError::Config(format!("margin {} out of range", self.perception.margin)));
        }
        if self.params.temperature < 0.0 {
            return Err(AgentError::Config("temperature must be non-negative".into()));
        }
        self.tools().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TracePhase {
    Perceive,
    Retrieve,
    Plan,
    Execute,
    Verify,
    Correct,
    Memorize,
}

impl TracePhase {
    pub const ALL: [TracePhase; 7] = [
        TracePhase::Perceive,
        TracePhase::Retrieve,
        TracePhase::Plan,
        TracePhase::Execute,
        TracePhase::Verify,
        TracePhase::Correct,
        TracePhase::Memorize,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TracePhase::Perceive => "perceive",
            TracePhase::Retrieve => "retrieve",
            TracePhase::Plan => "plan",
            TracePhase::Execute => "execute",
            TracePhase::Verify => "verify",
            TracePhase::Correct => "correct",
            TracePhase::Memorize => "memorize",
        }
    }
}

impl fmt::Display for TracePhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub turn: u32,
    pub phase: TracePhase,
    pub payload: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<f64>,
}

impl TraceEvent {
    /// Copy with the wall-clock field dropped, for byte-stable trace files.
    pub fn without_timing(&self) -> Self {
        Self {
            duration_ms: None,
            ..self.clone()
        }
    }
}

/// Receives trace events as they are produced.
pub trait TraceSink: Send + Sync {
    fn emit(&self, event: &TraceEvent);
}

/// Writes events as JSON lines, optionally without durations.
pub fn write_trace<W: Write>(mut w: W, events: &[TraceEvent], with_timing: bool) -> std::io::Result<()> {
    for e in events {
        let line = if with_timing {
            serde_json::to_string(e)
        } else {
            serde_json::to_string(&e.without_timing())
        }
        .map_err(std::io::Error::other)?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_trace<R: BufRead>(r: R) -> Result<Vec<TraceEvent>, String> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", n + 1))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn: u32,
    pub instruction: String,
    #[serde(default)]
    pub events: Vec<WorldEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events_rejected: Option<String>,
    /// Canonical clauses as parsed; empty when the planner is bypassed.
    pub intents: Vec<String>,
    pub plan: Plan,
    pub actions: Vec<AgentAction>,
    pub scene_after: SceneWorld,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<f64>,
}

impl TurnRecord {
    /// Actions produced for subtasks, without the closing summary.
    pub fn subtask_actions(&self) -> impl Iterator<Item = &AgentAction> {
        self.actions.iter().filter(|a| !a.is_summary())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedTurn {
    #[serde(default)]
    pub events: Vec<WorldEvent>,
    pub instruction: String,
}

/// Read-only view of a session for inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub id: String,
    pub memory: MemorySnapshot,
    pub plan: Option<Plan>,
    pub scene: SceneWorld,
    pub turns: usize,
    pub config: AgentConfig,
}

pub struct Session {
    pub id: String,
    pub scene: SceneWorld,
    pub memory: MemoryState,
    pub config: AgentConfig,
    pub seed: u64,
    pub transcript: Vec<TurnRecord>,
    pub trace: Vec<TraceEvent>,
    rng: ChaCha8Rng,
    backend: Arc<dyn ModelBackend>,
    tools: ToolRegistry,
    sinks: Vec<Arc<dyn TraceSink>>,
}

impl fmt::Debug for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Session")
            .field("id", &self.id)
            .field("turns", &self.transcript.len())
            .field("backend", &self.backend.name())
            .finish()
    }
}

struct PhaseClock {
    started: Instant,
}

impl PhaseClock {
    fn start() -> Self {
        Self { started: Instant::now() }
    }

    fn ms(&self) -> f64 {
        self.started.elapsed().as_secs_f64() * 1000.0
    }
}

impl Session {
    pub fn new(
        id: impl Into<String>,
        scene: SceneWorld,
        config: AgentConfig,
        backend: Arc<dyn ModelBackend>,
        seed: u64,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        scene.validate().map_err(|e| AgentError::Config(format!("scene: {e}")))?;
        let tools = config.tools()?;
        Ok(Self {
            id: id.into(),
            scene,
            memory: MemoryState::new(config.memory.clone()),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            transcript: Vec::new(),
            trace: Vec::new(),
            backend,
            tools,
            sinks: Vec::new(),
            config,
        })
    }

    pub fn add_sink(&mut self, sink: Arc<dyn TraceSink>) {
        self.sinks.push(sink);
    }

    pub fn backend(&self) -> &Arc<dyn ModelBackend> {
        &self.backend
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            id: self.id.clone(),
            memory: self.memory.snapshot(),
            plan: self.transcript.last().map(|t| t.plan.clone()),
            scene: self.scene.clone(),
            turns: self.transcript.len(),
            config: self.config.clone(),
        }
    }

    fn emit(&mut self, turn: u32, phase: TracePhase, payload: Value, duration_ms: f64) {
        let event = TraceEvent {
            turn,
            phase,
            payload,
            duration_ms: Some(duration_ms),
        };
        for s in &self.sinks {
            s.emit(&event);
        }
        self.trace.push(event);
    }

    /// Runs one full turn. Session state only changes when the turn completes.
    pub fn step(&mut self, events: &[WorldEvent], instruction: &str) -> Result<(Vec<AgentAction>, MemoryState), AgentError> {
        let turn_clock = PhaseClock::start();
        let turn = self.transcript.len() as u32 + 1;
        let instr = Instruction::new(instruction, turn);
        let flags = self.config.flags;
        let margin = self.config.perception.margin;

        let (mut scene, events_rejected) = match apply_events(&self.scene, events) {
            Ok(s) => (s, None),
            Err(e) => (self.scene.clone(), Some(e.to_string())),
        };
        let mut mem_view = if flags.disable_memory {
            MemoryState::new(self.config.memory.clone())
        } else {
            self.memory.clone()
        };

        let clock = PhaseClock::start();
        let pflags = PerceptionFlags {
            disable_perception: flags.disable_perception,
            disable_tools: flags.disable_tools,
        };
        let percept = perceive(&scene, &mem_view, &instr, &self.tools, pflags, &self.config.perception, &mut self.rng)
            .map_err(|e| AgentError::Config(e.to_string()))?;
        let detections = percept.detections().count();
        self.emit(
            turn,
            TracePhase::Perceive,
            json!({
                "revision": percept.scene_revision,
                "focus": percept.focused_entity_ids,
                "detections": detections,
                "facts": percept.facts.len(),
                "tools": percept.tools_used,
                "events_applied": events.len() - usize::from(events_rejected.is_some()) * events.len(),
            }),
            clock.ms(),
        );

        let clock = PhaseClock::start();
        let budget = self.config.memory.retrieval_budget;
        let retrieved = mem_view.retrieve(&instr.raw, &percept.focused_entity_ids, budget);
        let memory_text = render_context(&retrieved);
        let ids: Vec<&str> = retrieved.iter().map(|e| e.id.as_str()).collect();
        self.emit(turn, TracePhase::Retrieve, json!({ "retrieved": ids }), clock.ms());

        let clock = PhaseClock::start();
        let (intents, mut plan): (Vec<Intent>, Plan) = if events_rejected.is_some() {
            let i = vec![Intent::clarify()];
            let p = make_plan(&i);
            (i, p)
        } else if flags.disable_planner {
            (Vec::new(), pass_through_plan(&instr.raw))
        } else {
            let i = match self.config.parse_mode {
                ParseMode::Grammar => parse_instruction(&instr),
                ParseMode::Backend => parse_with_backend(
                    &instr,
                    self.backend.as_ref(),
                    &self.config.params,
                    &memory_text,
                    &percept.rendered_text,
                )?,
            };
            let p = make_plan(&i);
            (i, p)
        };
        let canon: Vec<String> = intents.iter().map(Intent::canonical).collect();
        let subtasks: Vec<Value> = plan
            .subtasks
            .iter()
            .map(|s| json!({ "id": s.id, "objective": s.objective.canonical(), "depends_on": s.depends_on }))
            .collect();
        self.emit(
            turn,
            TracePhase::Plan,
            json!({
                "intents": canon,
                "subtasks": subtasks,
                "goal": plan.goal,
                "events_rejected": events_rejected,
            }),
            clock.ms(),
        );

        let backend = Arc::clone(&self.backend);
        let ctx = ExecContext {
            backend: backend.as_ref(),
            params: &self.config.params,
            policy: self.config.policy,
            margin,
            memory: &mem_view,
            memory_text: &memory_text,
            percept: &percept,
            instruction: &instr,
        };
        let outcome = execute_generate(&mut plan, &mut scene, &ctx)?;

        let exec_ms: f64 = outcome.first_attempts.iter().map(|a| a.generate_ms).sum::<f64>() + outcome.summary_ms;
        let attempts: Vec<Value> = outcome
            .first_attempts
            .iter()
            .map(|a| json!({ "subtask": a.subtask_id, "objective": a.objective, "reply": a.reply }))
            .collect();
        self.emit(
            turn,
            TracePhase::Execute,
            json!({ "attempts": attempts, "actions": outcome.actions }),
            exec_ms,
        );
        let verify_ms: f64 = outcome.first_attempts.iter().map(|a| a.verify_ms).sum();
        let verdicts: Vec<Value> = outcome
            .first_attempts
            .iter()
            .map(|a| json!({ "subtask": a.subtask_id, "verdict": a.verdict }))
            .collect();
        self.emit(turn, TracePhase::Verify, json!({ "verdicts": verdicts }), verify_ms);
        for c in &outcome.corrections {
            self.emit(
                turn,
                TracePhase::Correct,
                json!({
                    "subtask": c.subtask_id,
                    "attempt": c.attempt,
                    "objective": c.objective,
                    "reply": c.reply,
                    "verdict": c.verdict,
                }),
                c.generate_ms + c.verify_ms,
            );
        }

        let clock = PhaseClock::start();
        let memory = if flags.disable_memory {
            MemoryState::from_parts(Vec::new(), Vec::new(), self.config.memory.clone(), turn)
        } else {
            mem_view.update(&instr, &outcome.actions, &outcome.thoughts)
        };
        let payload = if flags.disable_memory {
            json!({ "skipped": "memory disabled", "current_turn": turn })
        } else {
            json!({
                "short": memory.short().len(),
                "long": memory.long().len(),
                "current_turn": memory.current_turn(),
            })
        };
        self.emit(turn, TracePhase::Memorize, payload, clock.ms());

        self.scene = scene;
        self.memory = memory;
        self.transcript.push(TurnRecord {
            turn,
            instruction: instr.raw.clone(),
            events: events.to_vec(),
            events_rejected,
            intents: canon,
            plan,
            actions: outcome.actions.clone(),
            scene_after: self.scene.clone(),
            duration_ms: Some(turn_clock.ms()),
        });
        Ok((outcome.actions, self.memory.clone()))
    }

    /// Runs turns in order, stopping at the first backend failure. Turns
    /// completed before a failure stay in `self.transcript`.
    pub fn run_dialogue(&mut self, turns: &[ScriptedTurn]) -> Result<Vec<TurnRecord>, AgentError> {
        for t in turns {
            self.step(&t.events, &t.instruction)?;
        }
        Ok(self.transcript.clone())
    }
}

/// True when every subtask verified on its first attempt.
pub fn first_try_clean(trace: &[TraceEvent]) -> bool {
    trace.iter().all(|e| e.phase != TracePhase::Correct)
        && trace
            .iter()
            .filter(|e| e.phase == TracePhase::Verify)
            .flat_map(|e| e.payload["verdicts"].as_array().cloned().unwrap_or_default())
            .all(|v| v["verdict"]["verdict"] == json!("ok"))
}

#[doc(hidden)]
pub fn verdict_is_ok(v: &Verdict) -> bool {
    v.is_ok()
}
