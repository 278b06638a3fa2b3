//! Multimodal dialogue agent over a symbolic scene: dual-tier memory,
//! attention-driven perception, instruction planning, verified execution,
//! and an evaluation harness for scripted multi-turn scenarios.

pub mod agent;
pub mod backend;
pub mod config;
pub mod harness;
pub mod executor;
pub mod memory;
pub mod perception;
pub mod planner;
pub mod text;
pub mod world;

pub use agent::{
    read_trace, write_trace, AblationFlags, AgentConfig, AgentError, DetectorConfig, ScriptedTurn, Session,
    SessionSnapshot, TraceEvent, TracePhase, TraceSink, TurnRecord,
};
pub use backend::{
    BackendError, CompletionParams, ModelBackend, Phase, PromptBundle, RemoteBackend, RemoteConfig, ScriptedBackend,
    ScriptedRule,
};
pub use config::{BackendConfig, BackendKind, RunConfig};
pub use executor::{ActionKind, AgentAction, CorrectionPolicy, Expectation, Verdict};
pub use memory::{MemoryConfig, MemoryEntry, MemorySnapshot, MemoryState};
pub use perception::{Percept, PerceptionConfig};
pub use planner::{Instruction, Intent, Plan, Subtask, SubtaskStatus};
pub use world::{BBox, Entity, SceneWorld, SpatialRelation, WorldEvent};
