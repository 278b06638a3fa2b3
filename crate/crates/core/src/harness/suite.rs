//! Runs scenarios against agent configurations and aggregates the results.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{aggregate, LatencySamples, RunReport, SuiteReport};
use super::scenario::Scenario;
use super::score::{bucket_scores, classify_errors, evaluate_checks, scores_from_outcomes};
use crate::agent::{AblationFlags, AgentConfig, AgentError, Session, TraceEvent, TurnRecord};
use crate::backend::{BackendError, ModelBackend};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedConfig {
    pub name: String,
    pub agent: AgentConfig,
}

impl NamedConfig {
    pub fn new(name: impl Into<String>, agent: AgentConfig) -> Self {
        Self {
            name: name.into(),
            agent,
        }
    }
}

/// The full agent plus one row per disabled module.
pub fn ablation_configs(base: &AgentConfig) -> Vec<NamedConfig> {
    let with = |f: fn(&mut AblationFlags)| {
        let mut cfg = base.clone();
        cfg.flags = AblationFlags::default();
        f(&mut cfg.flags);
        cfg
    };
    vec![
        NamedConfig::new("full", with(|_| {})),
        NamedConfig::new("no-memory", with(|f| f.disable_memory = true)),
        NamedConfig::new("no-perception", with(|f| f.disable_perception = true)),
        NamedConfig::new("no-planner", with(|f| f.disable_planner = true)),
        NamedConfig::new("no-tools", with(|f| f.disable_tools = true)),
    ]
}

/// 64-bit FNV-1a.
pub fn fnv1a(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn session_seed(seed: u64, scenario_id: &str) -> u64 {
    seed ^ fnv1a(scenario_id)
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub transcript: Vec<TurnRecord>,
    pub trace: Vec<TraceEvent>,
    pub latency: LatencySamples,
    /// Why the run stopped early, when it did.
    pub error: Option<AgentError>,
}

/// Runs one scenario; failures are recorded in the report, never raised.
pub fn run_scenario(scenario: &Scenario, config: &NamedConfig, backend: Arc<dyn ModelBackend>, seed: u64) -> RunOutcome {
    let mut report = RunReport::empty(&scenario.id, &config.name);
    report.tags = scenario.tags.clone();
    let mut session = match Session::new(
        scenario.id.clone(),
        scenario.scene.clone(),
        config.agent.clone(),
        backend,
        session_seed(seed, &scenario.id),
    ) {
        Ok(s) => s,
        Err(e) => {
            report.failure = Some(e.to_string());
            return RunOutcome {
                report,
                transcript: Vec::new(),
                trace: Vec::new(),
                latency: LatencySamples::default(),
                error: Some(e),
            };
        }
    };
    let result = session.run_dialogue(&scenario.scripted_turns());
    let transcript = session.transcript.clone();
    let trace = session.trace.clone();
    report.turns = transcript.len();
    report.errors = classify_errors(&transcript, scenario);
    let mut error = None;
    match result {
        Err(e) => {
            report.failure = Some(e.to_string());
            error = Some(e);
        }
        Ok(_) => match evaluate_checks(&transcript, scenario) {
            Ok(outcomes) => {
                report.dimensions = scores_from_outcomes(&outcomes);
                report.buckets = bucket_scores(&outcomes);
            }
            Err(e) => report.failure = Some(e.to_string()),
        },
    }
    let latency = LatencySamples::collect(&transcript, &trace);
    report.latency = latency.stats();
    RunOutcome {
        report,
        transcript,
        trace,
        latency,
        error,
    }
}

/// Makes the backend for one scenario run. Scripted backends carry
/// per-session state, so each run gets its own.
pub type BackendFactory<'a> = dyn Fn(&Scenario) -> Result<Arc<dyn ModelBackend>, BackendError> + Sync + 'a;

pub struct SuiteOutcome {
    /// Config-major, scenario order within each config.
    pub runs: Vec<RunOutcome>,
    pub report: SuiteReport,
}

/// Every (scenario, config) pair, run in parallel; results keep input order.
pub fn run_suite(scenarios: &[Scenario], configs: &[NamedConfig], factory: &BackendFactory, seed: u64) -> SuiteOutcome {
    let pairs: Vec<(&NamedConfig, &Scenario)> = configs.iter().flat_map(|c| scenarios.iter().map(move |s| (c, s))).collect();
    let runs: Vec<RunOutcome> = pairs
        .par_iter()
        .map(|(c, s)| match factory(s) {
            Ok(backend) => run_scenario(s, c, backend, seed),
            Err(e) => {
                let mut report = RunReport::empty(&s.id, &c.name);
                report.tags = s.tags.clone();
                report.failure = Some(e.to_string());
                RunOutcome {
                    report,
                    transcript: Vec::new(),
                    trace: Vec::new(),
                    latency: LatencySamples::default(),
                    error: Some(AgentError::Backend(e)),
                }
            }
        })
        .collect();
    let mut aggregates = Vec::new();
    for c in configs {
        let mine: Vec<&RunOutcome> = runs.iter().filter(|r| r.report.config == c.name).collect();
        let reports: Vec<&RunReport> = mine.iter().map(|r| &r.report).collect();
        let mut agg = aggregate(&c.name, &reports);
        let mut samples = LatencySamples::default();
        for r in &mine {
            samples.extend(&r.latency);
        }
        agg.latency = samples.stats();
        aggregates.push(agg);
    }
    let report = SuiteReport {
        seed,
        configs: aggregates,
        reports: runs.iter().map(|r| r.report.clone()).collect(),
    };
    SuiteOutcome { runs, report }
}
