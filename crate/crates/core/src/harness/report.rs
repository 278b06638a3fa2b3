//! Run reports, per-config aggregates, latency statistics and the text tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::scenario::Dimension;
use super::score::{DimScore, DimensionScores, ErrorCounters, ErrorKind, BUCKETS, FLUENCY_NOTE};
use crate::agent::{TraceEvent, TracePhase, TurnRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
}

/// Nearest-rank percentile of unsorted samples; `None` when empty.
pub fn percentile(samples: &[f64], p: f64) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * s.len() as f64).ceil() as usize;
    Some(s[rank.clamp(1, s.len()) - 1])
}

impl Summary {
    pub fn of(samples: &[f64]) -> Option<Self> {
        let p95 = percentile(samples, 95.0)?;
        Some(Self {
            count: samples.len(),
            mean_ms: samples.iter().sum::<f64>() / samples.len() as f64,
            p95_ms: p95,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub per_turn: Summary,
    /// Per phase, the time spent in that phase per turn it occurred in.
    pub per_phase: BTreeMap<TracePhase, Summary>,
}

/// Raw samples behind [`LatencyStats`], so pooled stats can be recomputed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LatencySamples {
    pub turns: Vec<f64>,
    pub phases: BTreeMap<TracePhase, Vec<f64>>,
}

impl LatencySamples {
    pub fn collect(transcript: &[TurnRecord], trace: &[TraceEvent]) -> Self {
        let turns = transcript.iter().filter_map(|t| t.duration_ms).collect();
        let mut per: BTreeMap<(u32, TracePhase), f64> = BTreeMap::new();
        for e in trace {
            if let Some(d) = e.duration_ms {
                *per.entry((e.turn, e.phase)).or_default() += d;
            }
        }
        let mut phases: BTreeMap<TracePhase, Vec<f64>> = BTreeMap::new();
        for ((_, phase), d) in per {
            phases.entry(phase).or_default().push(d);
        }
        Self { turns, phases }
    }

    pub fn extend(&mut self, other: &LatencySamples) {
        self.turns.extend_from_slice(&other.turns);
        for (p, v) in &other.phases {
            self.phases.entry(*p).or_default().extend_from_slice(v);
        }
    }

    pub fn stats(&self) -> Option<LatencyStats> {
        Some(LatencyStats {
            per_turn: Summary::of(&self.turns)?,
            per_phase: self
                .phases
                .iter()
                .filter_map(|(p, v)| Summary::of(v).map(|s| (*p, s)))
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario_id: String,
    pub config: String,
    #[serde(default)]
    pub tags: Vec<String>,
    pub turns: usize,
    pub dimensions: DimensionScores,
    pub fluency: String,
    pub errors: ErrorCounters,
    pub buckets: BTreeMap<String, DimScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencyStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl RunReport {
    pub fn empty(scenario_id: &str, config: &str) -> Self {
        Self {
            scenario_id: scenario_id.to_string(),
            config: config.to_string(),
            tags: Vec::new(),
            turns: 0,
            dimensions: BTreeMap::new(),
            fluency: FLUENCY_NOTE.to_string(),
            errors: ErrorCounters::default(),
            buckets: BTreeMap::new(),
            latency: None,
            failure: None,
        }
    }

    /// True when every check passed and the run completed.
    pub fn all_passed(&self) -> bool {
        self.failure.is_none()
            && self.dimensions.values().all(|d| d.passed == d.total)
    }

    pub fn without_timing(&self) -> Self {
        Self {
            latency: None,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigAggregate {
    pub config: String,
    pub scenarios: usize,
    pub failures: usize,
    /// Mean over reports that scored the dimension.
    pub dimensions: BTreeMap<Dimension, f64>,
    pub fluency: String,
    /// Mean of the present dimension means.
    pub average: Option<f64>,
    pub errors: ErrorCounters,
    /// Mean over reports with checks in the bucket.
    pub buckets: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencyStats>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Aggregates reports that share a config; latency is left empty.
pub fn aggregate(config: &str, reports: &[&RunReport]) -> ConfigAggregate {
    let mut dims: BTreeMap<Dimension, Vec<f64>> = BTreeMap::new();
    let mut buckets: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut errors = ErrorCounters::default();
    for r in reports {
        for (d, s) in &r.dimensions {
            dims.entry(*d).or_default().push(s.score);
        }
        for (b, s) in &r.buckets {
            buckets.entry(b.clone()).or_default().push(s.score);
        }
        errors.merge(&r.errors);
    }
    let dimensions: BTreeMap<Dimension, f64> = dims.iter().filter_map(|(d, v)| mean(v).map(|m| (*d, m))).collect();
    let average = mean(&dimensions.values().copied().collect::<Vec<_>>());
    ConfigAggregate {
        config: config.to_string(),
        scenarios: reports.len(),
        failures: reports.iter().filter(|r| r.failure.is_some()).count(),
        dimensions,
        fluency: FLUENCY_NOTE.to_string(),
        average,
        errors,
        buckets: buckets.iter().filter_map(|(b, v)| mean(v).map(|m| (b.clone(), m))).collect(),
        latency: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub configs: Vec<ConfigAggregate>,
    pub reports: Vec<RunReport>,
}

impl SuiteReport {
    pub fn config(&self, name: &str) -> Option<&ConfigAggregate> {
        self.configs.iter().find(|c| c.config == name)
    }

    pub fn without_timing(&self) -> Self {
        Self {
            seed: self.seed,
            configs: self
                .configs
                .iter()
                .map(|c| ConfigAggregate {
                    latency: None,
                    ..c.clone()
                })
                .collect(),
            reports: self.reports.iter().map(RunReport::without_timing).collect(),
        }
    }

    /// Aggregate for `config` over only the reports accepted by `keep`.
    pub fn subset(&self, config: &str, keep: impl Fn(&RunReport) -> bool) -> ConfigAggregate {
        let picked: Vec<&RunReport> = self.reports.iter().filter(|r| r.config == config && keep(r)).collect();
        aggregate(config, &picked)
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

const SCORED: [Dimension; 5] = [
    Dimension::VisualEntityTracking,
    Dimension::DialogueConsistency,
    Dimension::ReasoningDepth,
    Dimension::InstructionAdherence,
    Dimension::ErrorSuppression,
];

/// Dimension scores on the 1-5 scale, one row per config.
pub fn render_dimension_table(configs: &[ConfigAggregate]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<16}", "Config");
    for d in SCORED {
        let _ = write!(out, " {:>9}", d.short_name());
    }
    let _ = writeln!(out, " {:>9} {:>7}", Dimension::ResponseFluency.short_name(), "Avg.");
    for c in configs {
        let _ = write!(out, "{:<16}", c.config);
        for d in SCORED {
            let _ = write!(out, " {:>9}", cell(c.dimensions.get(&d).map(|s| 1.0 + 4.0 * s)));
        }
        let _ = writeln!(out, " {:>9} {:>7}", "n/a", cell(c.average.map(|s| 1.0 + 4.0 * s)));
    }
    let _ = writeln!(out, "scale: 1 + 4 * pass rate; fluency is {FLUENCY_NOTE}");
    out
}

/// Pass rate per turn bucket on the 1-5 scale.
pub fn render_bucket_table(configs: &[ConfigAggregate]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<16}", "Config");
    for b in BUCKETS {
        let _ = write!(out, " {:>9}", format!("Turns {b}"));
    }
    let _ = writeln!(out, " {:>7}", "Drop");
    for c in configs {
        let _ = write!(out, "{:<16}", c.config);
        for b in BUCKETS {
            let _ = write!(out, " {:>9}", cell(c.buckets.get(b).map(|s| 1.0 + 4.0 * s)));
        }
        let drop = match (c.buckets.get("1-3"), c.buckets.get("7+")) {
            (Some(a), Some(z)) => Some(4.0 * (a - z)),
            _ => None,
        };
        let _ = writeln!(out, " {:>7}", cell(drop));
    }
    out
}

/// Percentage of turns with each error type.
pub fn render_error_table(configs: &[ConfigAggregate]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<30}", "Error type (% of turns)");
    for c in configs {
        let _ = write!(out, " {:>14}", c.config);
    }
    out.push('\n');
    for kind in ErrorKind::ALL {
        let _ = write!(out, "{:<30}", kind.label());
        for c in configs {
            let _ = write!(out, " {:>14}", format!("{:.1}", 100.0 * c.errors.rate(kind)));
        }
        out.push('\n');
    }
    out
}

/// Mean and p95 per turn and per phase, in milliseconds.
pub fn render_latency_table(configs: &[ConfigAggregate]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<16} {:>10} {:>10}", "Config", "turn mean", "turn p95");
    for p in TracePhase::ALL {
        let _ = write!(out, " {:>10}", p.as_str());
    }
    out.push('\n');
    for c in configs {
        let Some(l) = &c.latency else {
            let _ = writeln!(out, "{:<16} {:>10}", c.config, "-");
            continue;
        };
        let _ = write!(out, "{:<16} {:>10.3} {:>10.3}", c.config, l.per_turn.mean_ms, l.per_turn.p95_ms);
        for p in TracePhase::ALL {
            let v = l.per_phase.get(&p).map(|s| format!("{:.3}", s.mean_ms)).unwrap_or_else(|| "-".into());
            let _ = write!(out, " {v:>10}");
        }
        out.push('\n');
    }
    out.push_str("phase columns: mean ms per turn in which the phase ran\n");
    out
}

pub fn render_report(report: &SuiteReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Dimension scores (seed {})", report.seed);
    out.push_str(&render_dimension_table(&report.configs));
    out.push_str("\nScores by turn range\n");
    out.push_str(&render_bucket_table(&report.configs));
    out.push_str("\nError rates\n");
    out.push_str(&render_error_table(&report.configs));
    out
}

/// Single-run summary for the `run` subcommand.
pub fn render_run(report: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scenario {} ({}), {} turns", report.scenario_id, report.config, report.turns);
    if let Some(f) = &report.failure {
        let _ = writeln!(out, "failure: {f}");
    }
    for (d, s) in &report.dimensions {
        let _ = writeln!(out, "  {:<24} {}/{}  score {:.3}  scale {:.2}", d.as_str(), s.passed, s.total, s.score, s.mapped);
    }
    let _ = writeln!(out, "  {:<24} {}", Dimension::ResponseFluency.as_str(), report.fluency);
    for kind in ErrorKind::ALL {
        let _ = writeln!(out, "  {:<30} {}", kind.label(), report.errors.get(kind));
    }
    out
}
