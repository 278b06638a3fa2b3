//! Evaluation harness: scenario files, the scenario generator, scoring,
//! reports, the oracle agent and the suite runner.

pub mod bench;
pub mod generate;
pub mod oracle;
pub mod report;
pub mod scenario;
pub mod score;
pub mod suite;

pub use bench::{bench_files, trace_path, write_files};
pub use generate::{generate_scenario, generate_suite, Profile};
pub use oracle::run_oracle;
pub use report::{aggregate, ConfigAggregate, LatencySamples, LatencyStats, RunReport, Summary, SuiteReport};
pub use scenario::{load_dir, write_dir, Check, CheckKind, Dimension, Scenario, ScenarioError, ScenarioTurn};
pub use score::{classify_errors, evaluate_checks, score, DimScore, DimensionScores, ErrorCounters, ErrorKind, ScoreError};
pub use suite::{ablation_configs, run_scenario, run_suite, session_seed, BackendFactory, NamedConfig, RunOutcome, SuiteOutcome};
