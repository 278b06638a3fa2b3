//! Files written by a suite run.
//!
//! Reports and traces carry no wall-clock fields, so identical seeds and
//! configs give byte-identical files. Timings go to the latency files only.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use super::report::{render_latency_table, render_report, LatencyStats};
use super::suite::SuiteOutcome;
use crate::agent::write_trace;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const LATENCY_JSON: &str = "latency.json";
pub const LATENCY_TXT: &str = "latency.txt";

/// Path of a run's trace file, relative to the output directory.
pub fn trace_path(config: &str, scenario_id: &str) -> String {
    format!("traces/{config}/{scenario_id}.jsonl")
}

/// (relative path, contents) pairs in a fixed order.
pub fn bench_files(outcome: &SuiteOutcome) -> Vec<(String, String)> {
    let stable = outcome.report.without_timing();
    let mut files = vec![
        (
            REPORT_JSON.to_string(),
            serde_json::to_string_pretty(&stable).expect("reports serialize") + "\n",
        ),
        (REPORT_TXT.to_string(), render_report(&stable)),
    ];
    let latency: BTreeMap<&str, Option<&LatencyStats>> = outcome
        .report
        .configs
        .iter()
        .map(|c| (c.config.as_str(), c.latency.as_ref()))
        .collect();
    files.push((
        LATENCY_JSON.to_string(),
        serde_json::to_string_pretty(&latency).expect("latency serializes") + "\n",
    ));
    files.push((LATENCY_TXT.to_string(), render_latency_table(&outcome.report.configs)));
    for run in &outcome.runs {
        let mut buf = Vec::new();
        write_trace(&mut buf, &run.trace, false).expect("writing to memory");
        files.push((
            trace_path(&run.report.config, &run.report.scenario_id),
            String::from_utf8(buf).expect("json is utf-8"),
        ));
    }
    files
}

pub fn write_files(dir: &Path, files: &[(String, String)]) -> io::Result<()> {
    for (rel, text) in files {
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, text)?;
    }
    Ok(())
}
