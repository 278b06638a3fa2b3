//! Subcommand bodies. Output goes to the given writer so tests can capture it.

use std::io::{BufRead, IsTerminal, Write};
use std::path::Path;
use std::sync::Arc;

use groundloop::harness::report::{render_latency_table, render_report, render_run};
use groundloop::harness::{
    ablation_configs, bench_files, generate_suite, load_dir, run_scenario, run_suite, write_dir, write_files,
    NamedConfig, Scenario,
};
use groundloop::{
    read_trace, write_trace, AblationFlags, AgentAction, AgentConfig, BackendError, ModelBackend,
    RunConfig, SceneWorld, Session, WorldEvent,
};

use crate::error::io_error;
use crate::service::{self, ServiceConfig};
use crate::{Ablate, BenchArgs, ChatArgs, CliError, FlagArgs, GenArgs, ReplayArgs, RunArgs, ServeArgs};

fn write_out(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Config(format!("stdout: {e}")))
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn apply_flags(base: AblationFlags, f: &FlagArgs) -> AblationFlags {
    AblationFlags {
        disable_memory: base.disable_memory || f.no_memory,
        disable_perception: base.disable_perception || f.no_perception,
        disable_planner: base.disable_planner || f.no_planner,
        disable_tools: base.disable_tools || f.no_tools,
    }
}

fn config_name(flags: &AblationFlags) -> String {
    let mut parts = Vec::new();
    for (on, name) in [
        (flags.disable_memory, "no-memory"),
        (flags.disable_perception, "no-perception"),
        (flags.disable_planner, "no-planner"),
        (flags.disable_tools, "no-tools"),
    ] {
        if on {
            parts.push(name);
        }
    }
    if parts.is_empty() {
        "full".to_string()
    } else {
        parts.join("+")
    }
}

pub fn run(args: &RunArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let scenario = Scenario::load(&args.scenario)?;
    let cfg = load_config(args.config.as_deref())?;
    let mut agent = cfg.agent.clone();
    agent.flags = apply_flags(agent.flags, &args.flags);
    agent.validate()?;
    let backend = cfg.backend.build()?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let named = NamedConfig::new(config_name(&agent.flags), agent);
    let outcome = run_scenario(&scenario, &named, backend, seed);
    if let Some(path) = &args.trace {
        let file = std::fs::File::create(path).map_err(|e| io_error(path, e))?;
        write_trace(std::io::BufWriter::new(file), &outcome.trace, false).map_err(|e| io_error(path, e))?;
    }
    let text = if args.json {
        serde_json::to_string_pretty(&outcome.report.without_timing()).expect("reports serialize") + "\n"
    } else {
        render_run(&outcome.report)
    };
    write_out(out, &text)?;
    if let Some(e) = outcome.error {
        return Err(e.into());
    }
    let (passed, total) = outcome
        .report
        .dimensions
        .values()
        .fold((0, 0), |(p, t), d| (p + d.passed, t + d.total));
    if passed < total {
        return Err(CliError::Failed(format!("{} of {total} checks failed in `{}`", total - passed, scenario.id)));
    }
    Ok(())
}

pub fn bench(args: &BenchArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let scenarios = load_dir(&args.dir)?;
    if scenarios.is_empty() {
        return Err(CliError::Config(format!("no scenarios in {}", args.dir.display())));
    }
    let cfg = load_config(args.config.as_deref())?;
    cfg.agent.validate()?;
    // fail fast on a misconfigured backend instead of once per run
    cfg.backend.build()?;
    let configs = match args.ablate {
        Ablate::All => ablation_configs(&cfg.agent),
        Ablate::None => vec![NamedConfig::new(config_name(&cfg.agent.flags), cfg.agent.clone())],
    };
    let seed = args.seed.unwrap_or(cfg.seed);
    let backend_cfg = cfg.backend.clone();
    let factory = move |_: &Scenario| -> Result<Arc<dyn ModelBackend>, BackendError> { backend_cfg.build() };
    let outcome = run_suite(&scenarios, &configs, &factory, seed);
    write_files(&args.out, &bench_files(&outcome)).map_err(|e| io_error(&args.out, e))?;

    let mut text = render_report(&outcome.report.without_timing());
    text.push_str("\nLatency (ms)\n");
    text.push_str(&render_latency_table(&outcome.report.configs));
    text.push_str(&format!("\nwrote {}\n", args.out.display()));
    write_out(out, &text)?;

    if let Some(e) = outcome.runs.iter().find_map(|r| r.error.clone()) {
        return Err(e.into());
    }
    let first = &configs[0].name;
    let failing = outcome
        .report
        .reports
        .iter()
        .filter(|r| &r.config == first && !r.all_passed())
        .count();
    if failing > 0 {
        return Err(CliError::Failed(format!("{failing} scenario(s) failed checks under `{first}`")));
    }
    Ok(())
}

pub fn gen(args: &GenArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if args.count == 0 {
        return Err(CliError::Config("--count must be at least 1".into()));
    }
    let suite = generate_suite(args.seed, args.count, args.profile);
    write_dir(&args.out, &suite).map_err(|e| io_error(&args.out, e))?;
    write_out(out, &format!("wrote {} scenarios to {}\n", suite.len(), args.out.display()))
}

pub fn replay(args: &ReplayArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let file = std::fs::File::open(&args.trace).map_err(|e| io_error(&args.trace, e))?;
    let events = read_trace(std::io::BufReader::new(file))
        .map_err(|e| CliError::Config(format!("{}: {e}", args.trace.display())))?;
    let mut text = String::new();
    for e in &events {
        let payload = serde_json::to_string(&e.payload).expect("json values serialize");
        text.push_str(&format!("turn {:>3}  {:<9} {payload}", e.turn, e.phase.as_str()));
        if let (true, Some(d)) = (args.timing, e.duration_ms) {
            text.push_str(&format!("  ({d:.3} ms)"));
        }
        text.push('\n');
    }
    write_out(out, &text)
}

pub fn serve(args: &ServeArgs) -> Result<(), CliError> {
    let cfg = load_config(args.config.as_deref())?;
    let config = ServiceConfig {
        host: args.host.clone(),
        port: args.port,
        backend: cfg.backend,
        agent: cfg.agent,
        seed: cfg.seed,
        scenario_dir: args.scenarios.clone(),
        cors_origins: args.cors_origins.clone(),
        trace_dir: args.trace_dir.clone(),
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Config(format!("runtime: {e}")))?;
    runtime.block_on(service::serve(config))
}

fn render_actions(actions: &[AgentAction]) -> String {
    actions
        .iter()
        .map(|a| format!("  {:<8} {}\n", a.subtask_id, a.summary()))
        .collect()
}

/// Line-oriented session. `:event <json>` queues a world event for the next
/// turn, `:state` prints the session snapshot, `:quit` ends the session.
pub fn chat(args: &ChatArgs, input: impl BufRead, out: &mut dyn Write) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.scene).map_err(|e| io_error(&args.scene, e))?;
    let scene = SceneWorld::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", args.scene.display())))?;
    let cfg = load_config(args.config.as_deref())?;
    let agent = AgentConfig {
        flags: apply_flags(cfg.agent.flags, &args.flags),
        ..cfg.agent.clone()
    };
    let backend = cfg.backend.build()?;
    let mut session = Session::new("chat", scene, agent, backend, args.seed.unwrap_or(cfg.seed))?;
    let interactive = std::io::stdin().is_terminal();
    let mut pending: Vec<WorldEvent> = Vec::new();
    let prompt = |out: &mut dyn Write| -> Result<(), CliError> {
        if interactive {
            write_out(out, "> ")?;
            out.flush().map_err(|e| CliError::Config(format!("stdout: {e}")))?;
        }
        Ok(())
    };
    prompt(out)?;
    for line in input.lines() {
        let line = line.map_err(|e| CliError::Config(format!("stdin: {e}")))?;
        let line = line.trim();
        if line == ":quit" {
            break;
        } else if line == ":state" {
            let snap = serde_json::to_string_pretty(&session.snapshot()).expect("snapshots serialize");
            write_out(out, &(snap + "\n"))?;
        } else if let Some(json) = line.strip_prefix(":event ") {
            match serde_json::from_str::<WorldEvent>(json) {
                Ok(ev) => {
                    pending.push(ev);
                    write_out(out, &format!("queued ({} pending)\n", pending.len()))?;
                }
                Err(e) => write_out(out, &format!("bad event: {e}\n"))?,
            }
        } else if !line.is_empty() {
            let events = std::mem::take(&mut pending);
            let (actions, _) = session.step(&events, line)?;
            write_out(out, &render_actions(&actions))?;
        }
        prompt(out)?;
    }
    Ok(())
}
