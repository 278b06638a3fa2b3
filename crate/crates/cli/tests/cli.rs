use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_groundloop"));
    c.env_remove("GROUNDLOOP_API_KEY");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("an error line");
    serde_json::from_str(line).expect("stderr is a JSON line")
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let out = run(&["gen", "--seed", "9", "--count", "4", "--out", d.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (ta, tb) = (read_tree(&a), read_tree(&b));
    assert_eq!(ta.len(), 4);
    assert_eq!(ta, tb);
}

#[test]
fn run_handcrafted_scenario_passes() {
    let path = scenarios_dir().join("hand-kitchen.json");
    let out = run(&["run", path.to_str().unwrap(), "--json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["scenario_id"], "hand-kitchen");
    for (name, d) in report["dimensions"].as_object().unwrap() {
        assert_eq!(d["passed"], d["total"], "{name}");
    }
}

#[test]
fn missing_scenario_is_config_error() {
    let out = run(&["run", "/nonexistent/scenario.json"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "config");
    assert_eq!(err["code"], 2);
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn api_key_in_config_file_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", "[backend]\nkind = \"remote\"\napi_key = \"sk-nope\"\n");
    let scen = scenarios_dir().join("hand-desk.json");
    let out = run(&["run", scen.to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).contains("sk-nope"));
}

#[test]
fn remote_backend_needs_key_then_reports_unreachable_endpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "c.toml",
        "[backend]\nkind = \"remote\"\nendpoint = \"http://127.0.0.1:9/v1/chat/completions\"\nmodel = \"m\"\ntimeout_ms = 500\nmax_retries = 0\n",
    );
    let scen = scenarios_dir().join("hand-desk.json");
    let args = ["run", scen.to_str().unwrap(), "--config", cfg.to_str().unwrap()];

    let out = run(&args);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_json(&out)["message"].as_str().unwrap().contains("GROUNDLOOP_API_KEY"));

    let out = bin().args(args).env("GROUNDLOOP_API_KEY", "secret-value").output().unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stderr_json(&out)["error"], "backend");
    let all = [out.stdout, out.stderr].concat();
    assert!(!String::from_utf8_lossy(&all).contains("secret-value"));
}

#[test]
fn failing_checks_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    write(
        tmp.path(),
        "bad.json",
        r#"[{"phases": ["execute", "correct"], "pattern": "point;*", "reply": "ACT SAY nothing"}]"#,
    );
    let cfg = write(tmp.path(), "c.toml", "[backend]\nscript = \"bad.json\"\n");
    let scen = scenarios_dir().join("hand-kitchen.json");
    let out = run(&["run", scen.to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stderr_json(&out)["error"], "check_failed");
}

#[test]
fn bench_ablation_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let gen = tmp.path().join("suite");
    assert!(run(&["gen", "--seed", "3", "--count", "6", "--out", gen.to_str().unwrap()]).status.success());
    let mut trees = Vec::new();
    for name in ["o1", "o2"] {
        let o = tmp.path().join(name);
        let out = run(&["bench", gen.to_str().unwrap(), "--ablate", "all", "--seed", "5", "--out", o.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let stdout = String::from_utf8_lossy(&out.stdout);
        for row in ["full", "no-memory", "no-perception", "no-planner", "no-tools"] {
            assert!(stdout.contains(row), "{row} missing");
        }
        let report: serde_json::Value =
            serde_json::from_slice(&std::fs::read(o.join("report.json")).unwrap()).unwrap();
        assert_eq!(report["configs"].as_array().unwrap().len(), 5);
        assert!(o.join("latency.json").exists());
        trees.push(
            read_tree(&o)
                .into_iter()
                .filter(|(n, _)| !n.starts_with("latency"))
                .collect::<Vec<_>>(),
        );
    }
    assert_eq!(trees[0].len(), 2 + 5 * 6);
    assert_eq!(trees[0], trees[1]);
}

#[test]
fn replay_prints_trace_in_order() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = tmp.path().join("t.jsonl");
    let scen = scenarios_dir().join("hand-desk.json");
    let out = run(&["run", scen.to_str().unwrap(), "--trace", trace.to_str().unwrap()]);
    assert!(out.status.success());
    let a = run(&["replay", trace.to_str().unwrap()]);
    let b = run(&["replay", trace.to_str().unwrap()]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let first = text.lines().next().unwrap();
    assert!(first.starts_with("turn   1  perceive"), "{first}");
    assert!(text.lines().last().unwrap().contains("memorize"));
}

#[test]
fn chat_reads_piped_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(scenarios_dir().join("hand-kitchen.json")).unwrap()).unwrap();
    let scene = write(tmp.path(), "scene.json", &scenario["scene"].to_string());
    let mut child = bin()
        .args(["chat", scene.to_str().unwrap()])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"point to the red ball\ncount the cups\n:state\n:quit\nnever reached\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("e1"), "{text}");
    assert!(text.contains('2'), "{text}");
    assert!(!text.contains("> "));
    assert!(text.contains("\"revision\""), "{text}");
}
