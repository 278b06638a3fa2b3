//! Generator, scoring and fault-injection behavior of the evaluation harness.

use std::sync::Arc;

use groundloop::harness::score::{hallucinated_ids, LONG_RANGE_GAP};
use groundloop::harness::{
    ablation_configs, bench_files, generate_suite, load_dir, run_scenario, run_suite, write_dir, CheckKind, Dimension,
    ErrorKind, NamedConfig, Profile, Scenario,
};
use groundloop::planner::parse_command;
use groundloop::{
    ActionKind, AgentConfig, CorrectionPolicy, ModelBackend, Phase, ScriptedBackend, ScriptedRule, SubtaskStatus,
    TracePhase,
};

fn golden() -> Arc<dyn ModelBackend> {
    Arc::new(ScriptedBackend::golden())
}

fn full() -> NamedConfig {
    NamedConfig::new("full", AgentConfig::default())
}

#[test]
fn generated_scenarios_are_valid_and_deterministic() {
    for profile in [Profile::Standard, Profile::Extended] {
        let a = generate_suite(11, 25, profile);
        let b = generate_suite(11, 25, profile);
        assert_eq!(a, b);
        assert_eq!(a.len(), 25);
        let (lo, hi) = match profile {
            Profile::Standard => (5, 7),
            Profile::Extended => (8, 10),
        };
        for s in &a {
            s.validate().unwrap();
            assert!((lo..=hi).contains(&s.turns.len()), "{} has {} turns", s.id, s.turns.len());
            let n = s.scene.entities.len();
            assert!((4..=8).contains(&n), "{} has {n} entities", s.id);
            assert_eq!(Scenario::from_json(&s.to_json()).unwrap(), *s);
            for t in &s.turns {
                assert_eq!(t.intents, parse_command(&t.instruction).iter().map(|i| i.canonical()).collect::<Vec<_>>());
            }
        }
    }
    assert_ne!(generate_suite(11, 3, Profile::Standard), generate_suite(12, 3, Profile::Standard));
}

#[test]
fn memory_stress_scenarios_carry_long_range_references() {
    let suite = generate_suite(3, 40, Profile::Standard);
    let stress: Vec<&Scenario> = suite.iter().filter(|s| s.has_tag("memory-stress")).collect();
    assert!(stress.len() >= 10, "only {} memory-stress scenarios", stress.len());
    for s in stress {
        let long_range = s.turns.iter().enumerate().any(|(i, t)| {
            t.checks.iter().any(|c| {
                matches!(c.kind, CheckKind::ResolveEntity { .. })
                    && c.antecedent_turn.is_some_and(|a| i as u32 + 1 - a >= LONG_RANGE_GAP)
            })
        });
        assert!(long_range, "{} has no long-range reference", s.id);
    }
}

#[test]
fn scenario_directories_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let suite = generate_suite(4, 5, Profile::Standard);
    write_dir(dir.path(), &suite).unwrap();
    let mut back = load_dir(dir.path()).unwrap();
    back.sort_by(|a, b| a.id.cmp(&b.id));
    assert_eq!(back, suite);
}

#[test]
fn golden_run_is_clean_and_phases_are_ordered() {
    let suite = generate_suite(8, 10, Profile::Standard);
    for s in &suite {
        let out = run_scenario(s, &full(), golden(), 8);
        assert!(out.report.all_passed(), "{}: {:?}", s.id, out.report);
        for kind in ErrorKind::ALL {
            assert_eq!(out.report.errors.get(kind), 0, "{} {kind}", s.id);
        }
        for turn in 1..=s.turns.len() as u32 {
            let phases: Vec<TracePhase> = out.trace.iter().filter(|e| e.turn == turn).map(|e| e.phase).collect();
            let mut sorted = phases.clone();
            sorted.sort();
            assert_eq!(phases, sorted, "{} turn {turn}", s.id);
            assert_eq!(phases.first(), Some(&TracePhase::Perceive));
            assert_eq!(phases.last(), Some(&TracePhase::Memorize));
        }
    }
}

#[test]
fn injected_fabrications_are_counted_exactly() {
    let suite = generate_suite(21, 12, Profile::Standard);
    let k = 5;
    let poisoned: Vec<String> = suite.iter().take(k).map(|s| s.id.clone()).collect();
    let factory = |s: &Scenario| -> Result<Arc<dyn ModelBackend>, groundloop::BackendError> {
        if poisoned.contains(&s.id) {
            Ok(Arc::new(ScriptedBackend::with_overrides(vec![ScriptedRule::new(
                &[Phase::Execute],
                "summarize;*",
                "ACT SAY {answers} [e99]",
            )
            .once()])))
        } else {
            Ok(golden())
        }
    };
    let out = run_suite(&suite, &[full()], &factory, 21);
    let total = out.report.config("full").unwrap().errors;
    assert_eq!(total.visual_hallucination, k as u32);
    for run in &out.runs {
        let bad: usize = run.transcript.iter().map(|t| hallucinated_ids(t).len()).sum();
        assert_eq!(bad, usize::from(poisoned.contains(&run.report.scenario_id)));
    }
}

#[test]
fn forced_verify_failures_are_counted_exactly() {
    let suite = generate_suite(22, 12, Profile::Standard);
    let k = 4;
    let poisoned: Vec<String> = suite.iter().skip(3).take(k).map(|s| s.id.clone()).collect();
    let factory = |s: &Scenario| -> Result<Arc<dyn ModelBackend>, groundloop::BackendError> {
        if poisoned.contains(&s.id) {
            Ok(Arc::new(ScriptedBackend::with_overrides(vec![
                ScriptedRule::new(&[Phase::Execute], "point;*", "ACT SAY nothing").once(),
            ])))
        } else {
            Ok(golden())
        }
    };
    let cfg = AgentConfig {
        policy: CorrectionPolicy { max_retries: 0 },
        ..Default::default()
    };
    let out = run_suite(&suite, &[NamedConfig::new("strict", cfg)], &factory, 22);
    let errors = out.report.config("strict").unwrap().errors;
    assert_eq!(errors.incomplete_execution, k as u32);
    assert_eq!(errors.visual_hallucination, 0);
}

/// First turn of a generated scenario is always an explicit point request.
fn first_point(s: &Scenario) -> String {
    match &s.turns[0].checks[0].kind {
        CheckKind::ResolveEntity { entity } => entity.clone(),
        other => panic!("unexpected first check {other:?}"),
    }
}

#[test]
fn wrong_then_right_is_corrected_on_the_second_attempt() {
    let s = &generate_suite(23, 1, Profile::Standard)[0];
    let target = first_point(s);
    let decoy = s.scene.entities.iter().find(|e| e.id != target).unwrap().id.clone();
    let backend = ScriptedBackend::with_overrides(vec![ScriptedRule::new(
        &[Phase::Execute],
        "point;*",
        &format!("ACT POINT {decoy}"),
    )
    .once()]);
    let out = run_scenario(s, &full(), Arc::new(backend), 23);
    let t1 = &out.transcript[0];
    let point = t1.subtask_actions().next().unwrap();
    assert!(matches!(&point.kind, ActionKind::Point { entity_id, .. } if *entity_id == target));
    assert_eq!(point.attempt, 2);
    assert_eq!(t1.plan.subtasks[0].status, SubtaskStatus::Done);
    let corrections = out.trace.iter().filter(|e| e.turn == 1 && e.phase == TracePhase::Correct).count();
    assert_eq!(corrections, 1);
    assert!(out.report.all_passed());
}

#[test]
fn persistent_wrong_replies_escalate_after_the_retry_budget() {
    let s = &generate_suite(24, 1, Profile::Standard)[0];
    let target = first_point(s);
    let decoy = s.scene.entities.iter().find(|e| e.id != target).unwrap().id.clone();
    for max_retries in 0..4 {
        let backend = ScriptedBackend::with_overrides(vec![ScriptedRule::new(
            &[Phase::Execute, Phase::Correct],
            "point;*",
            &format!("ACT POINT {decoy}"),
        )]);
        let cfg = AgentConfig {
            policy: CorrectionPolicy { max_retries },
            ..Default::default()
        };
        let out = run_scenario(s, &NamedConfig::new("c", cfg), Arc::new(backend), 24);
        let t1 = &out.transcript[0];
        let last = t1.subtask_actions().next().unwrap();
        assert!(matches!(last.kind, ActionKind::Clarify { .. }));
        assert_eq!(last.attempt, max_retries + 1);
        assert_eq!(t1.plan.subtasks[0].status, SubtaskStatus::Failed);
        let corrections = out.trace.iter().filter(|e| e.turn == 1 && e.phase == TracePhase::Correct).count();
        assert_eq!(corrections as u32, max_retries);
        assert_eq!(out.report.errors.incomplete_execution, 1);
    }
}

#[test]
fn disabling_memory_loses_every_long_range_pronoun() {
    let suite: Vec<Scenario> = generate_suite(25, 40, Profile::Standard)
        .into_iter()
        .filter(|s| s.has_tag("memory-stress"))
        .collect();
    let cfg = ablation_configs(&AgentConfig::default()).into_iter().find(|c| c.name == "no-memory").unwrap();
    for s in &suite {
        let mut pronoun_turns = 0;
        let mut long_range_turns = 0;
        for (i, t) in s.turns.iter().enumerate() {
            let long = t.checks.iter().any(|c| {
                matches!(c.kind, CheckKind::ResolveEntity { .. })
                    && c.antecedent_turn.is_some_and(|a| i as u32 + 1 - a >= LONG_RANGE_GAP)
            });
            if long {
                long_range_turns += 1;
                if parse_command(&t.instruction)[0].target.as_ref().is_some_and(|q| q.is_pronoun()) {
                    pronoun_turns += 1;
                }
            }
        }
        let report = run_scenario(s, &cfg, golden(), 25).report;
        let lost = report.errors.context_loss;
        assert!(lost >= pronoun_turns && lost <= long_range_turns, "{}: {lost} not in {pronoun_turns}..={long_range_turns}", s.id);
        let full_report = run_scenario(s, &full(), golden(), 25).report;
        assert_eq!(full_report.errors.context_loss, 0);
    }
}

#[test]
fn suite_reports_are_reproducible_and_aggregate_correctly() {
    let suite = generate_suite(26, 6, Profile::Standard);
    let configs = ablation_configs(&AgentConfig::default());
    let factory = |_: &Scenario| -> Result<Arc<dyn ModelBackend>, groundloop::BackendError> { Ok(golden()) };
    let a = run_suite(&suite, &configs, &factory, 26);
    let b = run_suite(&suite, &configs, &factory, 26);
    assert_eq!(bench_files(&a)[..2], bench_files(&b)[..2]);
    let traces = |o: &groundloop::harness::SuiteOutcome| bench_files(o).into_iter().skip(4).collect::<Vec<_>>();
    assert_eq!(traces(&a), traces(&b));
    assert_eq!(a.report.reports.len(), suite.len() * configs.len());
    for c in &a.report.configs {
        let mine: Vec<_> = a.report.reports.iter().filter(|r| r.config == c.config).collect();
        for (d, mean) in &c.dimensions {
            let v: Vec<f64> = mine.iter().filter_map(|r| r.dimensions.get(d)).map(|s| s.score).collect();
            assert!((mean - v.iter().sum::<f64>() / v.len() as f64).abs() < 1e-12);
        }
    }
    let json = serde_json::to_string(&a.report).unwrap();
    let back: groundloop::harness::SuiteReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, a.report);
    let planner = a.report.config("no-planner").unwrap();
    assert!(planner.dimensions[&Dimension::InstructionAdherence] < 0.5);
}

#[test]
fn handcrafted_scenarios_pass_for_oracle_and_agent() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let suite = load_dir(&dir).unwrap();
    assert!(suite.len() >= 2);
    for s in &suite {
        let oracle = groundloop::harness::run_oracle(s);
        for o in groundloop::harness::evaluate_checks(&oracle, s).unwrap() {
            assert!(o.passed, "oracle: {} turn {}", s.id, o.turn);
        }
        let out = run_scenario(s, &full(), golden(), 0);
        assert!(out.report.all_passed(), "{}: {:?}", s.id, out.report);
    }
}
