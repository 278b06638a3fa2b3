//! Property tests over the core invariants.

use std::collections::HashSet;

use groundloop::executor::{ActionKind, AgentAction};
use groundloop::harness::score::{mapped_scale, scores_from_outcomes, CheckOutcome, DimScore};
use groundloop::harness::{Check, CheckKind, Dimension};
use groundloop::memory::{MemoryConfig, MemoryState, Tier};
use groundloop::planner::{canonical_command, make_plan, parse_command, place_relative, Verb};
use groundloop::world::{apply_event, boxes_relate, relation_holds, WorldError, DEFAULT_MARGIN};
use groundloop::{BBox, Entity, Instruction, SceneWorld, SpatialRelation, WorldEvent};
use proptest::prelude::*;

const RELS: [SpatialRelation; 7] = [
    SpatialRelation::LeftOf,
    SpatialRelation::RightOf,
    SpatialRelation::Above,
    SpatialRelation::Below,
    SpatialRelation::Inside,
    SpatialRelation::Contains,
    SpatialRelation::Overlaps,
];

fn bbox() -> impl Strategy<Value = BBox> {
    (0.0f64..0.9, 0.0f64..0.9, 0.02f64..0.5, 0.02f64..0.5)
        .prop_map(|(x, y, w, h)| BBox::new(x, y, w.min(1.0 - x), h.min(1.0 - y)).unwrap())
}

fn scene(max: usize) -> impl Strategy<Value = SceneWorld> {
    prop::collection::vec(bbox(), 2..=max).prop_map(|boxes| {
        let entities = boxes
            .into_iter()
            .enumerate()
            .map(|(i, b)| Entity::new(format!("e{i}"), if i % 2 == 0 { "ball" } else { "box" }, b))
            .collect();
        SceneWorld::new(entities).unwrap()
    })
}

fn converse(rel: SpatialRelation) -> SpatialRelation {
    match rel {
        SpatialRelation::LeftOf => SpatialRelation::RightOf,
        SpatialRelation::RightOf => SpatialRelation::LeftOf,
        SpatialRelation::Above => SpatialRelation::Below,
        SpatialRelation::Below => SpatialRelation::Above,
        SpatialRelation::Inside => SpatialRelation::Contains,
        SpatialRelation::Contains => SpatialRelation::Inside,
        SpatialRelation::Overlaps => SpatialRelation::Overlaps,
    }
}

fn event(n: usize) -> impl Strategy<Value = WorldEvent> {
    prop_oneof![
        (0..n, bbox()).prop_map(|(i, bbox)| WorldEvent::Move { id: format!("e{i}"), bbox }),
        (0..n, "[a-z]{1,4}", "[a-z]{1,4}").prop_map(|(i, key, value)| WorldEvent::SetState {
            id: format!("e{i}"),
            key,
            value
        }),
        (0..n).prop_map(|i| WorldEvent::Disappear { id: format!("e{i}") }),
        bbox().prop_map(|b| WorldEvent::Appear {
            entity: Entity::new("new", "cup", b)
        }),
    ]
}

/// One dialogue turn for the memory model: mentioned ids plus relation thoughts.
fn turn_input() -> impl Strategy<Value = (Vec<u8>, Vec<(u8, u8)>)> {
    (
        prop::collection::vec(0u8..6, 0..3),
        prop::collection::vec((0u8..6, 0u8..6), 0..2),
    )
}

fn run_memory(cfg: &MemoryConfig, turns: &[(Vec<u8>, Vec<(u8, u8)>)]) -> Vec<MemoryState> {
    let mut m = MemoryState::new(cfg.clone());
    let mut states = Vec::new();
    for (t, (ids, facts)) in turns.iter().enumerate() {
        let actions: Vec<AgentAction> = ids
            .iter()
            .map(|i| {
                AgentAction::new(
                    ActionKind::Point {
                        entity_id: format!("e{i}"),
                        bbox: None,
                    },
                    "s1",
                    1,
                )
            })
            .collect();
        let thoughts: Vec<String> = facts
            .iter()
            .filter(|(a, b)| a != b)
            .map(|(a, b)| format!("REL left_of e{a} e{b}"))
            .collect();
        m = m.update(&Instruction::new(format!("turn {t}"), t as u32 + 1), &actions, &thoughts);
        states.push(m.clone());
    }
    states
}

const WORDS: &[&str] = &[
    "point", "to", "the", "red", "blue", "ball", "box", "it", "is", "left", "of", "right", "above", "below",
    "inside", "then", "and", "count", "balls", "describe", "move", "what", "that",
    "one", "?", "cup", "small",
];

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS), 0..14).prop_map(|w| w.join(" "))
}

fn clause() -> impl Strategy<Value = String> {
    let np = (
        prop::sample::select(vec!["", "red ", "blue ", "small red "]),
        prop::sample::select(vec!["ball", "box", "cup"]),
    )
        .prop_map(|(a, c)| format!("the {a}{c}"));
    let rel = prop::sample::select(vec!["left of", "right of", "above", "below", "inside"]);
    prop_oneof![
        np.clone().prop_map(|n| format!("point to {n}")),
        np.clone().prop_map(|n| format!("describe {n}")),
        Just("point to it".to_string()),
        prop::sample::select(vec!["balls", "boxes", "red cups"]).prop_map(|n| format!("count the {n}")),
        (np.clone(), rel.clone(), np.clone()).prop_map(|(a, r, b)| format!("is {a} {r} {b}")),
        (np.clone(), rel.clone(), np.clone()).prop_map(|(a, r, b)| format!("move {a} to {r} {b}")),
        (rel.clone(), np.clone(), rel, np).prop_map(|(r, a, r2, b)| format!("what is {r} {a} that is {r2} {b}")),
    ]
}

fn command() -> impl Strategy<Value = String> {
    (clause(), prop::collection::vec((prop::sample::select(vec!["then", "and"]), clause()), 0..3)).prop_map(
        |(first, rest)| {
            let mut s = first;
            for (c, cl) in rest {
                s = format!("{s} {c} {cl}");
            }
            s
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn relations_have_converses_and_exclusive_directions(s in scene(6)) {
        for a in &s.entities {
            for b in &s.entities {
                if a.id == b.id { continue; }
                for rel in RELS {
                    let fwd = relation_holds(rel, &a.id, &b.id, &s, DEFAULT_MARGIN).unwrap();
                    let back = relation_holds(converse(rel), &b.id, &a.id, &s, DEFAULT_MARGIN).unwrap();
                    prop_assert_eq!(fwd, back);
                }
                let holds = |r| boxes_relate(r, &a.bbox, &b.bbox, DEFAULT_MARGIN);
                prop_assert!(!(holds(SpatialRelation::LeftOf) && holds(SpatialRelation::RightOf)));
                prop_assert!(!(holds(SpatialRelation::Above) && holds(SpatialRelation::Below)));
                if holds(SpatialRelation::Contains) {
                    prop_assert!(holds(SpatialRelation::Overlaps));
                }
            }
        }
    }

    #[test]
    fn self_relations_are_errors(s in scene(3), r in 0usize..7) {
        let e = relation_holds(RELS[r], "e0", "e0", &s, DEFAULT_MARGIN);
        prop_assert!(matches!(e, Err(WorldError::SelfRelation(_))));
    }

    #[test]
    fn apply_event_is_pure_and_bumps_revision(s in scene(5), ev in event(5)) {
        let before = s.clone();
        if let Ok(next) = apply_event(&s, &ev) {
            prop_assert_eq!(next.revision, s.revision + 1);
            prop_assert!(next.validate().is_ok());
        }
        prop_assert_eq!(s, before);
    }

    #[test]
    fn clamped_boxes_are_valid(x0 in -2.0f64..2.0, y0 in -2.0f64..2.0, x1 in -2.0f64..2.0, y1 in -2.0f64..2.0) {
        let b = BBox::from_corners_clamped(x0, y0, x1, y1);
        prop_assert!(BBox::new(b.x(), b.y(), b.w(), b.h()).is_ok());
    }

    #[test]
    fn placement_satisfies_the_relation(s in scene(4), r in 0usize..4) {
        let rel = RELS[r];
        if let Some(b) = place_relative(&s, "e0", rel, "e1", DEFAULT_MARGIN) {
            prop_assert!(boxes_relate(rel, &b, &s.entities[1].bbox, DEFAULT_MARGIN));
            prop_assert!((b.w() - s.entities[0].bbox.w()).abs() < 1e-12);
            prop_assert!((b.h() - s.entities[0].bbox.h()).abs() < 1e-12);
        }
    }

    #[test]
    fn salience_is_bounded_and_monotone(age in 0u32..50, count in 0u32..20) {
        let cfg = MemoryConfig::default();
        let s = cfg.salience(age, count);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!(cfg.salience(age + 1, count) <= s);
        prop_assert!(cfg.salience(age, count + 1) >= s);
    }

    #[test]
    fn memory_tiers_hold_their_invariants(
        turns in prop::collection::vec(turn_input(), 1..12),
        k in 1u32..5,
    ) {
        let cfg = MemoryConfig { k_turns: k, ..MemoryConfig::default() };
        let states = run_memory(&cfg, &turns);
        let mut long_seen: HashSet<String> = HashSet::new();
        for (t, m) in states.iter().enumerate() {
            let turn = t as u32 + 1;
            prop_assert_eq!(m.current_turn(), turn);
            let mut ids = HashSet::new();
            for e in m.entries() {
                prop_assert!(ids.insert(e.id.clone()), "duplicate id {}", e.id);
                prop_assert!((0.0..=1.0).contains(&e.salience));
            }
            for e in m.short() {
                prop_assert_eq!(e.tier, Tier::Short);
                prop_assert!(e.turn_created + k > turn, "stale short entry {}", e.id);
            }
            for id in &long_seen {
                prop_assert!(m.long().iter().any(|e| &e.id == id), "{} left the long tier", id);
            }
            long_seen.extend(m.long().iter().map(|e| e.id.clone()));
        }
        let again = run_memory(&cfg, &turns);
        prop_assert_eq!(states, again);
    }

    #[test]
    fn mention_counts_match_turns_mentioning(turns in prop::collection::vec(turn_input(), 1..10)) {
        let cfg = MemoryConfig { k_turns: 20, ..MemoryConfig::default() };
        let last = run_memory(&cfg, &turns).pop().unwrap();
        for i in 0u8..6 {
            let expected = turns.iter().filter(|(ids, _)| ids.contains(&i)).count() as u32;
            let got = last.get(&format!("entity:e{i}")).map_or(0, |e| e.mention_count);
            prop_assert_eq!(got, expected);
        }
    }

    #[test]
    fn parsing_is_total_and_plans_are_valid(text in prop_oneof![sentence(), command()]) {
        let intents = parse_command(&text);
        prop_assert!(!intents.is_empty());
        let plan = make_plan(&intents);
        prop_assert!(plan.is_valid());
        prop_assert_eq!(plan.subtasks.len(), intents.len());
        if intents[0].verb != Verb::ClarifyNeeded {
            prop_assert_eq!(parse_command(&canonical_command(&intents)), intents);
        }
    }

    #[test]
    fn grammar_commands_parse(text in command()) {
        let intents = parse_command(&text);
        prop_assert!(intents.iter().all(|i| i.verb != Verb::ClarifyNeeded), "{}", text);
        let then_edges = make_plan(&intents).subtasks.iter().filter(|s| !s.depends_on.is_empty()).count();
        prop_assert_eq!(then_edges, text.matches(" then ").count());
    }

    #[test]
    fn scores_recount_and_are_monotone(outcomes in prop::collection::vec((0usize..3, any::<bool>()), 1..40)) {
        let dims = [Dimension::VisualEntityTracking, Dimension::ReasoningDepth, Dimension::InstructionAdherence];
        let make = |flip: Option<usize>| -> Vec<CheckOutcome> {
            outcomes.iter().enumerate().map(|(i, (d, p))| CheckOutcome {
                turn: 1,
                check: Check::new(dims[*d], CheckKind::AnswerEquals { value: "x".into() }),
                passed: *p || flip == Some(i),
            }).collect()
        };
        let base = scores_from_outcomes(&make(None));
        for (d, s) in &base {
            let idx = dims.iter().position(|x| x == d).unwrap();
            let total = outcomes.iter().filter(|(k, _)| *k == idx).count();
            let passed = outcomes.iter().filter(|(k, p)| *k == idx && *p).count();
            prop_assert_eq!(*s, DimScore::from_counts(passed, total));
            prop_assert!((s.mapped - mapped_scale(s.score)).abs() < 1e-12);
            prop_assert!((1.0..=5.0).contains(&s.mapped));
        }
        if let Some(i) = outcomes.iter().position(|(_, p)| !p) {
            let flipped = scores_from_outcomes(&make(Some(i)));
            for (d, s) in &base {
                prop_assert!(flipped[d].score >= s.score);
            }
        }
    }
}
