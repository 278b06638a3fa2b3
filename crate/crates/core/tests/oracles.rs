//! Library routines checked against independent reference implementations.

mod common;

use groundloop::harness::score::evaluate_checks;
use groundloop::harness::{generate_suite, run_oracle, Profile};
use groundloop::memory::MemoryState;
use groundloop::perception::Percept;
use groundloop::planner::{reason, EntityQuery, Intent, ResolveContext, Verb};
use groundloop::world::{relation_holds, DEFAULT_MARGIN};
use groundloop::SpatialRelation;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn retrieval_matches_exhaustive_scorer() {
    assert_eq!(common::retrieval_mismatches(1000, 41), 0);
}

#[test]
fn relations_match_brute_force() {
    assert_eq!(common::relation_mismatches(1000, 42), 0);
}

#[test]
fn plan_order_matches_reference_sort() {
    assert_eq!(common::plan_order_mismatches(1000, 43), 0);
}

#[test]
fn reference_topo_rejects_cycles() {
    let ids = vec!["a".to_string(), "b".to_string()];
    let deps = vec![vec!["b".to_string()], vec!["a".to_string()]];
    assert_eq!(common::reference_topo(&ids, &deps), None);
}

#[test]
fn one_hop_queries_agree_with_relation_holds() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let memory = MemoryState::default();
    for _ in 0..200 {
        let scene = common::random_relation_scene(&mut rng);
        let mut percept = Percept::empty(0);
        percept.focused_entity_ids = scene.visible_ids();
        let ctx = ResolveContext::new(&memory, &percept, &scene, DEFAULT_MARGIN);
        // only categories with one member can be named unambiguously
        let unique: Vec<&groundloop::Entity> = scene
            .entities
            .iter()
            .filter(|e| scene.entities.iter().filter(|x| x.category == e.category).count() == 1)
            .collect();
        for a in &unique {
            for b in &unique {
                if a.id == b.id {
                    continue;
                }
                for rel in [SpatialRelation::LeftOf, SpatialRelation::Above, SpatialRelation::Inside] {
                    let q = Intent::new(
                        Verb::QueryRelation,
                        Some(EntityQuery::described(&[], &a.category)),
                        Some(rel),
                        Some(EntityQuery::described(&[], &b.category)),
                    );
                    let got = reason(&q, &ctx).unwrap().value == "yes";
                    assert_eq!(got, relation_holds(rel, &a.id, &b.id, &scene, DEFAULT_MARGIN).unwrap());
                }
            }
        }
    }
}

#[test]
fn oracle_agent_passes_generated_suites() {
    for profile in [Profile::Standard, Profile::Extended] {
        for s in generate_suite(5, 30, profile) {
            let transcript = run_oracle(&s);
            for o in evaluate_checks(&transcript, &s).unwrap() {
                assert!(o.passed, "{} turn {}: {:?}", s.id, o.turn, o.check.kind);
            }
        }
    }
}
