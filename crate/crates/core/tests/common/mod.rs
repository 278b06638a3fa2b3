//! Independent reference implementations shared by the oracle tests and the
//! acceptance runner. Each `*_mismatches` function returns how many random
//! cases disagree with the library.

#![allow(dead_code)]

use std::collections::BTreeSet;

use groundloop::memory::{EntryKind, MemoryEntry, Tier};
use groundloop::perception::Percept;
use groundloop::planner::{
    make_plan, reason, topo_order, Connective, EntityQuery, Intent, Objective, ResolveContext, Subtask, Verb,
};
use groundloop::{BBox, Entity, MemoryConfig, MemoryState, SceneWorld, SpatialRelation};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VOCAB: [&str; 12] = [
    "red", "ball", "cup", "left", "of", "point", "the", "box", "blue", "inside", "count", "it",
];

fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn random_text(rng: &mut ChaCha8Rng, max_words: usize) -> String {
    let n = rng.random_range(0..=max_words);
    (0..n)
        .map(|_| *VOCAB.choose(rng).expect("non-empty"))
        .collect::<Vec<_>>()
        .join(if rng.random_bool(0.5) { " " } else { ", " })
}

pub fn random_store(rng: &mut ChaCha8Rng) -> (MemoryState, u32) {
    let n = rng.random_range(0..=100);
    let current = rng.random_range(1..=30u32);
    let kinds = [
        EntryKind::Utterance,
        EntryKind::AgentResponse,
        EntryKind::EntityMention,
        EntryKind::SpatialFact,
        EntryKind::Reflection,
    ];
    let mut short = Vec::new();
    let mut long = Vec::new();
    for i in 0..n {
        let refs: Vec<String> = (0..rng.random_range(0..3))
            .map(|_| format!("e{}", rng.random_range(1..10)))
            .collect();
        let long_tier = rng.random_bool(0.4);
        let e = MemoryEntry {
            id: format!("m{:03}", i),
            kind: *kinds.choose(rng).expect("non-empty"),
            content: random_text(rng, 6),
            entity_refs: refs,
            turn_created: rng.random_range(0..=current),
            last_accessed: 0,
            mention_count: rng.random_range(1..5),
            // coarse values so ties are common
            salience: f64::from(rng.random_range(0..=10u32)) / 10.0,
            tier: if long_tier { Tier::Long } else { Tier::Short },
        };
        if long_tier {
            long.push(e);
        } else {
            short.push(e);
        }
    }
    (MemoryState::from_parts(short, long, MemoryConfig::default(), current), current)
}

/// Scores every entry and ranks each by counting how many entries beat it.
pub fn exhaustive_retrieve(entries: &[MemoryEntry], query: &str, hints: &[String], budget: usize) -> Vec<String> {
    let q: BTreeSet<String> = split_words(query).into_iter().collect();
    let score = |e: &MemoryEntry| {
        let base = if e.entity_refs.iter().any(|r| hints.contains(r)) { 2.0 } else { 0.0 };
        let ratio = if q.is_empty() {
            0.0
        } else {
            let content: BTreeSet<String> = split_words(&e.content).into_iter().collect();
            q.iter().filter(|t| content.contains(*t)).count() as f64 / q.len() as f64
        };
        base + ratio + e.salience
    };
    let scores: Vec<f64> = entries.iter().map(score).collect();
    let beats = |i: usize, j: usize| {
        let (a, b) = (&entries[i], &entries[j]);
        scores[i] > scores[j]
            || (scores[i] == scores[j] && a.turn_created > b.turn_created)
            || (scores[i] == scores[j] && a.turn_created == b.turn_created && a.id < b.id)
    };
    let mut ranked: Vec<(usize, String)> = (0..entries.len())
        .map(|j| ((0..entries.len()).filter(|&i| i != j && beats(i, j)).count(), entries[j].id.clone()))
        .filter(|(rank, _)| *rank < budget)
        .collect();
    ranked.sort();
    ranked.into_iter().map(|(_, id)| id).collect()
}

pub fn retrieval_mismatches(cases: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..cases {
        let (mut state, current) = random_store(&mut rng);
        let entries: Vec<MemoryEntry> = state.entries().cloned().collect();
        let query = random_text(&mut rng, 5);
        let hints: Vec<String> = (0..rng.random_range(0..3))
            .map(|_| format!("e{}", rng.random_range(1..10)))
            .collect();
        let budget = rng.random_range(1..=20);
        let expected = exhaustive_retrieve(&entries, &query, &hints, budget);
        let got = state.retrieve(&query, &hints, budget);
        let got_ids: Vec<String> = got.iter().map(|e| e.id.clone()).collect();
        let touched = got_ids
            .iter()
            .all(|id| state.get(id).is_some_and(|e| e.last_accessed == current));
        if got_ids != expected || !touched {
            bad += 1;
        }
    }
    bad
}

fn random_bbox(rng: &mut ChaCha8Rng, within: Option<BBox>) -> BBox {
    match within {
        Some(o) => {
            let w = o.w() * rng.random_range(0.1..0.9);
            let h = o.h() * rng.random_range(0.1..0.9);
            let x = o.x() + rng.random_range(0.0..(o.w() - w));
            let y = o.y() + rng.random_range(0.0..(o.h() - h));
            BBox::new(x, y, w, h).expect("nested boxes stay in the square")
        }
        None => {
            let w = rng.random_range(0.02..0.5);
            let h = rng.random_range(0.02..0.5);
            let x = rng.random_range(0.0..(1.0 - w));
            let y = rng.random_range(0.0..(1.0 - h));
            BBox::new(x, y, w, h).expect("boxes stay in the square")
        }
    }
}

pub fn random_relation_scene(rng: &mut ChaCha8Rng) -> SceneWorld {
    let n = rng.random_range(2..=8);
    let cats = ["ball", "cup", "box"];
    let mut boxes: Vec<BBox> = Vec::new();
    for _ in 0..n {
        let b = if !boxes.is_empty() && rng.random_bool(0.3) {
            let outer = *boxes.choose(rng).expect("non-empty");
            random_bbox(rng, Some(outer))
        } else if !boxes.is_empty() && rng.random_bool(0.1) {
            *boxes.choose(rng).expect("non-empty")
        } else {
            random_bbox(rng, None)
        };
        boxes.push(b);
    }
    let entities = boxes
        .into_iter()
        .enumerate()
        .map(|(i, b)| Entity::new(format!("e{}", i + 1), *cats.choose(rng).expect("non-empty"), b))
        .collect();
    SceneWorld::new(entities).expect("unique ids")
}

/// Relations read straight off the box corners.
pub fn brute_relation(rel: SpatialRelation, a: &BBox, b: &BBox, margin: f64) -> bool {
    let (ax0, ay0, ax1, ay1) = (a.x(), a.y(), a.x() + a.w(), a.y() + a.h());
    let (bx0, by0, bx1, by1) = (b.x(), b.y(), b.x() + b.w(), b.y() + b.h());
    let acx = (ax0 + ax1) / 2.0;
    let acy = (ay0 + ay1) / 2.0;
    let bcx = (bx0 + bx1) / 2.0;
    let bcy = (by0 + by1) / 2.0;
    let within = |ix0: f64, iy0: f64, ix1: f64, iy1: f64, ox0: f64, oy0: f64, ox1: f64, oy1: f64| {
        [(ix0, iy0), (ix1, iy0), (ix0, iy1), (ix1, iy1)]
            .iter()
            .all(|&(px, py)| px >= ox0 - 1e-9 && px <= ox1 + 1e-9 && py >= oy0 - 1e-9 && py <= oy1 + 1e-9)
    };
    match rel {
        SpatialRelation::LeftOf => acx + margin < bcx,
        SpatialRelation::RightOf => acx > bcx + margin,
        SpatialRelation::Above => acy + margin < bcy,
        SpatialRelation::Below => acy > bcy + margin,
        SpatialRelation::Contains => within(bx0, by0, bx1, by1, ax0, ay0, ax1, ay1),
        SpatialRelation::Inside => within(ax0, ay0, ax1, ay1, bx0, by0, bx1, by1),
        SpatialRelation::Overlaps => ax0.max(bx0) < ax1.min(bx1) && ay0.max(by0) < ay1.min(by1),
    }
}

/// Pairwise relations plus "what is <rel> the <category>" enumeration.
pub fn relation_mismatches(cases: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let margin = groundloop::world::DEFAULT_MARGIN;
    let mut bad = 0;
    for _ in 0..cases {
        let scene = random_relation_scene(&mut rng);
        let mut scene_bad = false;
        for a in &scene.entities {
            for b in &scene.entities {
                if a.id == b.id {
                    continue;
                }
                for rel in SpatialRelation::ALL {
                    let got = groundloop::world::relation_holds(rel, &a.id, &b.id, &scene, margin).expect("visible pair");
                    if got != brute_relation(rel, &a.bbox, &b.bbox, margin) {
                        scene_bad = true;
                    }
                }
            }
        }
        let rel = *[
            SpatialRelation::LeftOf,
            SpatialRelation::RightOf,
            SpatialRelation::Above,
            SpatialRelation::Below,
            SpatialRelation::Inside,
            SpatialRelation::Contains,
        ]
        .choose(&mut rng)
        .expect("non-empty");
        let cat = *["ball", "cup", "box"].choose(&mut rng).expect("non-empty");
        let intent = Intent::new(Verb::QueryWhat, None, Some(rel), Some(EntityQuery::described(&[], cat)));
        let memory = MemoryState::default();
        let percept = Percept::empty(0);
        let ctx = ResolveContext::new(&memory, &percept, &scene, margin);
        let got = reason(&intent, &ctx).expect("what-queries always answer").value;
        let mut hits: Vec<&str> = scene
            .entities
            .iter()
            .filter(|x| {
                scene
                    .entities
                    .iter()
                    .any(|y| y.id != x.id && y.category == cat && brute_relation(rel, &x.bbox, &y.bbox, margin))
            })
            .map(|x| x.id.as_str())
            .collect();
        hits.sort();
        let expected = if hits.is_empty() {
            "none".to_string()
        } else {
            hits.iter().map(|h| format!("[{h}]")).collect::<Vec<_>>().join(" ")
        };
        if got != expected {
            scene_bad = true;
        }
        if scene_bad {
            bad += 1;
        }
    }
    bad
}

/// Stable topological sort by repeated selection: the earliest input
/// position whose dependencies are all placed goes next.
pub fn reference_topo(ids: &[String], deps: &[Vec<String>]) -> Option<Vec<String>> {
    let mut placed: Vec<String> = Vec::new();
    let mut used = vec![false; ids.len()];
    while placed.len() < ids.len() {
        let next = (0..ids.len()).find(|&i| !used[i] && deps[i].iter().all(|d| placed.contains(d)))?;
        used[next] = true;
        placed.push(ids[next].clone());
    }
    Some(placed)
}

pub fn plan_order_mismatches(cases: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..cases {
        // random DAG over creation order, presented in shuffled order
        let n = rng.random_range(1..=12);
        let mut subtasks: Vec<Subtask> = (0..n)
            .map(|i| {
                let mut s = Subtask::new(format!("s{}", i + 1), Objective::PassThrough(format!("step {i}")));
                for j in 0..i {
                    if rng.random_bool(0.25) {
                        s.depends_on.push(format!("s{}", j + 1));
                    }
                }
                s
            })
            .collect();
        subtasks.shuffle(&mut rng);
        let ids: Vec<String> = subtasks.iter().map(|s| s.id.clone()).collect();
        let deps: Vec<Vec<String>> = subtasks.iter().map(|s| s.depends_on.clone()).collect();
        let expected = reference_topo(&ids, &deps);
        let got = topo_order(subtasks)
            .ok()
            .map(|v| v.into_iter().map(|s| s.id).collect::<Vec<_>>());
        if got != expected {
            bad += 1;
        }

        // plans built from clause lists
        let k = rng.random_range(1..=5);
        let intents: Vec<Intent> = (0..k)
            .map(|i| {
                let mut it = Intent::new(Verb::Count, Some(EntityQuery::described(&[], "balls")), None, None);
                if i > 0 {
                    it.connective = if rng.random_bool(0.5) { Connective::Then } else { Connective::And };
                }
                it
            })
            .collect();
        let plan = make_plan(&intents);
        let ids: Vec<String> = (1..=k).map(|i| format!("s{i}")).collect();
        let deps: Vec<Vec<String>> = intents
            .iter()
            .enumerate()
            .map(|(i, it)| {
                if i > 0 && it.connective == Connective::Then {
                    vec![format!("s{i}")]
                } else {
                    Vec::new()
                }
            })
            .collect();
        let got: Vec<String> = plan.subtasks.iter().map(|s| s.id.clone()).collect();
        if Some(got) != reference_topo(&ids, &deps) || !plan.is_valid() {
            bad += 1;
        }
    }
    bad
}
