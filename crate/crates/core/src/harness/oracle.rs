//! Reference agent that reads the ground-truth scene and the scenario's
//! annotations directly.
//!
//! It shares no resolution, relation or placement code with the agent:
//! descriptions are matched by exhaustive search, ambiguous mentions and
//! pronouns use the annotated targets, and moves pick the grid point
//! nearest the current position that satisfies the requested relation.
//! On generated scenarios it should pass every check.

use super::scenario::Scenario;
use crate::agent::TurnRecord;
use crate::executor::{ActionKind, AgentAction};
use crate::planner::{make_plan, parse_command, EntityQuery, Intent, SubtaskStatus, Verb};
use crate::world::{apply_events, BBox, Entity, SceneWorld, SpatialRelation, WorldEvent};

fn center(b: &BBox) -> (f64, f64) {
    (b.x() + b.w() / 2.0, b.y() + b.h() / 2.0)
}

fn inside(inner: &BBox, outer: &BBox) -> bool {
    const TOL: f64 = 1e-9;
    inner.x() + TOL >= outer.x()
        && inner.y() + TOL >= outer.y()
        && inner.x() + inner.w() <= outer.x() + outer.w() + TOL
        && inner.y() + inner.h() <= outer.y() + outer.h() + TOL
}

/// Relation predicate written from the definitions, independent of the world module.
pub fn oracle_relation(rel: SpatialRelation, a: &BBox, b: &BBox, margin: f64) -> bool {
    let (ax, ay) = center(a);
    let (bx, by) = center(b);
    match rel {
        SpatialRelation::LeftOf => bx - ax > margin,
        SpatialRelation::RightOf => ax - bx > margin,
        SpatialRelation::Above => by - ay > margin,
        SpatialRelation::Below => ay - by > margin,
        SpatialRelation::Inside => inside(a, b),
        SpatialRelation::Contains => inside(b, a),
        SpatialRelation::Overlaps => {
            let w = (a.x() + a.w()).min(b.x() + b.w()) - a.x().max(b.x());
            let h = (a.y() + a.h()).min(b.y() + b.h()) - a.y().max(b.y());
            w > 0.0 && h > 0.0
        }
    }
}

fn word_names(word: &str, category: &str) -> bool {
    [category.to_string(), format!("{category}s"), format!("{category}es")]
        .iter()
        .any(|f| f == word)
}

/// Every visible entity satisfying the description, sorted by id.
fn all_matching(scene: &SceneWorld, q: &EntityQuery, margin: f64) -> Vec<String> {
    let EntityQuery::Description {
        attributes,
        category,
        relative,
    } = q
    else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for e in scene.entities.iter().filter(|e| e.visible) {
        if !word_names(category, &e.category) {
            continue;
        }
        if !attributes.iter().all(|a| e.attributes.values().any(|v| v == a)) {
            continue;
        }
        if let Some(rc) = relative {
            let objects = all_matching(scene, &rc.object, margin);
            let ok = objects.iter().any(|o| {
                o != &e.id
                    && scene
                        .entities
                        .iter()
                        .any(|x| &x.id == o && oracle_relation(rc.relation, &e.bbox, &x.bbox, margin))
            });
            if !ok {
                continue;
            }
        }
        out.push(e.id.clone());
    }
    out.sort();
    out
}

fn find<'a>(scene: &'a SceneWorld, id: &str) -> Option<&'a Entity> {
    scene.entities.iter().find(|e| e.id == id && e.visible)
}

fn describe(e: &Entity) -> String {
    let mut parts: Vec<String> = vec![format!("[{}]", e.id)];
    parts.extend(e.attributes.values().cloned());
    parts.push(e.category.clone());
    let mut s = parts.join(" ");
    if !e.state.is_empty() {
        let kv: Vec<String> = e.state.iter().map(|(k, v)| format!("{k}={v}")).collect();
        s = format!("{s} ({})", kv.join(", "));
    }
    s
}

/// Nearest grid position (same size) making `rel(a, b)` hold.
fn grid_place(scene: &SceneWorld, a: &str, rel: SpatialRelation, b: &str, margin: f64) -> Option<BBox> {
    let ea = find(scene, a)?;
    let eb = find(scene, b)?;
    let (w, h) = (ea.bbox.w(), ea.bbox.h());
    let (cx, cy) = center(&ea.bbox);
    let mut best: Option<(f64, BBox)> = None;
    const STEPS: usize = 200;
    for i in 0..=STEPS {
        for j in 0..=STEPS {
            let x = (1.0 - w) * i as f64 / STEPS as f64;
            let y = (1.0 - h) * j as f64 / STEPS as f64;
            let Ok(bb) = BBox::new(x, y, w, h) else { continue };
            // a hair past the margin, so boundary rounding cannot flip the relation
            if !oracle_relation(rel, &bb, &eb.bbox, margin + 1e-6) {
                continue;
            }
            let (nx, ny) = center(&bb);
            let d = (nx - cx).powi(2) + (ny - cy).powi(2);
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, bb));
            }
        }
    }
    best.map(|(_, b)| b)
}

struct Resolver<'a> {
    scene: &'a SceneWorld,
    margin: f64,
    hint: Option<&'a str>,
    recent: Option<&'a str>,
}

impl Resolver<'_> {
    fn one(&self, q: &EntityQuery) -> Option<String> {
        if q.is_pronoun() {
            return self.hint.or(self.recent).filter(|id| find(self.scene, id).is_some()).map(str::to_string);
        }
        let matches = all_matching(self.scene, q, self.margin);
        match matches.len() {
            0 => None,
            1 => matches.into_iter().next(),
            _ => self.hint.filter(|h| matches.iter().any(|m| m == h)).map(str::to_string),
        }
    }
}

fn clarify(q: Option<&EntityQuery>) -> ActionKind {
    ActionKind::Clarify {
        question: match q {
            Some(q) => format!("which {} do you mean?", q.canonical()),
            None => "could you rephrase that?".to_string(),
        },
    }
}

fn answer_text(kind: &ActionKind) -> String {
    match kind {
        ActionKind::Respond { text } => text.clone(),
        ActionKind::Clarify { question } => question.clone(),
        ActionKind::Point { entity_id, .. } => format!("pointed at [{entity_id}]"),
        ActionKind::Highlight { entity_ids } => entity_ids.iter().map(|i| format!("[{i}]")).collect::<Vec<_>>().join(" "),
        ActionKind::WorldEvent { event } => format!("moved [{}]", event.target()),
    }
}

/// Executes one clause. Returns the action and the entity it bound, if any.
fn act(intent: &Intent, scene: &mut SceneWorld, r: &Resolver) -> (ActionKind, Option<String>) {
    let target = intent.target.as_ref();
    let object = intent.object2.as_ref();
    match intent.verb {
        Verb::Point => match target.and_then(|q| r.one(q)) {
            Some(id) => {
                let bbox = find(scene, &id).map(|e| e.bbox);
                (ActionKind::Point { entity_id: id.clone(), bbox }, Some(id))
            }
            None => (clarify(target), None),
        },
        Verb::Describe => match target.and_then(|q| r.one(q)) {
            Some(id) => {
                let text = describe(find(scene, &id).expect("resolved ids are visible"));
                (ActionKind::Respond { text }, Some(id))
            }
            None => (clarify(target), None),
        },
        Verb::Count => match target {
            Some(q) => (
                ActionKind::Respond {
                    text: all_matching(scene, q, r.margin).len().to_string(),
                },
                None,
            ),
            None => (clarify(None), None),
        },
        Verb::QueryRelation => {
            let (Some(rel), Some(t), Some(o)) = (intent.relation, target, object) else {
                return (clarify(None), None);
            };
            let b = Resolver { hint: None, ..*r }.one(o);
            let a = r.one(t);
            match (a, b) {
                (Some(a), Some(b)) if a != b => {
                    let (ea, eb) = (find(scene, &a).expect("visible"), find(scene, &b).expect("visible"));
                    let yes = oracle_relation(rel, &ea.bbox, &eb.bbox, r.margin);
                    (
                        ActionKind::Respond {
                            text: if yes { "yes" } else { "no" }.to_string(),
                        },
                        Some(a),
                    )
                }
                _ => (clarify(target), None),
            }
        }
        Verb::QueryWhat => {
            let (Some(rel), Some(o)) = (intent.relation, object) else {
                return (clarify(None), None);
            };
            let objects = all_matching(scene, o, r.margin);
            let mut hits: Vec<&Entity> = scene
                .entities
                .iter()
                .filter(|e| e.visible)
                .filter(|e| {
                    objects
                        .iter()
                        .filter(|id| **id != e.id)
                        .filter_map(|id| find(scene, id))
                        .any(|x| oracle_relation(rel, &e.bbox, &x.bbox, r.margin))
                })
                .collect();
            hits.sort_by(|x, y| x.id.cmp(&y.id));
            let text = if hits.is_empty() {
                "none".to_string()
            } else {
                hits.iter().map(|e| format!("[{}]", e.id)).collect::<Vec<_>>().join(" ")
            };
            (ActionKind::Respond { text }, None)
        }
        Verb::Move => {
            let (Some(rel), Some(t), Some(o)) = (intent.relation, target, object) else {
                return (clarify(None), None);
            };
            let b = Resolver { hint: None, ..*r }.one(o);
            let a = r.one(t);
            let (Some(a), Some(b)) = (a, b) else {
                return (clarify(target), None);
            };
            match grid_place(scene, &a, rel, &b, r.margin) {
                Some(bbox) => {
                    let event = WorldEvent::Move { id: a.clone(), bbox };
                    *scene = apply_events(scene, std::slice::from_ref(&event)).expect("grid boxes are valid");
                    (ActionKind::WorldEvent { event }, Some(a))
                }
                None => (clarify(target), None),
            }
        }
        Verb::ClarifyNeeded => (clarify(None), None),
    }
}

/// Transcript of the oracle agent on `scenario`.
pub fn run_oracle(scenario: &Scenario) -> Vec<TurnRecord> {
    let mut scene = scenario.scene.clone();
    let mut out = Vec::with_capacity(scenario.turns.len());
    for (i, turn) in scenario.turns.iter().enumerate() {
        let (mut next, rejected) = match apply_events(&scene, &turn.events) {
            Ok(s) => (s, None),
            Err(e) => (scene.clone(), Some(e.to_string())),
        };
        let intents: Vec<Intent> = if rejected.is_some() {
            vec![Intent::clarify()]
        } else if turn.intents.is_empty() {
            parse_command(&turn.instruction)
        } else {
            turn.intents.iter().flat_map(|c| parse_command(c)).collect()
        };
        let mut plan = make_plan(&intents);
        let mut actions = Vec::new();
        let mut recent: Option<String> = None;
        for (k, intent) in intents.iter().enumerate() {
            let hint = turn.targets.get(k).cloned().flatten();
            let (kind, bound) = {
                let snapshot = next.clone();
                let r = Resolver {
                    scene: &snapshot,
                    margin: scenario.margin,
                    hint: hint.as_deref(),
                    recent: recent.as_deref(),
                };
                act(intent, &mut next, &r)
            };
            if bound.is_some() {
                recent = bound;
            }
            let sub = &mut plan.subtasks[k];
            actions.push(AgentAction::new(kind, sub.id.clone(), 1));
            sub.transition(SubtaskStatus::Active).expect("fresh plan");
            sub.transition(SubtaskStatus::Done).expect("active subtask");
        }
        let summary = actions.iter().map(|a| answer_text(&a.kind)).collect::<Vec<_>>().join(" | ");
        actions.push(AgentAction::new(
            ActionKind::Respond { text: summary },
            crate::executor::SUMMARY_SUBTASK,
            1,
        ));
        scene = next;
        out.push(TurnRecord {
            turn: i as u32 + 1,
            instruction: turn.instruction.clone(),
            events: turn.events.clone(),
            events_rejected: rejected,
            intents: intents.iter().map(Intent::canonical).collect(),
            plan,
            actions,
            scene_after: scene.clone(),
            duration_ms: None,
        });
    }
    out
}
