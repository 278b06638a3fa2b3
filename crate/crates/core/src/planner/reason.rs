//! Relational reasoning over the scene: yes/no relation queries, "what is"
//! enumeration, counting, and relative-clause filters composed up to
//! [`MAX_DEPTH`] hops.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::reference::{resolve_reference, ResolveContext};
use super::{EntityQuery, Intent, PlanError, Verb};
use crate::text::names_category;
use crate::world::{boxes_relate, relation_holds, BBox, Entity, SceneWorld, SpatialRelation};

pub const MAX_DEPTH: usize = 3;

/// One relation checked while answering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub rel: SpatialRelation,
    pub a: String,
    pub b: String,
    pub holds: bool,
}

impl fmt::Display for Hop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.holds {
            write!(f, "REL {} {} {}", self.rel, self.a, self.b)
        } else {
            write!(f, "NOT {} {} {}", self.rel, self.a, self.b)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub value: String,
    pub derivation: Vec<Hop>,
}

fn matches_base(e: &Entity, attributes: &[String], category: &str) -> bool {
    names_category(category, &e.category) && attributes.iter().all(|a| e.attributes.values().any(|v| v == a))
}

/// Visible entities satisfying a description, each with the hops that witness
/// its relative clauses. Pronouns resolve to a single entity.
pub fn eval_description(desc: &EntityQuery, ctx: &ResolveContext) -> Result<BTreeMap<String, Vec<Hop>>, PlanError> {
    if desc.depth() > MAX_DEPTH {
        return Err(PlanError::DepthExceeded(desc.depth()));
    }
    match desc {
        EntityQuery::Pronoun { .. } => {
            let id = resolve_reference(desc, ctx, &[])?;
            Ok(BTreeMap::from([(id, Vec::new())]))
        }
        EntityQuery::Description {
            attributes,
            category,
            relative,
        } => {
            let inner = match relative {
                Some(rc) => Some((rc.relation, eval_description(&rc.object, ctx)?)),
                None => None,
            };
            let mut out = BTreeMap::new();
            let mut base: Vec<&Entity> = ctx
                .scene
                .visible()
                .filter(|e| matches_base(e, attributes, category))
                .collect();
            base.sort_by(|a, b| a.id.cmp(&b.id));
            for e in base {
                match &inner {
                    None => {
                        out.insert(e.id.clone(), Vec::new());
                    }
                    Some((rel, objects)) => {
                        let witness = objects.iter().find(|(y, _)| {
                            **y != e.id
                                && ctx
                                    .scene
                                    .get(y)
                                    .is_some_and(|ey| boxes_relate(*rel, &e.bbox, &ey.bbox, ctx.margin))
                        });
                        if let Some((y, chain)) = witness {
                            let mut hops = vec![Hop {
                                rel: *rel,
                                a: e.id.clone(),
                                b: y.clone(),
                                holds: true,
                            }];
                            hops.extend(chain.iter().cloned());
                            out.insert(e.id.clone(), hops);
                        }
                    }
                }
            }
            Ok(out)
        }
    }
}

fn witness(desc: &EntityQuery, id: &str, ctx: &ResolveContext) -> Result<Vec<Hop>, PlanError> {
    if desc.is_pronoun() {
        return Ok(Vec::new());
    }
    Ok(eval_description(desc, ctx)?.remove(id).unwrap_or_default())
}

/// Answers a query intent (`query_relation`, `query_what` or `count`).
pub fn reason(query: &Intent, ctx: &ResolveContext) -> Result<Answer, PlanError> {
    let depth = |q: &Option<EntityQuery>| q.as_ref().map_or(0, EntityQuery::depth);
    let need = |q: &Option<EntityQuery>| q.clone().ok_or_else(|| PlanError::NotAQuery(query.canonical()));
    match query.verb {
        Verb::QueryRelation => {
            let d = 1 + depth(&query.target).max(depth(&query.object2));
            if d > MAX_DEPTH {
                return Err(PlanError::DepthExceeded(d));
            }
            let rel = query.relation.ok_or_else(|| PlanError::NotAQuery(query.canonical()))?;
            let (target, object) = (need(&query.target)?, need(&query.object2)?);
            let b = resolve_reference(&object, ctx, &[])?;
            let a = resolve_reference(&target, ctx, std::slice::from_ref(&b))?;
            let holds = relation_holds(rel, &a, &b, ctx.scene, ctx.margin)?;
            let mut derivation = witness(&target, &a, ctx)?;
            derivation.extend(witness(&object, &b, ctx)?);
            derivation.push(Hop { rel, a, b, holds });
            Ok(Answer {
                value: if holds { "yes" } else { "no" }.to_string(),
                derivation,
            })
        }
        Verb::QueryWhat => {
            let d = 1 + depth(&query.object2);
            if d > MAX_DEPTH {
                return Err(PlanError::DepthExceeded(d));
            }
            let rel = query.relation.ok_or_else(|| PlanError::NotAQuery(query.canonical()))?;
            let objects = eval_description(&need(&query.object2)?, ctx)?;
            let mut visible: Vec<&Entity> = ctx.scene.visible().collect();
            visible.sort_by(|a, b| a.id.cmp(&b.id));
            let mut found = Vec::new();
            let mut derivation = Vec::new();
            for x in visible {
                let hit = objects.keys().find(|s| {
                    **s != x.id
                        && ctx
                            .scene
                            .get(s)
                            .is_some_and(|es| boxes_relate(rel, &x.bbox, &es.bbox, ctx.margin))
                });
                if let Some(s) = hit {
                    derivation.push(Hop {
                        rel,
                        a: x.id.clone(),
                        b: s.clone(),
                        holds: true,
                    });
                    found.push(format!("[{}]", x.id));
                }
            }
            let value = if found.is_empty() { "none".to_string() } else { found.join(" ") };
            Ok(Answer { value, derivation })
        }
        Verb::Count => {
            let d = depth(&query.target);
            if d > MAX_DEPTH {
                return Err(PlanError::DepthExceeded(d));
            }
            let matched = eval_description(&need(&query.target)?, ctx)?;
            Ok(Answer {
                value: matched.len().to_string(),
                derivation: matched.into_values().flatten().collect(),
            })
        }
        _ => Err(PlanError::NotAQuery(query.canonical())),
    }
}

/// `[id] <attribute values> <category>`, followed by `(key=value, ...)` when the entity has state.
pub fn describe_entity(e: &Entity) -> String {
    let mut s = format!("[{}] {}", e.id, e.description());
    if !e.state.is_empty() {
        let st: Vec<String> = e.state.iter().map(|(k, v)| format!("{k}={v}")).collect();
        s.push_str(&format!(" ({})", st.join(", ")));
    }
    s
}

/// Extra clearance beyond the margin when placing an entity.
const PLACEMENT_SLACK: f64 = 0.05;

/// A box for `a` (same size) making `rel(a, b)` hold, or `None` if no tried
/// placement works. Directional moves keep the other axis unchanged.
pub fn place_relative(scene: &SceneWorld, a: &str, rel: SpatialRelation, b: &str, margin: f64) -> Option<BBox> {
    let ea = scene.get(a)?;
    let eb = scene.get(b)?;
    if a == b {
        return None;
    }
    let (ax, ay) = ea.bbox.center();
    let (bx, by) = eb.bbox.center();
    let (w, h) = (ea.bbox.w(), ea.bbox.h());
    let candidates: Vec<(f64, f64)> = match rel {
        SpatialRelation::LeftOf => vec![
            (bx - margin - PLACEMENT_SLACK, ay),
            ((w / 2.0 + bx - margin) / 2.0, ay),
        ],
        SpatialRelation::RightOf => vec![
            (bx + margin + PLACEMENT_SLACK, ay),
            ((bx + margin + 1.0 - w / 2.0) / 2.0, ay),
        ],
        SpatialRelation::Above => vec![
            (ax, by - margin - PLACEMENT_SLACK),
            (ax, (h / 2.0 + by - margin) / 2.0),
        ],
        SpatialRelation::Below => vec![
            (ax, by + margin + PLACEMENT_SLACK),
            (ax, (by + margin + 1.0 - h / 2.0) / 2.0),
        ],
        SpatialRelation::Inside | SpatialRelation::Contains | SpatialRelation::Overlaps => vec![(bx, by)],
    };
    candidates.into_iter().find_map(|(cx, cy)| {
        let placed = BBox::centered_at(cx, cy, w, h).ok()?;
        boxes_relate(rel, &placed, &eb.bbox, margin).then_some(placed)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::MemoryState;
    use crate::perception::Percept;
    use crate::planner::parse_command;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    fn scene() -> SceneWorld {
        SceneWorld::new(vec![
            Entity::new("e1", "ball", bb(0.1, 0.4, 0.1, 0.1)).with_attr("color", "red"),
            Entity::new("e2", "ball", bb(0.6, 0.4, 0.1, 0.1)).with_attr("color", "blue"),
            Entity::new("e3", "cup", bb(0.4, 0.4, 0.1, 0.1)).with_attr("color", "green"),
            Entity::new("e4", "ball", bb(0.82, 0.72, 0.06, 0.06)).with_attr("color", "green"),
            Entity::new("e5", "box", bb(0.75, 0.65, 0.2, 0.2)).with_attr("color", "red"),
        ])
        .unwrap()
    }

    fn ask(text: &str, s: &SceneWorld) -> Result<Answer, PlanError> {
        let mem = MemoryState::default();
        let mut p = Percept::empty(0);
        p.focused_entity_ids = s.visible_ids();
        let ctx = ResolveContext::new(&mem, &p, s, 0.05);
        reason(&parse_command(text)[0], &ctx)
    }

    #[test]
    fn one_hop_relation() {
        let s = scene();
        let a = ask("is the red ball left of the green cup", &s).unwrap();
        assert_eq!(a.value, "yes");
        assert_eq!(a.derivation.last().unwrap().to_string(), "REL LeftOf e1 e3");
        assert_eq!(ask("is the red ball right of the green cup", &s).unwrap().value, "no");
    }

    #[test]
    fn counting_and_enumeration() {
        let s = scene();
        assert_eq!(ask("count the balls", &s).unwrap().value, "3");
        assert_eq!(ask("what is left of the green cup", &s).unwrap().value, "[e1]");
        assert_eq!(ask("what is inside the red box", &s).unwrap().value, "[e4]");
        assert_eq!(ask("what is above the red ball", &s).unwrap().value, "none");
    }

    #[test]
    fn two_hops() {
        let s = scene();
        let a = ask("count the balls that is right of the cup that is right of the red ball", &s).unwrap();
        assert_eq!(a.value, "2");
        assert_eq!(ask("is the ball that is inside the box right of the cup", &s).unwrap().value, "yes");
    }

    #[test]
    fn depth_limit() {
        let s = scene();
        let deep = "is the ball that is left of the cup that is left of the ball that is left of the cup above the box";
        assert!(matches!(ask(deep, &s), Err(PlanError::DepthExceeded(4))));
    }

    #[test]
    fn describes_with_state() {
        let mut e = Entity::new("e7", "cup", bb(0.1, 0.1, 0.1, 0.1)).with_attr("color", "red");
        assert_eq!(describe_entity(&e), "[e7] red cup");
        e.state.insert("held".into(), "true".into());
        assert_eq!(describe_entity(&e), "[e7] red cup (held=true)");
    }

    #[test]
    fn placement_satisfies_relation() {
        let s = scene();
        for rel in [SpatialRelation::LeftOf, SpatialRelation::RightOf, SpatialRelation::Above, SpatialRelation::Below] {
            let b = place_relative(&s, "e3", rel, "e2", 0.05).unwrap();
            assert!(boxes_relate(rel, &b, &s.get("e2").unwrap().bbox, 0.05), "{rel}");
        }
        let b = place_relative(&s, "e4", SpatialRelation::Inside, "e5", 0.05).unwrap();
        assert!(s.get("e5").unwrap().bbox.contains(&b));
        assert!(place_relative(&s, "e5", SpatialRelation::Inside, "e4", 0.05).is_none());
        // nothing fits left of an entity hugging the left edge
        assert!(place_relative(&s, "e2", SpatialRelation::LeftOf, "e1", 0.25).is_none());
    }
}
