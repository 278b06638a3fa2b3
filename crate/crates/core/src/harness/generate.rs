//! Seeded scenario generator.
//!
//! Every scenario opens by pointing at a protagonist entity and referring
//! back to it with a pronoun. Memory-stress scenarios then run two or more
//! filler turns that mention no entity before referring to the protagonist
//! again, so the reference can only be resolved from memory. Instructions
//! are emitted in canonical grammar form, so the annotated intents equal
//! the parsed clause canonicals.
//!
//! Instructions whose targets could be crowded out of the attention window
//! are rejected at generation time; see [`Builder::focus_ok`].

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scenario::{Check, CheckKind, Dimension, Scenario, ScenarioTurn};
use super::suite::session_seed;
use crate::executor::ActionTag;
use crate::planner::{place_relative, EntityQuery, Intent, Verb};
use crate::text::{names_category, tokens};
use crate::world::{apply_event, boxes_relate, BBox, Entity, SceneWorld, SpatialRelation, WorldEvent, DEFAULT_MARGIN};

pub const CATEGORIES: [&str; 8] = ["ball", "cup", "box", "book", "lamp", "plant", "vase", "mug"];
pub const COLORS: [&str; 6] = ["red", "blue", "green", "yellow", "black", "white"];
/// Colors no generated entity has; used for hallucination bait.
pub const BAIT_COLORS: [&str; 3] = ["purple", "orange", "pink"];
pub const CONTAINER: &str = "tray";

/// Matches the default attention window.
const FOCUS: usize = 5;
const DIRECTIONAL: [SpatialRelation; 4] = [
    SpatialRelation::LeftOf,
    SpatialRelation::RightOf,
    SpatialRelation::Above,
    SpatialRelation::Below,
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// 5 to 7 turns.
    #[default]
    Standard,
    /// 8 to 10 turns, with long-range references late in the dialogue.
    Extended,
}

impl Profile {
    pub fn prefix(self) -> &'static str {
        match self {
            Profile::Standard => "gen",
            Profile::Extended => "ext",
        }
    }

    fn turn_range(self) -> (usize, usize) {
        match self {
            Profile::Standard => (5, 7),
            Profile::Extended => (8, 10),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Standard => "standard",
            Profile::Extended => "extended",
        })
    }
}

impl FromStr for Profile {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(Profile::Standard),
            "extended" => Ok(Profile::Extended),
            _ => Err(format!("unknown profile `{s}` (expected standard or extended)")),
        }
    }
}

pub fn scenario_id(seed: u64, index: usize, profile: Profile) -> String {
    format!("{}-{seed}-{index:03}", profile.prefix())
}

pub fn generate_suite(seed: u64, n: usize, profile: Profile) -> Vec<Scenario> {
    (0..n)
        .map(|i| generate_scenario(&scenario_id(seed, i, profile), seed, profile))
        .collect()
}

/// Deterministic in `(id, seed, profile)`.
pub fn generate_scenario(id: &str, seed: u64, profile: Profile) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(session_seed(seed, id));
    loop {
        let scene = random_scene(&mut rng);
        if let Some(s) = Builder::new(&mut rng, scene, profile).build(id) {
            return s;
        }
    }
}

fn floor3(v: f64) -> f64 {
    (v * 1000.0).floor() / 1000.0
}

fn random_box(rng: &mut ChaCha8Rng, occupied: &[BBox], size: (f64, f64), within: Option<&BBox>) -> Option<BBox> {
    let (x0, y0, x1, y1) = match within {
        Some(b) => (b.x() + 0.01, b.y() + 0.01, b.x() + b.w() - 0.01, b.y() + b.h() - 0.01),
        None => (0.0, 0.0, 1.0, 1.0),
    };
    for _ in 0..200 {
        let w = floor3(rng.random_range(size.0..=size.1));
        let h = floor3(rng.random_range(size.0..=size.1));
        if x1 - x0 <= w || y1 - y0 <= h {
            return None;
        }
        let x = floor3(rng.random_range(x0..(x1 - w))).max(x0);
        let y = floor3(rng.random_range(y0..(y1 - h))).max(y0);
        let Ok(b) = BBox::new(x, y, w, h) else { continue };
        if occupied.iter().all(|o| o.intersection_area(&b) == 0.0) {
            return Some(b);
        }
    }
    None
}

fn unused_color(rng: &mut ChaCha8Rng, scene_entities: &[Entity], category: &str) -> Option<&'static str> {
    let free: Vec<&'static str> = COLORS
        .iter()
        .copied()
        .filter(|c| {
            !scene_entities
                .iter()
                .any(|e| e.category == category && e.attributes.get("color").map(String::as_str) == Some(*c))
        })
        .collect();
    free.choose(rng).copied()
}

/// 4 to 7 objects with unique (color, category) pairs and at least one
/// repeated category, plus an optional tray holding one of them.
pub fn random_scene(rng: &mut ChaCha8Rng) -> SceneWorld {
    loop {
        let mut entities: Vec<Entity> = Vec::new();
        let mut occupied: Vec<BBox> = Vec::new();
        let mut next = 1;
        let mut inner_slot = None;
        if rng.random_bool(0.4) {
            if let Some(b) = random_box(rng, &[], (0.3, 0.4), None) {
                let color = COLORS.choose(rng).copied().unwrap_or("black");
                entities.push(Entity::new(format!("e{next}"), CONTAINER, b).with_attr("color", color));
                next += 1;
                occupied.push(b);
                inner_slot = Some(b);
            }
        }
        let n = rng.random_range(4..=7);
        let repeated = *CATEGORIES.choose(rng).expect("non-empty");
        let mut ok = true;
        for i in 0..n {
            let category = if i < 2 { repeated } else { *CATEGORIES.choose(rng).expect("non-empty") };
            let Some(color) = unused_color(rng, &entities, category) else {
                ok = false;
                break;
            };
            let bbox = match inner_slot.take() {
                Some(tray) => random_box(rng, &[], (0.08, 0.12), Some(&tray)),
                None => random_box(rng, &occupied, (0.08, 0.16), None),
            };
            let Some(bbox) = bbox else {
                ok = false;
                break;
            };
            if !entities.iter().any(|e| e.category == CONTAINER && e.bbox.contains(&bbox)) {
                occupied.push(bbox);
            }
            let mut e = Entity::new(format!("e{next}"), category, bbox).with_attr("color", color);
            if rng.random_bool(0.25) {
                e = e.with_attr("size", if rng.random_bool(0.5) { "small" } else { "large" });
            }
            entities.push(e);
            next += 1;
        }
        if ok {
            return SceneWorld::new(entities).expect("generated ids are unique");
        }
    }
}

pub fn plural(category: &str) -> String {
    if category.ends_with('x') || category.ends_with('s') {
        format!("{category}es")
    } else {
        format!("{category}s")
    }
}

/// Brute-force description match over visible entities, used for
/// annotations. Pronouns are not handled here.
pub fn matching_ids(scene: &SceneWorld, q: &EntityQuery, margin: f64) -> BTreeSet<String> {
    let EntityQuery::Description {
        attributes,
        category,
        relative,
    } = q
    else {
        return BTreeSet::new();
    };
    let objects = relative.as_ref().map(|rc| (rc.relation, matching_ids(scene, &rc.object, margin)));
    scene
        .visible()
        .filter(|e| names_category(category, &e.category))
        .filter(|e| attributes.iter().all(|a| e.attributes.values().any(|v| v == a)))
        .filter(|e| match &objects {
            None => true,
            Some((rel, objs)) => objs.iter().any(|o| {
                *o != e.id && scene.get(o).is_some_and(|eo| boxes_relate(*rel, &e.bbox, &eo.bbox, margin))
            }),
        })
        .map(|e| e.id.clone())
        .collect()
}

/// `[id] attrs category (k=v, ...)`.
pub fn describe_text(e: &Entity) -> String {
    let mut words: Vec<&str> = e.attributes.values().map(String::as_str).collect();
    words.push(&e.category);
    let mut s = format!("[{}] {}", e.id, words.join(" "));
    if !e.state.is_empty() {
        let st: Vec<String> = e.state.iter().map(|(k, v)| format!("{k}={v}")).collect();
        s.push_str(&format!(" ({})", st.join(", ")));
    }
    s
}

/// One generated turn before it is committed.
struct Draft {
    events: Vec<WorldEvent>,
    intents: Vec<Intent>,
    targets: Vec<Option<String>>,
    checks: Vec<Check>,
    /// Ids the agent's actions will reference.
    mentions: Vec<String>,
    /// Ids that gain spatial-fact memory entries.
    facts: Vec<String>,
    tags: Vec<&'static str>,
}

impl Draft {
    fn new(intents: Vec<Intent>) -> Self {
        let targets = vec![None; intents.len()];
        Self {
            events: Vec::new(),
            intents,
            targets,
            checks: Vec::new(),
            mentions: Vec::new(),
            facts: Vec::new(),
            tags: Vec::new(),
        }
    }

    fn check(mut self, dim: Dimension, kind: CheckKind) -> Self {
        self.checks.push(Check::new(dim, kind));
        self
    }

    fn resolve(mut self, id: &str, antecedent: Option<u32>) -> Self {
        let mut c = Check::new(Dimension::VisualEntityTracking, CheckKind::ResolveEntity { entity: id.to_string() });
        if let Some(a) = antecedent {
            c = c.with_antecedent(a);
        }
        self.checks.push(c);
        self
    }

    fn sequence(self, dim: Dimension, kinds: &[ActionTag]) -> Self {
        self.check(dim, CheckKind::ActionSequence { kinds: kinds.to_vec() })
    }

    fn answer(self, dim: Dimension, value: impl Into<String>) -> Self {
        self.check(dim, CheckKind::AnswerEquals { value: value.into() })
    }

    fn instruction(&self) -> String {
        crate::planner::canonical_command(&self.intents)
    }
}

/// A question asked earlier, kept for consistency repeats.
#[derive(Clone)]
struct Asked {
    turn: u32,
    intent: Intent,
    answer: String,
    ids: Vec<String>,
}

struct Builder<'r> {
    rng: &'r mut ChaCha8Rng,
    profile: Profile,
    initial: SceneWorld,
    scene: SceneWorld,
    turns: Vec<ScenarioTurn>,
    tags: BTreeSet<&'static str>,
    p: String,
    /// Last turn whose actions referenced the protagonist.
    p_last: u32,
    mentioned: BTreeSet<String>,
    /// Entities moved by the agent; their exact placement is not annotated.
    volatile: BTreeSet<String>,
    fact_ids: BTreeSet<String>,
    asked: Vec<Asked>,
    next_id: usize,
    margin: f64,
}

impl<'r> Builder<'r> {
    fn new(rng: &'r mut ChaCha8Rng, scene: SceneWorld, profile: Profile) -> Self {
        let objects: Vec<&Entity> = scene.entities.iter().filter(|e| e.category != CONTAINER).collect();
        let p = objects.choose(rng).map(|e| e.id.clone()).unwrap_or_default();
        let next_id = scene.entities.len() + 1;
        Self {
            rng,
            profile,
            initial: scene.clone(),
            scene,
            turns: Vec::new(),
            tags: BTreeSet::new(),
            p,
            p_last: 0,
            mentioned: BTreeSet::new(),
            volatile: BTreeSet::new(),
            fact_ids: BTreeSet::new(),
            asked: Vec::new(),
            next_id,
            margin: DEFAULT_MARGIN,
        }
    }

    fn turn_no(&self) -> u32 {
        self.turns.len() as u32 + 1
    }

    /// Pronouns stay unambiguous while the protagonist is the only entity
    /// any action has referenced.
    fn anaphora_ok(&self) -> bool {
        self.mentioned.iter().all(|m| *m == self.p) && self.scene.is_visible(&self.p)
    }

    fn entity(&self, id: &str) -> &Entity {
        self.scene.get(id).expect("builder ids are live")
    }

    fn color(&self, id: &str) -> String {
        self.entity(id).attributes.get("color").cloned().unwrap_or_default()
    }

    fn desc(&self, id: &str) -> EntityQuery {
        let e = self.entity(id);
        EntityQuery::described(&[&self.color(id)], &e.category)
    }

    fn objects(&self) -> Vec<String> {
        self.scene
            .visible()
            .filter(|e| e.category != CONTAINER)
            .map(|e| e.id.clone())
            .collect()
    }

    fn lexical(&self, words: &BTreeSet<String>, e: &Entity) -> usize {
        2 * words
            .iter()
            .filter(|w| names_category(w, &e.category) || e.attributes.values().any(|v| v == *w))
            .count()
    }

    /// True when every target of the instruction is guaranteed a place in
    /// the attention window.
    ///
    /// Memory adds less than 2 to any score, so an explicitly described
    /// target can only be outranked by entities with at least its lexical
    /// score. A pronoun target has no lexical score, so anything sharing a
    /// word with the instruction or holding a spatial fact is a rival.
    fn focus_ok(&self, intents: &[Intent], explicit: &[&str], pronoun: Option<&str>) -> bool {
        let words: BTreeSet<String> = tokens(&crate::planner::canonical_command(intents)).into_iter().collect();
        let visible: Vec<&Entity> = self.scene.visible().collect();
        if !explicit.is_empty() {
            let min = explicit
                .iter()
                .map(|id| self.lexical(&words, self.entity(id)))
                .min()
                .unwrap_or(0);
            let crowd = visible.iter().filter(|e| self.lexical(&words, e) >= min).count();
            if crowd > FOCUS {
                return false;
            }
        }
        if let Some(p) = pronoun {
            let rivals = visible
                .iter()
                .filter(|e| e.id != p)
                .filter(|e| self.lexical(&words, e) > 0 || self.fact_ids.contains(&e.id))
                .count();
            if rivals >= FOCUS {
                return false;
            }
        }
        true
    }

    fn commit(&mut self, d: Draft) {
        let n = self.turn_no();
        for ev in &d.events {
            self.scene = apply_event(&self.scene, ev).expect("generated events apply");
            if let WorldEvent::Move { id, .. } = ev {
                self.volatile.remove(id);
            }
        }
        for id in &d.mentions {
            self.mentioned.insert(id.clone());
            if *id == self.p {
                self.p_last = n;
            }
        }
        self.fact_ids.extend(d.facts.iter().cloned());
        self.tags.extend(d.tags.iter().copied());
        self.turns.push(ScenarioTurn {
            events: d.events.clone(),
            instruction: d.instruction(),
            intents: d.intents.iter().map(Intent::canonical).collect(),
            targets: d.targets,
            checks: d.checks,
        });
    }

    fn build(mut self, id: &str) -> Option<Scenario> {
        let (lo, hi) = self.profile.turn_range();
        let total = self.rng.random_range(lo..=hi);
        let p = self.p.clone();
        let d = self.point_explicit(&p)?;
        self.commit(d);
        let d = self.anaphora(1)?;
        self.commit(d);

        let stress = self.profile == Profile::Extended || self.rng.random_bool(0.65);
        if stress {
            self.tags.insert("memory-stress");
            self.fillers_until(5)?;
            let d = self.long_range()?;
            self.commit(d);
        }
        if self.profile == Profile::Extended {
            self.fillers_until(8)?;
            let d = self.long_range()?;
            self.commit(d);
            if self.turns.len() < total {
                if let Some(d) = self.anaphora(self.p_last) {
                    self.commit(d);
                }
            }
        }
        while self.turns.len() < total {
            let d = self.free_turn()?;
            self.commit(d);
        }

        let resolves = self
            .turns
            .iter()
            .flat_map(|t| &t.checks)
            .filter(|c| matches!(c.kind, CheckKind::ResolveEntity { .. }))
            .count();
        if resolves >= 2 {
            self.tags.insert("detection");
        }
        let scenario = Scenario {
            id: id.to_string(),
            scene: self.initial,
            turns: self.turns,
            tags: self.tags.iter().map(|t| t.to_string()).collect(),
            margin: self.margin,
        };
        scenario.validate().ok()?;
        Some(scenario)
    }

    /// Mention-free turns until the next turn number is `until`.
    fn fillers_until(&mut self, until: u32) -> Option<()> {
        while self.turn_no() < until {
            let d = self.filler(true)?;
            self.commit(d);
        }
        Some(())
    }

    fn point_explicit(&mut self, id: &str) -> Option<Draft> {
        let intents = vec![Intent::new(Verb::Point, Some(self.desc(id)), None, None)];
        if !self.focus_ok(&intents, &[id], None) {
            return None;
        }
        let mut d = Draft::new(intents)
            .resolve(id, None)
            .sequence(Dimension::InstructionAdherence, &[ActionTag::Point]);
        d.targets = vec![Some(id.to_string())];
        d.mentions = vec![id.to_string()];
        Some(d)
    }

    fn pronoun(&mut self) -> EntityQuery {
        if self.rng.random_bool(0.7) {
            EntityQuery::it()
        } else {
            EntityQuery::Pronoun {
                pronoun: crate::planner::Pronoun::ThatOne,
            }
        }
    }

    /// "point to it" or "describe it", bound to the protagonist.
    fn anaphora(&mut self, antecedent: u32) -> Option<Draft> {
        if !self.anaphora_ok() {
            return None;
        }
        let p = self.p.clone();
        let q = self.pronoun();
        let describe = self.rng.random_bool(0.5);
        let verb = if describe { Verb::Describe } else { Verb::Point };
        let intents = vec![Intent::new(verb, Some(q), None, None)];
        if !self.focus_ok(&intents, &[], Some(&p)) {
            return None;
        }
        let mut d = Draft::new(intents).resolve(&p, Some(antecedent));
        d = if describe {
            let text = describe_text(self.entity(&p));
            d.answer(Dimension::VisualEntityTracking, text)
                .sequence(Dimension::InstructionAdherence, &[ActionTag::Respond])
        } else {
            d.sequence(Dimension::InstructionAdherence, &[ActionTag::Point])
        };
        d.targets = vec![Some(p.clone())];
        d.mentions = vec![p];
        Some(d)
    }

    /// A reference back to the protagonist after mention-free turns.
    fn long_range(&mut self) -> Option<Draft> {
        let antecedent = self.p_last;
        let mut kinds = vec![0, 1, 2, 3, 4];
        kinds.shuffle(self.rng);
        for k in kinds {
            let d = match k {
                0 | 1 => self.anaphora(antecedent),
                2 => self.underspecified(antecedent),
                3 => self.move_pronoun(antecedent),
                _ => self.point_then_count(antecedent),
            };
            if let Some(d) = d {
                return Some(d);
            }
        }
        self.anaphora(antecedent)
    }

    /// "point to the ball" when the protagonist is the only ball with a
    /// mention history.
    fn underspecified(&mut self, antecedent: u32) -> Option<Draft> {
        if !self.anaphora_ok() {
            return None;
        }
        let p = self.p.clone();
        let cat = self.entity(&p).category.clone();
        let same: Vec<String> = self
            .scene
            .visible()
            .filter(|e| e.category == cat && e.id != p)
            .map(|e| e.id.clone())
            .collect();
        if same.is_empty() || same.iter().any(|s| self.fact_ids.contains(s)) {
            return None;
        }
        let intents = vec![Intent::new(Verb::Point, Some(EntityQuery::described(&[], &cat)), None, None)];
        let mut d = Draft::new(intents)
            .resolve(&p, Some(antecedent))
            .sequence(Dimension::InstructionAdherence, &[ActionTag::Point]);
        d.targets = vec![Some(p.clone())];
        d.mentions = vec![p];
        Some(d)
    }

    /// Destination for moving `a` so that `rel(a, b)` holds, as the agent would place it.
    fn placement(&self, a: &str, rel: SpatialRelation, b: &str) -> Option<BBox> {
        place_relative(&self.scene, a, rel, b, self.margin)
    }

    fn move_relation(&mut self, a: &str, b: &str) -> Option<(SpatialRelation, BBox)> {
        let mut rels: Vec<SpatialRelation> = DIRECTIONAL.to_vec();
        if self.entity(b).category == CONTAINER && self.entity(a).category != CONTAINER {
            rels.push(SpatialRelation::Inside);
        }
        rels.shuffle(self.rng);
        rels.into_iter().find_map(|rel| {
            if boxes_relate(rel, &self.entity(a).bbox, &self.entity(b).bbox, self.margin) {
                return None;
            }
            self.placement(a, rel, b).map(|bb| (rel, bb))
        })
    }

    fn moved_scene(&self, a: &str, bbox: BBox) -> SceneWorld {
        apply_event(&self.scene, &WorldEvent::Move { id: a.to_string(), bbox }).expect("placed boxes are valid")
    }

    /// "move it to left of the blue cup", optionally followed by a check question.
    fn move_pronoun(&mut self, antecedent: u32) -> Option<Draft> {
        if !self.anaphora_ok() {
            return None;
        }
        let p = self.p.clone();
        let others: Vec<String> = self.scene.visible_ids().into_iter().filter(|i| *i != p).collect();
        let b = others.choose(self.rng)?.clone();
        let (rel, dest) = self.move_relation(&p, &b)?;
        let mut intents = vec![Intent::new(Verb::Move, Some(EntityQuery::it()), Some(rel), Some(self.desc(&b)))];
        let follow = self.rng.random_bool(0.5);
        if follow {
            intents.push(Intent::new(Verb::QueryRelation, Some(EntityQuery::it()), Some(rel), Some(self.desc(&b))).then());
        }
        if !self.focus_ok(&intents, &[&b], Some(&p)) {
            return None;
        }
        let mut d = Draft::new(intents)
            .resolve(&p, Some(antecedent))
            .check(
                Dimension::InstructionAdherence,
                CheckKind::RelationAfter {
                    relation: rel,
                    a: p.clone(),
                    b: b.clone(),
                },
            );
        if follow {
            d = d
                .answer(Dimension::ReasoningDepth, "yes")
                .sequence(Dimension::InstructionAdherence, &[ActionTag::WorldEvent, ActionTag::Respond]);
            d.targets = vec![Some(p.clone()), Some(p.clone())];
            d.tags.push("compound");
        } else {
            d = d.sequence(Dimension::InstructionAdherence, &[ActionTag::WorldEvent]);
            d.targets = vec![Some(p.clone())];
        }
        d.mentions = vec![p.clone()];
        d.facts = vec![p.clone(), b];
        self.scene = self.moved_scene(&p, dest);
        self.volatile.insert(p);
        Some(d)
    }

    /// "point to it then count the cups".
    fn point_then_count(&mut self, antecedent: u32) -> Option<Draft> {
        if !self.anaphora_ok() {
            return None;
        }
        let p = self.p.clone();
        let (count_q, n) = self.count_query(false)?;
        let intents = vec![
            Intent::new(Verb::Point, Some(EntityQuery::it()), None, None),
            Intent::new(Verb::Count, Some(count_q), None, None).then(),
        ];
        if !self.focus_ok(&intents, &[], Some(&p)) {
            return None;
        }
        let mut d = Draft::new(intents)
            .resolve(&p, Some(antecedent))
            .answer(Dimension::ReasoningDepth, n.to_string())
            .sequence(Dimension::InstructionAdherence, &[ActionTag::Point, ActionTag::Respond]);
        d.targets = vec![Some(p.clone()), None];
        d.mentions = vec![p];
        d.tags.push("compound");
        Some(d)
    }

    /// A count question: plain category, or with a color.
    fn count_query(&mut self, colored: bool) -> Option<(EntityQuery, usize)> {
        let ids = self.scene.visible_ids();
        let id = ids.choose(self.rng)?.clone();
        let e = self.entity(&id);
        let q = if colored {
            EntityQuery::described(&[&self.color(&id)], &plural(&e.category))
        } else {
            EntityQuery::described(&[], &plural(&e.category))
        };
        let n = matching_ids(&self.scene, &q, self.margin).len();
        Some((q, n))
    }

    fn count_turn(&mut self) -> Option<Draft> {
        let colored = self.rng.random_bool(0.3);
        let (q, n) = self.count_query(colored)?;
        let intent = Intent::new(Verb::Count, Some(q), None, None);
        self.asked.push(Asked {
            turn: self.turn_no(),
            intent: intent.clone(),
            answer: n.to_string(),
            ids: Vec::new(),
        });
        Some(
            Draft::new(vec![intent])
                .answer(Dimension::ReasoningDepth, n.to_string())
                .sequence(Dimension::InstructionAdherence, &[ActionTag::Respond]),
        )
    }

    fn stable_ids(&self) -> Vec<String> {
        self.scene
            .visible_ids()
            .into_iter()
            .filter(|i| !self.volatile.contains(i))
            .collect()
    }

    /// "is the red ball left of the blue cup", aiming for an even yes/no mix.
    fn relation_turn(&mut self, involving: Option<&str>) -> Option<Draft> {
        let ids = self.stable_ids();
        if ids.len() < 2 {
            return None;
        }
        let want_yes = self.rng.random_bool(0.5);
        let mut best = None;
        for _ in 0..24 {
            let a = match involving {
                Some(x) => x.to_string(),
                None => ids.choose(self.rng)?.clone(),
            };
            let b = ids.choose(self.rng)?.clone();
            if a == b {
                continue;
            }
            let (ea, eb) = (self.entity(&a).clone(), self.entity(&b).clone());
            let coin = self.rng.random_bool(0.5);
            let rel = if eb.category == CONTAINER && eb.bbox.contains(&ea.bbox) && coin {
                SpatialRelation::Inside
            } else if ea.category == CONTAINER && ea.bbox.contains(&eb.bbox) && coin {
                SpatialRelation::Contains
            } else {
                *DIRECTIONAL.choose(self.rng)?
            };
            let holds = boxes_relate(rel, &ea.bbox, &eb.bbox, self.margin);
            let intents = vec![Intent::new(Verb::QueryRelation, Some(self.desc(&a)), Some(rel), Some(self.desc(&b)))];
            if !self.focus_ok(&intents, &[&a, &b], None) {
                continue;
            }
            let candidate = (a, b, holds, intents);
            if holds == want_yes {
                best = Some(candidate);
                break;
            }
            best.get_or_insert(candidate);
        }
        let (a, b, holds, intents) = best?;
        let answer = if holds { "yes" } else { "no" };
        self.asked.push(Asked {
            turn: self.turn_no(),
            intent: intents[0].clone(),
            answer: answer.to_string(),
            ids: vec![a.clone(), b.clone()],
        });
        let mut d = Draft::new(intents)
            .answer(Dimension::ReasoningDepth, answer)
            .sequence(Dimension::InstructionAdherence, &[ActionTag::Respond]);
        d.targets = vec![Some(a.clone())];
        if holds {
            d.facts = vec![a, b];
        }
        Some(d)
    }

    /// An absent color on a present category; the agent must ask, not act.
    fn bait_turn(&mut self) -> Option<Draft> {
        let ids = self.scene.visible_ids();
        let id = ids.choose(self.rng)?;
        let cat = self.entity(id).category.clone();
        let color = *BAIT_COLORS.choose(self.rng)?;
        let verb = if self.rng.random_bool(0.5) { Verb::Point } else { Verb::Describe };
        let intents = vec![Intent::new(verb, Some(EntityQuery::described(&[color], &cat)), None, None)];
        let mut d = Draft::new(intents)
            .check(Dimension::ErrorSuppression, CheckKind::NoHallucination { forbid_grounding: true })
            .sequence(Dimension::ErrorSuppression, &[ActionTag::Clarify]);
        d.tags.push("bait");
        Some(d)
    }

    /// Repeats an earlier question whose answer has not changed.
    fn repeat_turn(&mut self) -> Option<Draft> {
        let mut pool: Vec<Asked> = self
            .asked
            .iter()
            .filter(|a| a.ids.iter().all(|i| self.scene.is_visible(i) && !self.volatile.contains(i)))
            .filter(|a| self.current_answer(&a.intent).as_deref() == Some(a.answer.as_str()))
            .filter(|a| {
                let explicit: Vec<&str> = a.ids.iter().map(String::as_str).collect();
                self.focus_ok(std::slice::from_ref(&a.intent), &explicit, None)
            })
            .cloned()
            .collect();
        pool.shuffle(self.rng);
        let asked = pool.pop()?;
        let n = self.turn_no();
        let mut d = Draft::new(vec![asked.intent.clone()])
            .check(
                Dimension::DialogueConsistency,
                CheckKind::ConsistencyPair {
                    turn_i: asked.turn,
                    turn_j: n,
                },
            )
            .answer(Dimension::DialogueConsistency, asked.answer.clone());
        if asked.answer == "yes" {
            d.facts = asked.ids.clone();
        }
        if let Some(first) = asked.ids.first() {
            d.targets = vec![Some(first.clone())];
        }
        Some(d)
    }

    fn current_answer(&self, intent: &Intent) -> Option<String> {
        match intent.verb {
            Verb::Count => Some(matching_ids(&self.scene, intent.target.as_ref()?, self.margin).len().to_string()),
            Verb::QueryRelation => {
                let a = matching_ids(&self.scene, intent.target.as_ref()?, self.margin);
                let b = matching_ids(&self.scene, intent.object2.as_ref()?, self.margin);
                let (a, b) = (a.first()?, b.first()?);
                let holds = boxes_relate(
                    intent.relation?,
                    &self.scene.get(a)?.bbox,
                    &self.scene.get(b)?.bbox,
                    self.margin,
                );
                Some(if holds { "yes" } else { "no" }.to_string())
            }
            _ => None,
        }
    }

    /// Scene events at the start of the turn, followed by a question about them.
    fn state_change_turn(&mut self) -> Option<Draft> {
        let p = self.p.clone();
        let others: Vec<String> = self
            .objects()
            .into_iter()
            .filter(|i| *i != p && !self.mentioned.contains(i))
            .collect();
        let mut d = match self.rng.random_range(0..4) {
            0 => {
                let x = others.choose(self.rng)?.clone();
                let occupied: Vec<BBox> = self
                    .scene
                    .visible()
                    .filter(|e| e.id != x)
                    .map(|e| e.bbox)
                    .collect();
                let size = (self.entity(&x).bbox.w(), self.entity(&x).bbox.h());
                let bbox = random_box(self.rng, &occupied, (size.0.min(size.1), size.0.min(size.1)), None)?;
                let ev = WorldEvent::Move { id: x.clone(), bbox };
                let saved = self.scene.clone();
                let saved_volatile = self.volatile.clone();
                self.scene = apply_event(&self.scene, &ev).ok()?;
                self.volatile.remove(&x);
                let q = self.relation_turn(Some(&x));
                self.scene = saved;
                self.volatile = saved_volatile;
                let mut q = q?;
                q.events = vec![ev];
                q
            }
            1 => {
                if !self.scene.is_visible(&p) {
                    return None;
                }
                let held = self.entity(&p).state.get("held").map(String::as_str) == Some("true");
                let ev = WorldEvent::SetState {
                    id: p.clone(),
                    key: "held".into(),
                    value: (!held).to_string(),
                };
                let after = apply_event(&self.scene, &ev).ok()?;
                let text = describe_text(after.get(&p)?);
                let use_pronoun = self.anaphora_ok() && self.rng.random_bool(0.5);
                let target = if use_pronoun { self.pronoun() } else { self.desc(&p) };
                let intents = vec![Intent::new(Verb::Describe, Some(target), None, None)];
                let ok = if use_pronoun {
                    self.focus_ok(&intents, &[], Some(&p))
                } else {
                    self.focus_ok(&intents, &[&p], None)
                };
                if !ok {
                    return None;
                }
                let antecedent = use_pronoun.then_some(self.p_last);
                let mut q = Draft::new(intents)
                    .resolve(&p, antecedent)
                    .answer(Dimension::VisualEntityTracking, text)
                    .sequence(Dimension::InstructionAdherence, &[ActionTag::Respond]);
                q.targets = vec![Some(p.clone())];
                q.mentions = vec![p.clone()];
                q.events = vec![ev];
                q
            }
            2 => {
                let cat = *CATEGORIES.choose(self.rng)?;
                let color = unused_color(self.rng, &self.scene.entities, cat)?;
                let occupied: Vec<BBox> = self.scene.visible().map(|e| e.bbox).collect();
                let bbox = random_box(self.rng, &occupied, (0.08, 0.14), None)?;
                let id = format!("e{}", self.next_id);
                self.next_id += 1;
                let ev = WorldEvent::Appear {
                    entity: Entity::new(id, cat, bbox).with_attr("color", color),
                };
                self.count_after(ev, cat)?
            }
            _ => {
                let x = others.choose(self.rng)?.clone();
                if self.scene.entities.iter().any(|e| e.category == CONTAINER && e.id == x) {
                    return None;
                }
                let cat = self.entity(&x).category.clone();
                self.count_after(WorldEvent::Disappear { id: x }, &cat)?
            }
        };
        d.tags.push("state-change");
        Some(d)
    }

    fn count_after(&mut self, ev: WorldEvent, cat: &str) -> Option<Draft> {
        let after = apply_event(&self.scene, &ev).ok()?;
        let q = EntityQuery::described(&[], &plural(cat));
        let n = matching_ids(&after, &q, self.margin).len();
        let mut d = Draft::new(vec![Intent::new(Verb::Count, Some(q), None, None)])
            .answer(Dimension::ReasoningDepth, n.to_string())
            .sequence(Dimension::InstructionAdherence, &[ActionTag::Respond]);
        d.events = vec![ev];
        Some(d)
    }

    /// A turn whose actions reference no entity.
    fn filler(&mut self, mention_free: bool) -> Option<Draft> {
        for _ in 0..16 {
            let d = match self.rng.random_range(0..10) {
                0..=2 => self.relation_turn(None),
                3 | 4 => self.count_turn(),
                5 | 6 => self.bait_turn(),
                7 => self.repeat_turn(),
                _ => self.state_change_turn(),
            };
            if let Some(d) = d {
                if !mention_free || d.mentions.is_empty() {
                    return Some(d);
                }
            }
        }
        self.count_turn()
    }

    fn free_turn(&mut self) -> Option<Draft> {
        for _ in 0..16 {
            let d = match self.rng.random_range(0..12) {
                0..=3 => self.filler(false),
                4 => self.anaphora(self.p_last),
                5 => self.describe_other(),
                6 | 7 => self.move_explicit(),
                8 | 9 => self.compound(),
                _ => self.multi_hop(),
            };
            if d.is_some() {
                return d;
            }
        }
        self.count_turn()
    }

    fn describe_other(&mut self) -> Option<Draft> {
        let ids = self.scene.visible_ids();
        let x = ids.choose(self.rng)?.clone();
        let intents = vec![Intent::new(Verb::Describe, Some(self.desc(&x)), None, None)];
        if !self.focus_ok(&intents, &[&x], None) {
            return None;
        }
        let text = describe_text(self.entity(&x));
        let mut d = Draft::new(intents)
            .resolve(&x, None)
            .answer(Dimension::VisualEntityTracking, text)
            .sequence(Dimension::InstructionAdherence, &[ActionTag::Respond]);
        d.targets = vec![Some(x.clone())];
        d.mentions = vec![x];
        Some(d)
    }

    fn move_explicit(&mut self) -> Option<Draft> {
        let objects = self.objects();
        let a = objects.choose(self.rng)?.clone();
        let ids = self.scene.visible_ids();
        let b = ids.choose(self.rng)?.clone();
        if a == b {
            return None;
        }
        let (rel, dest) = self.move_relation(&a, &b)?;
        let intents = vec![Intent::new(Verb::Move, Some(self.desc(&a)), Some(rel), Some(self.desc(&b)))];
        if !self.focus_ok(&intents, &[&a, &b], None) {
            return None;
        }
        let mut d = Draft::new(intents)
            .resolve(&a, None)
            .check(
                Dimension::InstructionAdherence,
                CheckKind::RelationAfter {
                    relation: rel,
                    a: a.clone(),
                    b: b.clone(),
                },
            )
            .sequence(Dimension::InstructionAdherence, &[ActionTag::WorldEvent]);
        d.targets = vec![Some(a.clone())];
        d.mentions = vec![a.clone()];
        d.facts = vec![a.clone(), b];
        self.scene = self.moved_scene(&a, dest);
        self.volatile.insert(a);
        Some(d)
    }

    /// Two clauses with an intra-turn dependency or a second question.
    fn compound(&mut self) -> Option<Draft> {
        let mut d = match self.rng.random_range(0..3) {
            0 => {
                let objects = self.objects();
                let x = objects.choose(self.rng)?.clone();
                let (q, n) = self.count_query(false)?;
                let intents = vec![
                    Intent::new(Verb::Point, Some(self.desc(&x)), None, None),
                    Intent::new(Verb::Count, Some(q), None, None).then(),
                ];
                if !self.focus_ok(&intents, &[&x], None) {
                    return None;
                }
                let mut d = Draft::new(intents)
                    .resolve(&x, None)
                    .answer(Dimension::ReasoningDepth, n.to_string())
                    .sequence(Dimension::InstructionAdherence, &[ActionTag::Point, ActionTag::Respond]);
                d.targets = vec![Some(x.clone()), None];
                d.mentions = vec![x];
                d
            }
            1 => {
                let objects = self.objects();
                let a = objects.choose(self.rng)?.clone();
                let ids = self.scene.visible_ids();
                let b = ids.choose(self.rng)?.clone();
                if a == b {
                    return None;
                }
                let (rel, dest) = self.move_relation(&a, &b)?;
                let intents = vec![
                    Intent::new(Verb::Move, Some(self.desc(&a)), Some(rel), Some(self.desc(&b))),
                    Intent::new(Verb::QueryRelation, Some(EntityQuery::it()), Some(rel), Some(self.desc(&b))).then(),
                ];
                if !self.focus_ok(&intents, &[&a, &b], None) {
                    return None;
                }
                let mut d = Draft::new(intents)
                    .resolve(&a, None)
                    .check(
                        Dimension::InstructionAdherence,
                        CheckKind::RelationAfter {
                            relation: rel,
                            a: a.clone(),
                            b: b.clone(),
                        },
                    )
                    .answer(Dimension::ReasoningDepth, "yes")
                    .sequence(Dimension::InstructionAdherence, &[ActionTag::WorldEvent, ActionTag::Respond]);
                d.targets = vec![Some(a.clone()), Some(a.clone())];
                d.mentions = vec![a.clone()];
                d.facts = vec![a.clone(), b];
                self.scene = self.moved_scene(&a, dest);
                self.volatile.insert(a);
                d
            }
            _ => {
                let ids = self.scene.visible_ids();
                let x = ids.choose(self.rng)?.clone();
                let (q, n) = self.count_query(true)?;
                let intents = vec![
                    Intent::new(Verb::Describe, Some(self.desc(&x)), None, None),
                    Intent::new(Verb::Count, Some(q), None, None).and(),
                ];
                if !self.focus_ok(&intents, &[&x], None) {
                    return None;
                }
                let text = describe_text(self.entity(&x));
                let mut d = Draft::new(intents)
                    .resolve(&x, None)
                    .answer(Dimension::VisualEntityTracking, text)
                    .answer(Dimension::ReasoningDepth, n.to_string())
                    .sequence(Dimension::InstructionAdherence, &[ActionTag::Respond, ActionTag::Respond]);
                d.targets = vec![Some(x.clone()), None];
                d.mentions = vec![x];
                d
            }
        };
        d.tags.push("compound");
        Some(d)
    }

    /// Relative-clause counting or "what is" enumeration. Needs a scene with
    /// no agent-placed entities, since answers depend on exact geometry.
    fn multi_hop(&mut self) -> Option<Draft> {
        if !self.volatile.is_empty() {
            return None;
        }
        let ids = self.scene.visible_ids();
        let anchor = ids.choose(self.rng)?.clone();
        let rel = *DIRECTIONAL.choose(self.rng)?;
        let mut object = self.desc(&anchor);
        if self.rng.random_bool(0.4) {
            // second hop on the anchor
            let inner = ids.choose(self.rng)?.clone();
            if inner != anchor {
                let rel2 = *DIRECTIONAL.choose(self.rng)?;
                let e = self.entity(&anchor);
                let nested = EntityQuery::described(&[], &e.category).with_relative(rel2, self.desc(&inner));
                if !matching_ids(&self.scene, &nested, self.margin).is_empty() {
                    object = nested;
                }
            }
        }
        let mut d = if self.rng.random_bool(0.5) {
            let x = ids.choose(self.rng)?.clone();
            let cat = plural(&self.entity(&x).category);
            let q = EntityQuery::described(&[], &cat).with_relative(rel, object);
            let matched = matching_ids(&self.scene, &q, self.margin);
            let mut d = Draft::new(vec![Intent::new(Verb::Count, Some(q), None, None)])
                .answer(Dimension::ReasoningDepth, matched.len().to_string())
                .sequence(Dimension::InstructionAdherence, &[ActionTag::Respond]);
            d.facts = self.scene.visible_ids();
            d
        } else {
            let objs = matching_ids(&self.scene, &object, self.margin);
            let mut found: Vec<String> = self
                .scene
                .visible()
                .filter(|e| {
                    objs.iter().any(|o| {
                        *o != e.id && self.scene.get(o).is_some_and(|eo| boxes_relate(rel, &e.bbox, &eo.bbox, self.margin))
                    })
                })
                .map(|e| e.id.clone())
                .collect();
            found.sort();
            let answer = if found.is_empty() {
                "none".to_string()
            } else {
                found.iter().map(|i| format!("[{i}]")).collect::<Vec<_>>().join(" ")
            };
            let mut d = Draft::new(vec![Intent::new(Verb::QueryWhat, None, Some(rel), Some(object))])
                .answer(Dimension::ReasoningDepth, answer)
                .sequence(Dimension::InstructionAdherence, &[ActionTag::Respond]);
            d.facts = self.scene.visible_ids();
            // the answer names entities, which the agent then remembers
            d.mentions = found;
            d
        };
        d.tags.push("multi-hop");
        Some(d)
    }
}
