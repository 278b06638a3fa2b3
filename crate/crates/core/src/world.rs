//! Simulated visual scene.
//!
//! A [`SceneWorld`] is the ground truth the agent observes in place of an
//! image: a flat list of entities with normalized bounding boxes, attribute
//! maps and mutable state. Scenes are immutable values; [`apply_event`]
//! returns a new scene with the revision bumped by one.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default margin for directional relations, in normalized scene units.
pub const DEFAULT_MARGIN: f64 = 0.05;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorldError {
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("entity `{0}` is not visible")]
    NotVisible(String),
    #[error("relation between `{0}` and itself")]
    SelfRelation(String),
    #[error("entity id `{0}` already exists")]
    DuplicateId(String),
    #[error("invalid bounding box {0:?}")]
    InvalidBBox([f64; 4]),
    #[error("invalid entity: {0}")]
    InvalidEntity(String),
}

/// Axis-aligned box in normalized coordinates, origin top-left.
///
/// Serialized as `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, WorldError> {
        let ok = [x, y, w, h].iter().all(|v| v.is_finite())
            && x >= -EPS
            && y >= -EPS
            && w > 0.0
            && h > 0.0
            && x + w <= 1.0 + EPS
            && y + h <= 1.0 + EPS;
        if ok {
            Ok(Self { x, y, w, h })
        } else {
            Err(WorldError::InvalidBBox([x, y, w, h]))
        }
    }

    /// Builds a box from corner coordinates, clamping them into the unit square.
    /// Degenerate results are widened to a minimal extent.
    pub fn from_corners_clamped(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        const MIN_EXTENT: f64 = 1e-3;
        let fix = |a: f64, b: f64| {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let lo = lo.clamp(0.0, 1.0);
            let hi = hi.clamp(0.0, 1.0);
            if hi - lo >= MIN_EXTENT {
                (lo, hi - lo)
            } else if lo + MIN_EXTENT <= 1.0 {
                (lo, MIN_EXTENT)
            } else {
                (1.0 - MIN_EXTENT, MIN_EXTENT)
            }
        };
        let (x, w) = fix(x0, x1);
        let (y, h) = fix(y0, y1);
        Self { x, y, w, h }
    }

    /// Box of the given size centered at `(cx, cy)`, shifted to stay inside the scene.
    pub fn centered_at(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, WorldError> {
        let x = (cx - w / 2.0).clamp(0.0, (1.0 - w).max(0.0));
        let y = (cy - h / 2.0).clamp(0.0, (1.0 - h).max(0.0));
        Self::new(x, y, w, h)
    }

    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// True when `other` lies fully inside `self`.
    pub fn contains(&self, other: &BBox) -> bool {
        other.x >= self.x - EPS
            && other.y >= self.y - EPS
            && other.x + other.w <= self.x + self.w + EPS
            && other.y + other.h <= self.y + self.h + EPS
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let ix = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let iy = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        if ix > 0.0 && iy > 0.0 {
            ix * iy
        } else {
            0.0
        }
    }

    pub fn contains_point(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.x + self.w && py >= self.y && py <= self.y + self.h
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = WorldError;
    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

fn default_visible() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub category: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    pub bbox: BBox,
    #[serde(default)]
    pub state: BTreeMap<String, String>,
    #[serde(default = "default_visible")]
    pub visible: bool,
}

impl Entity {
    pub fn new(id: impl Into<String>, category: impl Into<String>, bbox: BBox) -> Self {
        Self {
            id: id.into(),
            category: category.into(),
            attributes: BTreeMap::new(),
            bbox,
            state: BTreeMap::new(),
            visible: true,
        }
    }

    pub fn with_attr(mut self, key: &str, value: &str) -> Self {
        self.attributes.insert(key.to_string(), value.to_string());
        self
    }

    /// Short human description such as `small red ball`, attributes in key order.
    pub fn description(&self) -> String {
        let mut words: Vec<&str> = self.attributes.values().map(String::as_str).collect();
        words.push(&self.category);
        words.join(" ")
    }

    fn validate(&self) -> Result<(), WorldError> {
        if self.id.trim().is_empty() || self.id.contains(char::is_whitespace) {
            return Err(WorldError::InvalidEntity(format!("bad id `{}`", self.id)));
        }
        if self.category.trim().is_empty() {
            return Err(WorldError::InvalidEntity(format!("`{}` has empty category", self.id)));
        }
        if self.attributes.keys().chain(self.state.keys()).any(|k| k.is_empty()) {
            return Err(WorldError::InvalidEntity(format!("`{}` has an empty key", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneWorld {
    pub entities: Vec<Entity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    #[serde(default)]
    pub revision: u64,
}

impl SceneWorld {
    pub fn new(entities: Vec<Entity>) -> Result<Self, WorldError> {
        let scene = Self {
            entities,
            image_ref: None,
            revision: 0,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.entities {
            e.validate()?;
            if !seen.insert(e.id.as_str()) {
                return Err(WorldError::DuplicateId(e.id.clone()));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, SceneFileError> {
        let scene: SceneWorld = serde_json::from_str(text)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn get(&self, id: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }

    /// Looks up an entity that must exist and be visible.
    pub fn visible_entity(&self, id: &str) -> Result<&Entity, WorldError> {
        let e = self
            .get(id)
            .ok_or_else(|| WorldError::UnknownEntity(id.to_string()))?;
        if !e.visible {
            return Err(WorldError::NotVisible(id.to_string()));
        }
        Ok(e)
    }

    pub fn is_visible(&self, id: &str) -> bool {
        self.get(id).is_some_and(|e| e.visible)
    }

    pub fn visible(&self) -> impl Iterator<Item = &Entity> {
        self.entities.iter().filter(|e| e.visible)
    }

    /// Visible ids, sorted.
    pub fn visible_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.visible().map(|e| e.id.clone()).collect();
        ids.sort();
        ids
    }
}

#[derive(Debug, Error)]
pub enum SceneFileError {
    #[error("scene json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    World(#[from] WorldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialRelation {
    LeftOf,
    RightOf,
    Above,
    Below,
    /// `Contains(a, b)`: b lies fully inside a.
    Contains,
    /// `Inside(a, b)`: a lies fully inside b.
    Inside,
    Overlaps,
}

impl SpatialRelation {
    pub const ALL: [SpatialRelation; 7] = [
        SpatialRelation::LeftOf,
        SpatialRelation::RightOf,
        SpatialRelation::Above,
        SpatialRelation::Below,
        SpatialRelation::Contains,
        SpatialRelation::Inside,
        SpatialRelation::Overlaps,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SpatialRelation::LeftOf => "LeftOf",
            SpatialRelation::RightOf => "RightOf",
            SpatialRelation::Above => "Above",
            SpatialRelation::Below => "Below",
            SpatialRelation::Contains => "Contains",
            SpatialRelation::Inside => "Inside",
            SpatialRelation::Overlaps => "Overlaps",
        }
    }

    /// English phrase used by the instruction grammar, when one exists.
    pub fn phrase(self) -> Option<&'static str> {
        match self {
            SpatialRelation::LeftOf => Some("left of"),
            SpatialRelation::RightOf => Some("right of"),
            SpatialRelation::Above => Some("above"),
            SpatialRelation::Below => Some("below"),
            SpatialRelation::Inside => Some("inside"),
            SpatialRelation::Contains => Some("containing"),
            SpatialRelation::Overlaps => None,
        }
    }
}

impl fmt::Display for SpatialRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SpatialRelation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SpatialRelation::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown relation `{s}`"))
    }
}

/// Evaluates `rel(a, b)` against the scene.
///
/// Directional relations compare box centers with a dead zone of `margin`
/// on either side, so near-ties make both directions false.
pub fn relation_holds(
    rel: SpatialRelation,
    a: &str,
    b: &str,
    scene: &SceneWorld,
    margin: f64,
) -> Result<bool, WorldError> {
    let ea = scene.visible_entity(a)?;
    let eb = scene.visible_entity(b)?;
    if a == b {
        return Err(WorldError::SelfRelation(a.to_string()));
    }
    Ok(boxes_relate(rel, &ea.bbox, &eb.bbox, margin))
}

/// The geometric predicate behind [`relation_holds`].
pub fn boxes_relate(rel: SpatialRelation, a: &BBox, b: &BBox, margin: f64) -> bool {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    match rel {
        SpatialRelation::LeftOf => ax < bx - margin,
        SpatialRelation::RightOf => ax > bx + margin,
        SpatialRelation::Above => ay < by - margin,
        SpatialRelation::Below => ay > by + margin,
        SpatialRelation::Contains => a.contains(b),
        SpatialRelation::Inside => b.contains(a),
        SpatialRelation::Overlaps => a.intersection_area(b) > 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorldEvent {
    Move { id: String, bbox: BBox },
    SetState { id: String, key: String, value: String },
    SetAttribute { id: String, key: String, value: String },
    Appear { entity: Entity },
    Disappear { id: String },
}

impl WorldEvent {
    pub fn target(&self) -> &str {
        match self {
            WorldEvent::Move { id, .. }
            | WorldEvent::SetState { id, .. }
            | WorldEvent::SetAttribute { id, .. }
            | WorldEvent::Disappear { id } => id,
            WorldEvent::Appear { entity } => &entity.id,
        }
    }
}

/// Applies one event, returning the next scene revision. The input is untouched.
pub fn apply_event(scene: &SceneWorld, event: &WorldEvent) -> Result<SceneWorld, WorldError> {
    let mut next = scene.clone();
    let idx = |id: &str| {
        scene
            .entities
            .iter()
            .position(|e| e.id == id)
            .ok_or_else(|| WorldError::UnknownEntity(id.to_string()))
    };
    match event {
        WorldEvent::Move { id, bbox } => {
            let i = idx(id)?;
            // re-validate: the box may have been built without going through BBox::new
            let bbox = BBox::new(bbox.x, bbox.y, bbox.w, bbox.h)?;
            next.entities[i].bbox = bbox;
        }
        WorldEvent::SetState { id, key, value } => {
            let i = idx(id)?;
            if key.is_empty() {
                return Err(WorldError::InvalidEntity("empty state key".into()));
            }
            next.entities[i].state.insert(key.clone(), value.clone());
        }
        WorldEvent::SetAttribute { id, key, value } => {
            let i = idx(id)?;
            if key.is_empty() {
                return Err(WorldError::InvalidEntity("empty attribute key".into()));
            }
            next.entities[i].attributes.insert(key.clone(), value.clone());
        }
        WorldEvent::Appear { entity } => {
            if scene.get(&entity.id).is_some() {
                return Err(WorldError::DuplicateId(entity.id.clone()));
            }
            entity.validate()?;
            next.entities.push(entity.clone());
        }
        WorldEvent::Disappear { id } => {
            let i = idx(id)?;
            next.entities.remove(i);
        }
    }
    next.revision = scene.revision + 1;
    Ok(next)
}

/// Applies a batch of events atomically: either all apply or the scene is unchanged.
pub fn apply_events(scene: &SceneWorld, events: &[WorldEvent]) -> Result<SceneWorld, WorldError> {
    events
        .iter()
        .try_fold(scene.clone(), |s, ev| apply_event(&s, ev))
}

/// Conjunctive entity predicate: category plus exact attribute key/value pairs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EntityFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

impl EntityFilter {
    pub fn category(cat: &str) -> Self {
        Self {
            category: Some(cat.to_string()),
            attributes: BTreeMap::new(),
        }
    }

    pub fn with_attr(mut self, key: &str, value: &str) -> Self {
        self.attributes.insert(key.to_string(), value.to_string());
        self
    }

    pub fn matches(&self, e: &Entity) -> bool {
        self.category.as_ref().is_none_or(|c| *c == e.category)
            && self
                .attributes
                .iter()
                .all(|(k, v)| e.attributes.get(k) == Some(v))
    }
}

/// Visible entities matching every clause of `filter`, sorted by id.
pub fn find_entities(scene: &SceneWorld, filter: &EntityFilter) -> Vec<String> {
    let mut ids: Vec<String> = scene
        .visible()
        .filter(|e| filter.matches(e))
        .map(|e| e.id.clone())
        .collect();
    ids.sort();
    ids
}
