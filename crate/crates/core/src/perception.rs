//! Instruction-driven perception over the scene.
//!
//! [`attend`] picks the entities the current turn is about; visual tools
//! registered in a [`ToolRegistry`] then detect those categories and the
//! pairwise relations among focused entities are listed as facts. Everything
//! is serialized into line-oriented text for the model prompt:
//!
//! ```text
//! FOCUS e1 e4
//! DET ball 0.100 0.400 0.100 0.100 1.000
//! REL LeftOf e1 e4
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::MemoryState;
use crate::planner::Instruction;
use crate::text::{names_category, tokens};
use crate::world::{boxes_relate, BBox, EntityFilter, SceneWorld, SpatialRelation, DEFAULT_MARGIN};

pub const DEFAULT_FOCUS: usize = 5;
pub const DEFAULT_DETECTOR: &str = "detector";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PerceptionError {
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("tool `{0}` already registered")]
    DuplicateTool(String),
    #[error("invalid region {0:?}")]
    InvalidRegion([f64; 4]),
    #[error("invalid noise profile: {0}")]
    InvalidNoise(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Detect,
    Locate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub drop_prob: f64,
    pub jitter: f64,
}

impl NoiseProfile {
    pub fn validate(&self) -> Result<(), PerceptionError> {
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(PerceptionError::InvalidNoise(format!("drop_prob {}", self.drop_prob)));
        }
        if !(0.0..=1.0).contains(&self.jitter) {
            return Err(PerceptionError::InvalidNoise(format!("jitter {}", self.jitter)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub bbox: BBox,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolOutput {
    pub tool: String,
    pub revision: u64,
    pub detections: Vec<Detection>,
}

pub trait VisualTool: Send + Sync {
    fn name(&self) -> &str;
    fn capability(&self) -> Capability;
    fn invoke(
        &self,
        scene: &SceneWorld,
        region: Option<[f64; 4]>,
        query: Option<&EntityFilter>,
        rng: &mut ChaCha8Rng,
    ) -> Result<ToolOutput, PerceptionError>;
}

/// Detector that reads the scene directly, optionally degraded by noise.
#[derive(Debug, Clone)]
pub struct GroundTruthDetector {
    name: String,
    capability: Capability,
    noise: Option<NoiseProfile>,
}

impl GroundTruthDetector {
    pub fn oracle(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            capability: Capability::Detect,
            noise: None,
        }
    }

    pub fn noisy(name: impl Into<String>, noise: NoiseProfile) -> Result<Self, PerceptionError> {
        noise.validate()?;
        Ok(Self {
            name: name.into(),
            capability: Capability::Detect,
            noise: Some(noise),
        })
    }

    pub fn with_capability(mut self, capability: Capability) -> Self {
        self.capability = capability;
        self
    }
}

impl VisualTool for GroundTruthDetector {
    fn name(&self) -> &str {
        &self.name
    }

    fn capability(&self) -> Capability {
        self.capability
    }

    fn invoke(
        &self,
        scene: &SceneWorld,
        region: Option<[f64; 4]>,
        query: Option<&EntityFilter>,
        rng: &mut ChaCha8Rng,
    ) -> Result<ToolOutput, PerceptionError> {
        let region = region
            .map(|r| BBox::try_from(r).map_err(|_| PerceptionError::InvalidRegion(r)))
            .transpose()?;
        let mut matched: Vec<_> = scene
            .visible()
            .filter(|e| query.is_none_or(|q| q.matches(e)))
            .filter(|e| {
                let (cx, cy) = e.bbox.center();
                region.is_none_or(|r| r.contains_point(cx, cy))
            })
            .collect();
        matched.sort_by(|a, b| a.id.cmp(&b.id));

        let mut detections = Vec::with_capacity(matched.len());
        for e in matched {
            match self.noise {
                None => detections.push(Detection {
                    label: e.category.clone(),
                    bbox: e.bbox,
                    confidence: 1.0,
                    entity_id: Some(e.id.clone()),
                }),
                Some(noise) => {
                    if rng.random_bool(noise.drop_prob) {
                        continue;
                    }
                    let j = noise.jitter;
                    let mut wiggle = |v: f64| if j > 0.0 { v + rng.random_range(-j..=j) } else { v };
                    let b = e.bbox;
                    let x0 = wiggle(b.x());
                    let y0 = wiggle(b.y());
                    let x1 = wiggle(b.x() + b.w());
                    let y1 = wiggle(b.y() + b.h());
                    detections.push(Detection {
                        label: e.category.clone(),
                        bbox: BBox::from_corners_clamped(x0, y0, x1, y1),
                        confidence: 1.0 - noise.drop_prob,
                        entity_id: Some(e.id.clone()),
                    });
                }
            }
        }
        Ok(ToolOutput {
            tool: self.name.clone(),
            revision: scene.revision,
            detections,
        })
    }
}

#[derive(Clone, Default)]
pub struct ToolRegistry {
    tools: BTreeMap<String, Arc<dyn VisualTool>>,
}

impl fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.tools.keys()).finish()
    }
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding one noiseless detector under [`DEFAULT_DETECTOR`].
    pub fn with_oracle_detector() -> Self {
        let mut r = Self::new();
        r.register(Arc::new(GroundTruthDetector::oracle(DEFAULT_DETECTOR)))
            .expect("empty registry");
        r
    }

    pub fn with_noisy_detector(noise: NoiseProfile) -> Result<Self, PerceptionError> {
        let mut r = Self::new();
        r.register(Arc::new(GroundTruthDetector::noisy(DEFAULT_DETECTOR, noise)?))?;
        Ok(r)
    }

    pub fn register(&mut self, tool: Arc<dyn VisualTool>) -> Result<(), PerceptionError> {
        let name = tool.name().to_string();
        if self.tools.contains_key(&name) {
            return Err(PerceptionError::DuplicateTool(name));
        }
        self.tools.insert(name, tool);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn VisualTool>> {
        self.tools.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tools.keys().map(String::as_str)
    }
}

pub fn invoke_tool(
    registry: &ToolRegistry,
    name: &str,
    scene: &SceneWorld,
    region: Option<[f64; 4]>,
    query: Option<&EntityFilter>,
    rng: &mut ChaCha8Rng,
) -> Result<ToolOutput, PerceptionError> {
    registry
        .get(name)
        .ok_or_else(|| PerceptionError::UnknownTool(name.to_string()))?
        .invoke(scene, region, query, rng)
}

/// A relation triple `rel(a, b)` observed to hold.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Fact {
    pub rel: SpatialRelation,
    pub a: String,
    pub b: String,
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "REL {} {} {}", self.rel, self.a, self.b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Percept {
    pub focused_entity_ids: Vec<String>,
    pub tool_outputs: Vec<ToolOutput>,
    pub facts: Vec<Fact>,
    pub rendered_text: String,
    pub scene_revision: u64,
    /// Whether detections were requested this turn (tools enabled).
    pub tools_used: bool,
}

impl Percept {
    pub fn empty(revision: u64) -> Self {
        Self {
            focused_entity_ids: Vec::new(),
            tool_outputs: Vec::new(),
            facts: Vec::new(),
            rendered_text: String::new(),
            scene_revision: revision,
            tools_used: false,
        }
    }

    pub fn detections(&self) -> impl Iterator<Item = &Detection> {
        self.tool_outputs.iter().flat_map(|o| o.detections.iter())
    }

    pub fn detection_for(&self, entity: &str) -> Option<&Detection> {
        self.detections()
            .find(|d| d.entity_id.as_deref() == Some(entity))
    }

    pub fn is_focused(&self, entity: &str) -> bool {
        self.focused_entity_ids.iter().any(|f| f == entity)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerceptionFlags {
    pub disable_perception: bool,
    pub disable_tools: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionConfig {
    pub n_focus: usize,
    pub margin: f64,
    pub detector: String,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            n_focus: DEFAULT_FOCUS,
            margin: DEFAULT_MARGIN,
            detector: DEFAULT_DETECTOR.to_string(),
        }
    }
}

/// Attention score of every visible entity, unfiltered and unsorted.
pub fn attention_scores(instruction: &Instruction, memory: &MemoryState, scene: &SceneWorld) -> Vec<(String, f64)> {
    let mut words = tokens(&instruction.raw);
    words.sort();
    words.dedup();
    scene
        .visible()
        .map(|e| {
            let lexical = words
                .iter()
                .filter(|w| names_category(w, &e.category) || e.attributes.values().any(|v| v == *w))
                .count() as f64
                * 2.0;
            let long = if memory.in_long_tier(&e.id) { 1.0 } else { 0.0 };
            let sal = memory.strongest_salience(&e.id).unwrap_or(0.0);
            (e.id.clone(), lexical + long + sal)
        })
        .collect()
}

/// Top `n_focus` entities by attention score, ties by id; zero scores excluded.
pub fn attend(instruction: &Instruction, memory: &MemoryState, scene: &SceneWorld, n_focus: usize) -> Vec<String> {
    let mut scored: Vec<(String, f64)> = attention_scores(instruction, memory, scene)
        .into_iter()
        .filter(|(_, s)| *s > 0.0)
        .collect();
    scored.sort_by(|(ia, sa), (ib, sb)| sb.total_cmp(sa).then(ia.cmp(ib)));
    scored.into_iter().take(n_focus).map(|(id, _)| id).collect()
}

/// All relation facts that hold among `ids`, over ordered pairs in id order.
pub fn pairwise_facts(ids: &[String], scene: &SceneWorld, margin: f64) -> Vec<Fact> {
    let mut sorted: Vec<&String> = ids.iter().collect();
    sorted.sort();
    let mut facts = Vec::new();
    for a in &sorted {
        for b in &sorted {
            if a == b {
                continue;
            }
            let (Some(ea), Some(eb)) = (scene.get(a), scene.get(b)) else {
                continue;
            };
            for rel in SpatialRelation::ALL {
                if boxes_relate(rel, &ea.bbox, &eb.bbox, margin) {
                    facts.push(Fact {
                        rel,
                        a: (*a).clone(),
                        b: (*b).clone(),
                    });
                }
            }
        }
    }
    facts
}

pub fn perceive(
    scene: &SceneWorld,
    memory: &MemoryState,
    instruction: &Instruction,
    tools: &ToolRegistry,
    flags: PerceptionFlags,
    config: &PerceptionConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Percept, PerceptionError> {
    let focus = if flags.disable_perception {
        scene.visible_ids()
    } else {
        attend(instruction, memory, scene, config.n_focus)
    };

    let mut tool_outputs = Vec::new();
    if !flags.disable_tools {
        let mut categories: Vec<&str> = focus
            .iter()
            .filter_map(|id| scene.get(id))
            .map(|e| e.category.as_str())
            .collect();
        categories.sort();
        categories.dedup();
        for cat in categories {
            let q = EntityFilter::category(cat);
            tool_outputs.push(invoke_tool(tools, &config.detector, scene, None, Some(&q), rng)?);
        }
    }

    let facts = if flags.disable_perception {
        Vec::new()
    } else {
        pairwise_facts(&focus, scene, config.margin)
    };

    let mut percept = Percept {
        focused_entity_ids: focus,
        tool_outputs,
        facts,
        rendered_text: String::new(),
        scene_revision: scene.revision,
        tools_used: !flags.disable_tools,
    };
    percept.rendered_text = render_percept(&percept);
    Ok(percept)
}

fn label_token(label: &str) -> String {
    label.split_whitespace().collect::<Vec<_>>().join("_")
}

pub fn detection_line(d: &Detection) -> String {
    format!(
        "DET {} {:.3} {:.3} {:.3} {:.3} {:.3}",
        label_token(&d.label),
        d.bbox.x(),
        d.bbox.y(),
        d.bbox.w(),
        d.bbox.h(),
        d.confidence
    )
}

pub fn render_percept(p: &Percept) -> String {
    let mut lines = Vec::new();
    let mut focus = String::from("FOCUS");
    for id in &p.focused_entity_ids {
        focus.push(' ');
        focus.push_str(id);
    }
    lines.push(focus);
    lines.extend(p.detections().map(detection_line));
    lines.extend(p.facts.iter().map(Fact::to_string));
    lines.join("\n")
}

/// Detection as recovered from text: label, `[x, y, w, h]`, confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedDetection {
    pub label: String,
    pub bbox: [f64; 4],
    pub confidence: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedPercept {
    pub focus: Vec<String>,
    pub detections: Vec<ParsedDetection>,
    pub facts: Vec<Fact>,
}

pub fn parse_percept(text: &str) -> Result<ParsedPercept, String> {
    let mut out = ParsedPercept::default();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("FOCUS") => out.focus.extend(parts.map(str::to_string)),
            Some("DET") => {
                let label = parts.next().ok_or("DET without label")?.to_string();
                let nums: Vec<f64> = parts
                    .map(|p| p.parse::<f64>().map_err(|e| format!("bad number `{p}`: {e}")))
                    .collect::<Result<_, _>>()?;
                if nums.len() != 5 {
                    return Err(format!("DET expects 5 numbers, got {}", nums.len()));
                }
                out.detections.push(ParsedDetection {
                    label,
                    bbox: [nums[0], nums[1], nums[2], nums[3]],
                    confidence: nums[4],
                });
            }
            Some("REL") => {
                let rel = parts.next().ok_or("REL without relation")?.parse()?;
                let a = parts.next().ok_or("REL without subject")?.to_string();
                let b = parts.next().ok_or("REL without object")?.to_string();
                if parts.next().is_some() {
                    return Err(format!("trailing tokens in `{line}`"));
                }
                out.facts.push(Fact { rel, a, b });
            }
            Some(other) => return Err(format!("unknown line kind `{other}`")),
            None => {}
        }
    }
    Ok(out)
}

/// Rounds to the 3-decimal precision used in detection lines.
pub fn round3(v: f64) -> f64 {
    format!("{v:.3}").parse().expect("formatted float")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Entity;
    use rand::SeedableRng;

    fn bb(x: f64, y: f64) -> BBox {
        BBox::new(x, y, 0.1, 0.1).unwrap()
    }

    fn scene() -> SceneWorld {
        SceneWorld::new(vec![
            Entity::new("e1", "ball", bb(0.1, 0.4)).with_attr("color", "red"),
            Entity::new("e2", "cup", bb(0.6, 0.4)).with_attr("color", "blue"),
            Entity::new("e3", "ball", bb(0.4, 0.1)).with_attr("color", "green"),
        ])
        .unwrap()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn attends_to_the_named_entity() {
        let s = SceneWorld::new(vec![
            Entity::new("e1", "ball", bb(0.1, 0.4)).with_attr("color", "red"),
            Entity::new("e2", "cup", bb(0.6, 0.4)).with_attr("color", "blue"),
        ])
        .unwrap();
        let focus = attend(&Instruction::new("point to the red ball", 1), &MemoryState::default(), &s, 5);
        assert_eq!(focus, ["e1"]);
    }

    #[test]
    fn empty_tokens_empty_focus() {
        let focus = attend(&Instruction::new("it", 1), &MemoryState::default(), &scene(), 5);
        assert!(focus.is_empty());
    }

    #[test]
    fn oracle_detector_reads_ground_truth() {
        let reg = ToolRegistry::with_oracle_detector();
        let out = invoke_tool(&reg, DEFAULT_DETECTOR, &scene(), None, Some(&EntityFilter::category("ball")), &mut rng()).unwrap();
        let ids: Vec<_> = out.detections.iter().map(|d| d.entity_id.clone().unwrap()).collect();
        assert_eq!(ids, ["e1", "e3"]);
        assert!(out.detections.iter().all(|d| d.confidence == 1.0));
    }

    #[test]
    fn full_drop_yields_nothing() {
        let reg = ToolRegistry::with_noisy_detector(NoiseProfile { drop_prob: 1.0, jitter: 0.0 }).unwrap();
        let out = invoke_tool(&reg, DEFAULT_DETECTOR, &scene(), None, None, &mut rng()).unwrap();
        assert!(out.detections.is_empty());
    }

    #[test]
    fn tool_errors() {
        let reg = ToolRegistry::with_oracle_detector();
        assert_eq!(
            invoke_tool(&reg, "segmenter", &scene(), None, None, &mut rng()).unwrap_err(),
            PerceptionError::UnknownTool("segmenter".into())
        );
        assert!(matches!(
            invoke_tool(&reg, DEFAULT_DETECTOR, &scene(), Some([0.5, 0.5, 0.9, 0.1]), None, &mut rng()),
            Err(PerceptionError::InvalidRegion(_))
        ));
        let mut reg2 = ToolRegistry::with_oracle_detector();
        assert!(reg2.register(Arc::new(GroundTruthDetector::oracle(DEFAULT_DETECTOR))).is_err());
    }

    #[test]
    fn region_limits_detections() {
        let reg = ToolRegistry::with_oracle_detector();
        let out = invoke_tool(&reg, DEFAULT_DETECTOR, &scene(), Some([0.0, 0.0, 0.5, 1.0]), None, &mut rng()).unwrap();
        let ids: Vec<_> = out.detections.iter().filter_map(|d| d.entity_id.clone()).collect();
        assert_eq!(ids, ["e1", "e3"]);
    }

    #[test]
    fn tools_disabled_still_computes_facts() {
        let flags = PerceptionFlags {
            disable_perception: false,
            disable_tools: true,
        };
        let p = perceive(
            &scene(),
            &MemoryState::default(),
            &Instruction::new("is the red ball left of the blue cup", 1),
            &ToolRegistry::with_oracle_detector(),
            flags,
            &PerceptionConfig::default(),
            &mut rng(),
        )
        .unwrap();
        assert!(p.tool_outputs.is_empty());
        assert!(p.facts.contains(&Fact {
            rel: SpatialRelation::LeftOf,
            a: "e1".into(),
            b: "e2".into()
        }));
    }

    #[test]
    fn single_entity_has_no_facts() {
        let s = SceneWorld::new(vec![Entity::new("e1", "ball", bb(0.1, 0.4))]).unwrap();
        let p = perceive(
            &s,
            &MemoryState::default(),
            &Instruction::new("point to the ball", 1),
            &ToolRegistry::with_oracle_detector(),
            PerceptionFlags::default(),
            &PerceptionConfig::default(),
            &mut rng(),
        )
        .unwrap();
        assert_eq!(p.focused_entity_ids, ["e1"]);
        assert!(p.facts.is_empty());
        assert_eq!(p.tool_outputs.len(), 1);
    }

    #[test]
    fn disabled_perception_dumps_all_ids() {
        let flags = PerceptionFlags {
            disable_perception: true,
            disable_tools: false,
        };
        let p = perceive(
            &scene(),
            &MemoryState::default(),
            &Instruction::new("it", 1),
            &ToolRegistry::with_oracle_detector(),
            flags,
            &PerceptionConfig::default(),
            &mut rng(),
        )
        .unwrap();
        assert_eq!(p.focused_entity_ids, ["e1", "e2", "e3"]);
        assert!(p.facts.is_empty());
    }

    #[test]
    fn rendered_lines_are_exact() {
        let d = Detection {
            label: "ball".into(),
            bbox: BBox::new(0.1, 0.25, 0.1234, 0.2).unwrap(),
            confidence: 0.7,
            entity_id: None,
        };
        assert_eq!(detection_line(&d), "DET ball 0.100 0.250 0.123 0.200 0.700");
        let f = Fact {
            rel: SpatialRelation::Above,
            a: "e1".into(),
            b: "e2".into(),
        };
        assert_eq!(f.to_string(), "REL Above e1 e2");
        assert!(parse_percept("BOGUS x").is_err());
        assert!(parse_percept("DET ball 1 2 3").is_err());
    }
}
