use super::reason::eval_description;
use super::{EntityQuery, PlanError};
use crate::memory::MemoryState;
use crate::perception::Percept;
use crate::world::SceneWorld;

/// Everything reference resolution and reasoning look at.
#[derive(Debug, Clone, Copy)]
pub struct ResolveContext<'a> {
    pub memory: &'a MemoryState,
    pub percept: &'a Percept,
    pub scene: &'a SceneWorld,
    pub margin: f64,
    /// Entity resolved by an earlier clause of the same turn; pronouns bind to it first.
    pub recent: Option<&'a str>,
}

impl<'a> ResolveContext<'a> {
    pub fn new(memory: &'a MemoryState, percept: &'a Percept, scene: &'a SceneWorld, margin: f64) -> Self {
        Self {
            memory,
            percept,
            scene,
            margin,
            recent: None,
        }
    }

    pub fn with_recent(mut self, recent: Option<&'a str>) -> Self {
        self.recent = recent;
        self
    }
}

/// Maps a mention to one entity id.
///
/// Candidates are the focused, visible entities that satisfy the mention's
/// constraints; a pronoun additionally needs an entity-mention memory entry.
/// Ranking: mention salience, then latest mention turn, then id. Ids in
/// `exclude` (other phrases of the same clause) are never returned for a
/// pronoun.
pub fn resolve_reference(mention: &EntityQuery, ctx: &ResolveContext, exclude: &[String]) -> Result<String, PlanError> {
    let unresolved = || PlanError::UnresolvedReference(mention.canonical());
    let focused = ctx
        .percept
        .focused_entity_ids
        .iter()
        .filter(|id| ctx.scene.is_visible(id));

    let candidates: Vec<&String> = match mention {
        EntityQuery::Pronoun { .. } => {
            if let Some(r) = ctx.recent {
                if ctx.scene.is_visible(r) && !exclude.iter().any(|e| e == r) {
                    return Ok(r.to_string());
                }
            }
            focused
                .filter(|id| !exclude.contains(id))
                .filter(|id| ctx.memory.mention_salience(id).is_some())
                .collect()
        }
        EntityQuery::Description { .. } => {
            let matching = eval_description(mention, ctx)?;
            focused.filter(|id| matching.contains_key(*id)).collect()
        }
    };

    candidates
        .into_iter()
        .max_by(|a, b| {
            let sa = ctx.memory.mention_salience(a).unwrap_or(0.0);
            let sb = ctx.memory.mention_salience(b).unwrap_or(0.0);
            sa.total_cmp(&sb)
                .then(ctx.memory.last_mention_turn(a).cmp(&ctx.memory.last_mention_turn(b)))
                .then(b.cmp(a))
        })
        .cloned()
        .ok_or_else(unresolved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::{ActionKind, AgentAction};
    use crate::planner::Instruction;
    use crate::world::{BBox, Entity};

    fn scene() -> SceneWorld {
        SceneWorld::new(vec![
            Entity::new("e1", "ball", BBox::new(0.1, 0.4, 0.1, 0.1).unwrap()).with_attr("color", "red"),
            Entity::new("e2", "ball", BBox::new(0.6, 0.4, 0.1, 0.1).unwrap()).with_attr("color", "blue"),
            Entity::new("e3", "cup", BBox::new(0.4, 0.1, 0.1, 0.1).unwrap()).with_attr("color", "red"),
        ])
        .unwrap()
    }

    fn percept(focus: &[&str]) -> Percept {
        let mut p = Percept::empty(0);
        p.focused_entity_ids = focus.iter().map(|s| s.to_string()).collect();
        p
    }

    fn pointed(memory: &MemoryState, id: &str, text: &str) -> MemoryState {
        let turn = memory.current_turn() + 1;
        let act = AgentAction::new(
            ActionKind::Point {
                entity_id: id.into(),
                bbox: None,
            },
            "s1",
            1,
        );
        memory.update(&Instruction::new(text, turn), &[act], &[])
    }

    #[test]
    fn it_after_discussing_red_ball() {
        let mem = pointed(&MemoryState::default(), "e1", "point to the red ball");
        let s = scene();
        let p = percept(&["e1"]);
        let ctx = ResolveContext::new(&mem, &p, &s, 0.05);
        assert_eq!(resolve_reference(&EntityQuery::it(), &ctx, &[]).unwrap(), "e1");
    }

    #[test]
    fn it_with_nothing_known_fails() {
        let mem = MemoryState::default();
        let s = scene();
        let p = percept(&[]);
        let ctx = ResolveContext::new(&mem, &p, &s, 0.05);
        assert_eq!(
            resolve_reference(&EntityQuery::it(), &ctx, &[]),
            Err(PlanError::UnresolvedReference("it".into()))
        );
    }

    #[test]
    fn pronoun_needs_memory_even_when_focused() {
        let mem = MemoryState::default();
        let s = scene();
        let p = percept(&["e1", "e3"]);
        let ctx = ResolveContext::new(&mem, &p, &s, 0.05);
        assert!(resolve_reference(&EntityQuery::it(), &ctx, &[]).is_err());
    }

    #[test]
    fn underspecified_prefers_salient_then_id() {
        let s = scene();
        let p = percept(&["e1", "e2"]);
        let empty = MemoryState::default();
        let ctx = ResolveContext::new(&empty, &p, &s, 0.05);
        let ball = EntityQuery::described(&[], "ball");
        assert_eq!(resolve_reference(&ball, &ctx, &[]).unwrap(), "e1");

        let mem = pointed(&empty, "e2", "point to the blue ball");
        let ctx = ResolveContext::new(&mem, &p, &s, 0.05);
        assert_eq!(resolve_reference(&ball, &ctx, &[]).unwrap(), "e2");
    }

    #[test]
    fn recent_binding_and_exclusion() {
        let mem = pointed(&MemoryState::default(), "e1", "point to the red ball");
        let s = scene();
        let p = percept(&["e1", "e3"]);
        let ctx = ResolveContext::new(&mem, &p, &s, 0.05).with_recent(Some("e3"));
        assert_eq!(resolve_reference(&EntityQuery::it(), &ctx, &[]).unwrap(), "e3");
        let ctx = ResolveContext::new(&mem, &p, &s, 0.05);
        assert!(resolve_reference(&EntityQuery::it(), &ctx, &["e1".to_string()]).is_err());
    }
}
