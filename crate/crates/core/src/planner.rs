//! Command text to action primitives, and topology-aware plan expansion.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{build_topology, ObjectId, TopologyGraph, WorkspaceObject};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveKind {
    Pick,
    Put,
    Pour,
    Swap,
    Grasp,
    Push,
    Move,
    Rotate,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 8] = [
        PrimitiveKind::Pick,
        PrimitiveKind::Put,
        PrimitiveKind::Pour,
        PrimitiveKind::Swap,
        PrimitiveKind::Grasp,
        PrimitiveKind::Push,
        PrimitiveKind::Move,
        PrimitiveKind::Rotate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveKind::Pick => "pick",
            PrimitiveKind::Put => "put",
            PrimitiveKind::Pour => "pour",
            PrimitiveKind::Swap => "swap",
            PrimitiveKind::Grasp => "grasp",
            PrimitiveKind::Push => "push",
            PrimitiveKind::Move => "move",
            PrimitiveKind::Rotate => "rotate",
        }
    }
}

impl fmt::Display for PrimitiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

const SYNONYMS: &[(&str, PrimitiveKind)] = &[
    ("pick", PrimitiveKind::Pick),
    ("lift", PrimitiveKind::Pick),
    ("take", PrimitiveKind::Pick),
    ("fetch", PrimitiveKind::Pick),
    ("get", PrimitiveKind::Pick),
    ("put", PrimitiveKind::Put),
    ("place", PrimitiveKind::Put),
    ("set", PrimitiveKind::Put),
    ("drop", PrimitiveKind::Put),
    ("pour", PrimitiveKind::Pour),
    ("empty", PrimitiveKind::Pour),
    ("swap", PrimitiveKind::Swap),
    ("switch", PrimitiveKind::Swap),
    ("exchange", PrimitiveKind::Swap),
    ("grasp", PrimitiveKind::Grasp),
    ("grab", PrimitiveKind::Grasp),
    ("grip", PrimitiveKind::Grasp),
    ("hold", PrimitiveKind::Grasp),
    ("push", PrimitiveKind::Push),
    ("shove", PrimitiveKind::Push),
    ("nudge", PrimitiveKind::Push),
    ("move", PrimitiveKind::Move),
    ("bring", PrimitiveKind::Move),
    ("carry", PrimitiveKind::Move),
    ("transfer", PrimitiveKind::Move),
    ("rotate", PrimitiveKind::Rotate),
    ("turn", PrimitiveKind::Rotate),
    ("spin", PrimitiveKind::Rotate),
    ("twist", PrimitiveKind::Rotate),
];

/// First word of `text` (case-insensitive) found in the synonym table.
pub fn parse_command(text: &str) -> Option<PrimitiveKind> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .find_map(|w| SYNONYMS.iter().find(|(s, _)| *s == w).map(|(_, k)| *k))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeSlot {
    pub name: String,
    pub position: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum Destination {
    Slot(String),
    Object(ObjectId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    pub target: ObjectId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub destination: Option<Destination>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Plan {
    pub steps: Vec<Primitive>,
    /// Unhandled obstructions, e.g. objects inside a container target.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("target `{0}` is not in the topology graph")]
    UnknownTarget(ObjectId),
    #[error("`{0}` is obstructed but no free-space slot is declared")]
    NoFreeSpace(ObjectId),
}

/// Everything resting on `target`, directly or through a stack, ordered
/// so each object comes before anything it rests on.
pub fn obstructions(target: &ObjectId, topo: &TopologyGraph) -> Vec<ObjectId> {
    let mut above: BTreeSet<ObjectId> = BTreeSet::new();
    let mut frontier = vec![target.clone()];
    while let Some(id) = frontier.pop() {
        for child in topo.supported_by(&id) {
            if child != target && above.insert(child.clone()) {
                frontier.push(child.clone());
            }
        }
    }
    // number of obstructing objects resting on each one
    let mut load: BTreeMap<&ObjectId, usize> = above.iter().map(|id| (id, 0)).collect();
    for id in &above {
        for child in topo.supported_by(id) {
            if above.contains(child) && child != id {
                *load.get_mut(id).expect("id in set") += 1;
            }
        }
    }
    let mut order = Vec::with_capacity(above.len());
    let mut done: BTreeSet<&ObjectId> = BTreeSet::new();
    while order.len() < above.len() {
        let next = load
            .iter()
            .find(|(id, n)| **n == 0 && !done.contains(*id))
            .map(|(id, _)| *id);
        let Some(id) = next else {
            // "on" cycle: finish in id order
            order.extend(above.iter().filter(|id| !done.contains(id)).cloned());
            break;
        };
        done.insert(id);
        order.push(id.clone());
        for e in topo.edges.iter().filter(|e| &e.child == id && e.relation == crate::scene::Relation::On) {
            if let Some(n) = load.get_mut(&e.parent) {
                *n = n.saturating_sub(1);
            }
        }
    }
    order
}

/// Prepends pick/put relocations for every object stacked on `target`
/// (topmost first), then the requested primitive.
pub fn expand_plan(
    kind: PrimitiveKind,
    target: &ObjectId,
    topo: &TopologyGraph,
    free_slots: &[FreeSlot],
) -> Result<Plan, PlanError> {
    if !topo.contains_node(target) {
        return Err(PlanError::UnknownTarget(target.clone()));
    }
    let blockers = obstructions(target, topo);
    if !blockers.is_empty() && free_slots.is_empty() {
        return Err(PlanError::NoFreeSpace(target.clone()));
    }
    let mut steps = Vec::new();
    for (k, id) in blockers.iter().enumerate() {
        let slot = &free_slots[k % free_slots.len()];
        steps.push(Primitive { kind: PrimitiveKind::Pick, target: id.clone(), destination: None });
        steps.push(Primitive {
            kind: PrimitiveKind::Put,
            target: id.clone(),
            destination: Some(Destination::Slot(slot.name.clone())),
        });
    }
    steps.push(Primitive { kind, target: target.clone(), destination: None });
    let warnings = topo.contained_in(target).map(|id| format!("`{id}` is inside `{target}`")).collect();
    Ok(Plan { steps, warnings })
}

/// Simulated duration of one primitive, seconds.
pub const STEP_DURATION: f64 = 2.0;

/// Applies a plan to the workspace as timed re-parenting: objects put into a
/// slot are moved there and rest on the table. Returns the elapsed time.
pub fn simulate_plan(plan: &Plan, objects: &mut [WorkspaceObject], free_slots: &[FreeSlot]) -> (TopologyGraph, f64) {
    for step in &plan.steps {
        let Some(Destination::Slot(name)) = &step.destination else { continue };
        let (Some(slot), Some(obj)) = (
            free_slots.iter().find(|s| &s.name == name),
            objects.iter_mut().find(|o| o.object_id == step.target),
        ) else {
            continue;
        };
        let shift = Vector3::new(slot.position.x - obj.position.x, slot.position.y - obj.position.y, 0.0);
        let drop = obj.z_extent[0] - slot.position.z;
        let lower = Vector3::new(0.0, 0.0, drop);
        obj.position += shift - lower;
        obj.pre_grasp.position += shift - lower;
        for p in &mut obj.surface_points {
            *p += shift - lower;
        }
        for v in &mut obj.footprint {
            v[0] += shift.x;
            v[1] += shift.y;
        }
        obj.z_extent = [obj.z_extent[0] - drop, obj.z_extent[1] - drop];
    }
    (build_topology(objects), plan.steps.len() as f64 * STEP_DURATION)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Relation, TopologyEdge};
    use proptest::prelude::*;

    fn id(s: &str) -> ObjectId {
        ObjectId::from(s)
    }

    fn chain(names: &[&str]) -> TopologyGraph {
        // names[0] on names[1] on names[2] ...
        let mut edges = Vec::new();
        for w in names.windows(2) {
            edges.push(TopologyEdge { child: id(w[0]), relation: Relation::On, parent: id(w[1]) });
        }
        let mut nodes: Vec<ObjectId> = names.iter().map(|s| id(s)).collect();
        nodes.sort();
        TopologyGraph { nodes, edges }
    }

    fn slot() -> Vec<FreeSlot> {
        vec![FreeSlot { name: "free".into(), position: Vector3::new(0.5, 0.5, 0.0) }]
    }

    fn pick(s: &str) -> Primitive {
        Primitive { kind: PrimitiveKind::Pick, target: id(s), destination: None }
    }

    fn put_free(s: &str) -> Primitive {
        Primitive { kind: PrimitiveKind::Put, target: id(s), destination: Some(Destination::Slot("free".into())) }
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse_command("pick it up"), Some(PrimitiveKind::Pick));
        assert_eq!(parse_command("pour"), Some(PrimitiveKind::Pour));
        assert_eq!(parse_command("dance"), None);
        assert_eq!(parse_command("Please GRAB that"), Some(PrimitiveKind::Grasp));
        assert_eq!(parse_command("place it here"), Some(PrimitiveKind::Put));
        for k in PrimitiveKind::ALL {
            assert_eq!(parse_command(k.name()), Some(k));
        }
    }

    #[test]
    fn single_obstruction() {
        let plan = expand_plan(PrimitiveKind::Pick, &id("B"), &chain(&["A", "B"]), &slot()).unwrap();
        assert_eq!(plan.steps, vec![pick("A"), put_free("A"), pick("B")]);
    }

    #[test]
    fn clear_target() {
        let plan = expand_plan(PrimitiveKind::Pick, &id("B"), &chain(&["B", "C"]), &slot()).unwrap();
        assert_eq!(plan.steps, vec![pick("B")]);
    }

    #[test]
    fn stack_of_three() {
        let plan = expand_plan(PrimitiveKind::Pick, &id("C"), &chain(&["A", "B", "C"]), &slot()).unwrap();
        assert_eq!(plan.steps, vec![pick("A"), put_free("A"), pick("B"), put_free("B"), pick("C")]);
    }

    #[test]
    fn transitive_edges_do_not_change_order() {
        let mut g = chain(&["A", "B", "C"]);
        g.edges.push(TopologyEdge { child: id("A"), relation: Relation::On, parent: id("C") });
        let plan = expand_plan(PrimitiveKind::Pick, &id("C"), &g, &slot()).unwrap();
        assert_eq!(plan.steps, vec![pick("A"), put_free("A"), pick("B"), put_free("B"), pick("C")]);
    }

    #[test]
    fn failures() {
        assert_eq!(
            expand_plan(PrimitiveKind::Pick, &id("Z"), &chain(&["A", "B"]), &slot()),
            Err(PlanError::UnknownTarget(id("Z")))
        );
        assert_eq!(
            expand_plan(PrimitiveKind::Pick, &id("B"), &chain(&["A", "B"]), &[]),
            Err(PlanError::NoFreeSpace(id("B")))
        );
        // a clear target needs no slot
        assert!(expand_plan(PrimitiveKind::Pick, &id("A"), &chain(&["A", "B"]), &[]).is_ok());
    }

    #[test]
    fn in_relations_are_flagged() {
        let g = TopologyGraph {
            nodes: vec![id("bowl"), id("spoon")],
            edges: vec![TopologyEdge { child: id("spoon"), relation: Relation::In, parent: id("bowl") }],
        };
        let plan = expand_plan(PrimitiveKind::Pour, &id("bowl"), &g, &slot()).unwrap();
        assert_eq!(plan.steps.len(), 1);
        assert_eq!(plan.warnings.len(), 1);
    }

    proptest! {
        #[test]
        fn plans_respect_stack_order(depth in 1usize..=5, pick_level in 0usize..5) {
            let names: Vec<String> = (0..depth).map(|k| format!("o{k}")).collect();
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            let g = chain(&refs);
            let target = id(refs[pick_level.min(depth - 1)]);
            let plan = expand_plan(PrimitiveKind::Pick, &target, &g, &slot()).unwrap();
            let position = |o: &ObjectId| plan.steps.iter().position(|s| &s.target == o && s.kind == PrimitiveKind::Pick);
            for e in &g.edges {
                if let (Some(child), Some(parent)) = (position(&e.child), position(&e.parent)) {
                    prop_assert!(child < parent);
                }
            }
            prop_assert_eq!(plan.steps.last().unwrap().target.clone(), target.clone());
            let idx = refs.iter().position(|n| id(n) == target).unwrap();
            prop_assert_eq!(plan.steps.len(), 2 * idx + 1);
            // idempotent once clear
            if idx == 0 {
                prop_assert_eq!(plan.steps.len(), 1);
            }
        }
    }
}
