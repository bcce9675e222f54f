//! A hand-written transition used by tests and documentation: the player
//! walks west from the backyard into a shed holding a closed toolbox and a
//! workbench.

use crate::graph::{BeliefGraph, RelationRegistry, Triple, UpdateOp, DEFAULT_RELATIONS};
use crate::world::Transition;

pub fn default_registry() -> RelationRegistry {
    RelationRegistry::new(DEFAULT_RELATIONS.iter().map(|s| s.to_string())).expect("default relations are valid")
}

fn triple(head: &str, tail: &str, relation: &str) -> Triple {
    Triple::parse(head, tail, relation, &default_registry()).expect("example triples are valid")
}

/// The seven update commands of the shed transition, in the order they are
/// usually listed (not canonical order).
pub fn shed_ops() -> Vec<UpdateOp> {
    vec![
        UpdateOp::add(triple("player", "shed", "at")),
        UpdateOp::add(triple("shed", "backyard", "west_of")),
        UpdateOp::add(triple("wooden door", "shed", "east_of")),
        UpdateOp::add(triple("toolbox", "shed", "in")),
        UpdateOp::add(triple("toolbox", "closed", "is")),
        UpdateOp::add(triple("workbench", "shed", "in")),
        UpdateOp::delete(triple("player", "backyard", "at")),
    ]
}

/// Seen graph before the move.
pub fn shed_prior() -> BeliefGraph {
    [triple("player", "backyard", "at")].into_iter().collect()
}

/// The transition with canonical gold commands.
pub fn shed_transition() -> Transition {
    let prior = shed_prior();
    let next = prior.apply_update(&shed_ops().into());
    let ops = prior.diff(&next);
    Transition {
        game: 0,
        step: 1,
        branch: 0,
        g_seen_prev: prior,
        action: "go west".into(),
        observation: "-= shed =- you are in a shed . you see a closed toolbox . you see a workbench . \
                      there is a wooden door leading east ."
            .into(),
        g_seen_next: next,
        ops,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shed_transition_is_self_consistent() {
        let t = shed_transition();
        assert_eq!(t.ops.len(), 7);
        assert_eq!(t.g_seen_prev.apply_update(&t.ops), t.g_seen_next);
        assert_eq!(t.g_seen_next.len(), 6);
        assert!(!t.g_seen_next.contains(&triple("player", "backyard", "at")));
    }
}
