use std::collections::BTreeSet;

use kgdelta_core::dsl::{parse_op, parse_sequence, render_op, render_sequence, tokenize};
use kgdelta_core::eval::{set_f1, tf_f1, Averaging, OracleGenerator};
use kgdelta_core::examples::{default_registry, shed_ops, shed_prior, shed_transition};
use kgdelta_core::{BeliefGraph, Triple, UpdateOp, UpdateSequence, Verb};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const NAMES: [&str; 8] = ["player", "shed", "backyard", "red apple", "toolbox", "wooden door", "closed", "kitchen"];

fn triple() -> impl Strategy<Value = Triple> {
    let relations = kgdelta_core::graph::DEFAULT_RELATIONS;
    (0..NAMES.len(), 0..NAMES.len(), 0..relations.len())
        .prop_map(move |(h, t, r)| Triple::parse(NAMES[h], NAMES[t], relations[r], &default_registry()).unwrap())
}

fn graph() -> impl Strategy<Value = BeliefGraph> {
    prop::collection::vec(triple(), 0..12).prop_map(|ts| ts.into_iter().collect())
}

fn op() -> impl Strategy<Value = UpdateOp> {
    (any::<bool>(), triple()).prop_map(|(add, t)| if add { UpdateOp::add(t) } else { UpdateOp::delete(t) })
}

fn ops() -> impl Strategy<Value = UpdateSequence> {
    prop::collection::vec(op(), 0..10).prop_map(UpdateSequence::from)
}

fn vertex_labels(g: &BeliefGraph) -> BTreeSet<String> {
    g.vertices().into_iter().map(|v| v.label().to_string()).collect()
}

fn edge_labels(g: &BeliefGraph) -> BTreeSet<String> {
    g.iter()
        .flat_map(|t| [t.head.label().to_string(), t.tail.label().to_string()])
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn diff_then_apply_round_trips(g in graph(), h in graph()) {
        prop_assert_eq!(g.apply_update(&g.diff(&h)), h);
    }

    #[test]
    fn diff_order_does_not_matter(g in graph(), h in graph(), seed in any::<u64>()) {
        let mut shuffled = g.diff(&h).into_vec();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(g.apply_update(&shuffled.into()), h);
    }

    #[test]
    fn deleting_an_absent_edge_is_a_no_op(g in graph(), t in triple()) {
        prop_assume!(!g.contains(&t));
        prop_assert_eq!(g.apply_op(&UpdateOp::delete(t)), g);
    }

    #[test]
    fn vertices_always_have_edges(g in graph(), s in ops()) {
        let out = g.apply_update(&s);
        prop_assert_eq!(vertex_labels(&out), edge_labels(&out));
    }

    #[test]
    fn canonical_order_is_idempotent_and_sorted(s in ops()) {
        let once = s.canonical_order();
        prop_assert_eq!(once.canonical_order(), once.clone());
        let verbs: Vec<Verb> = once.iter().map(|o| o.verb).collect();
        prop_assert!(verbs.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(once.iter().filter(|o| o.verb == Verb::Add).count(),
                        s.iter().filter(|o| o.verb == Verb::Add).count());
    }

    #[test]
    fn canonical_order_ignores_input_order(s in ops()) {
        let mut reversed = s.clone().into_vec();
        reversed.reverse();
        prop_assert_eq!(UpdateSequence::from(reversed).canonical_order(), s.canonical_order());
    }

    #[test]
    fn dsl_round_trip(s in ops()) {
        let s = s.canonical_order();
        let tokens = render_sequence(&s);
        prop_assert_eq!(parse_sequence(&tokens, &default_registry()), (s, 0));
    }

    #[test]
    fn tokenize_is_idempotent_on_rendered_text(s in ops()) {
        let tokens: Vec<String> = render_sequence(&s).into_iter().map(|t| t.text).collect();
        let again: Vec<String> = tokenize(&tokens.join(" ")).into_iter().map(|t| t.text).collect();
        prop_assert_eq!(again, tokens);
    }

    #[test]
    fn parsed_commands_render_to_their_input(words in prop::collection::vec(
        prop::sample::select(vec!["add", "delete", "(", ")", ",", "player", "shed", "red", "apple", "at", "in", "east_of", "<sep>"]),
        0..12,
    )) {
        if let Ok(op) = parse_op(&words, &default_registry()) {
            prop_assert_eq!(render_op(&op), words.join(" "));
        }
    }

    #[test]
    fn set_f1_is_symmetric_and_bounded(a in prop::collection::btree_set(0u8..12, 0..8), b in prop::collection::btree_set(0u8..12, 0..8)) {
        let f = set_f1(&a, &b);
        prop_assert_eq!(f, set_f1(&b, &a));
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert_eq!(f == 1.0, a == b);
    }
}

#[test]
fn shed_ops_build_the_shed_graph() {
    let from_empty = BeliefGraph::new().apply_update(&shed_ops().into());
    assert_eq!(from_empty.len(), 6);
    let t = shed_transition();
    assert_eq!(shed_prior().apply_update(&t.ops), t.g_seen_next);
    let rendered: Vec<String> = t.ops.iter().map(render_op).collect();
    assert_eq!(rendered.first().map(String::as_str), Some("add ( player , shed , at )"));
    assert_eq!(rendered.last().map(String::as_str), Some("delete ( player , backyard , at )"));
}

#[test]
fn shed_transition_scores_one_against_itself() {
    let t = shed_transition();
    let tf = tf_f1(&OracleGenerator, std::slice::from_ref(&t), Averaging::PerTransition, 1);
    assert_eq!(tf.score, 1.0);
}
