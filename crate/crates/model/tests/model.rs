use std::collections::BTreeSet;

use kgdelta_core::corpus::{build_vocab, generate_splits, SplitCounts};
use kgdelta_core::dsl::{render_sequence, EOS_ID};
use kgdelta_core::examples::{default_registry, shed_ops, shed_transition};
use kgdelta_core::{BeliefGraph, Transition, UpdateOp, UpdateSequence, Vocabulary, WorldConfig};
use kgdelta_model::{train, EncoderVariant, LogEntry, Model, ModelConfig, ModelError, TrainConfig};

fn tiny(variant: EncoderVariant) -> ModelConfig {
    ModelConfig {
        hidden: 16,
        n_enc_layers: 1,
        n_dec_layers: 1,
        n_heads: 2,
        n_graph_layers: 1,
        ffn_hidden: 32,
        variant,
        max_decode_len: 64,
        seed: 3,
    }
}

fn shed_model(variant: EncoderVariant) -> Model {
    let t = shed_transition();
    let registry = default_registry();
    let vocab = build_vocab([&t], &registry);
    Model::new(tiny(variant), vocab, registry).unwrap()
}

fn op_set(ops: &UpdateSequence) -> BTreeSet<String> {
    ops.iter().map(kgdelta_core::render_op).collect()
}

fn fit(model: &mut Model, data: &[Transition], steps: usize, lr: f32) -> Vec<f32> {
    let cfg = TrainConfig {
        epochs: steps,
        batch_size: data.len(),
        lr,
        max_steps: Some(steps),
        log_every: 1,
        seed: 7,
        ..Default::default()
    };
    let mut losses = Vec::new();
    train(model, data, &[], &cfg, None, &mut |e: &LogEntry| losses.push(e.loss)).unwrap();
    losses
}

#[test]
fn encoder_output_shapes() {
    let t = shed_transition();
    let len = t.action.split_whitespace().count() + 1 + t.observation.split_whitespace().count();
    for v in EncoderVariant::ALL {
        let model = shed_model(v);
        let mut empty = t.clone();
        empty.g_seen_prev = BeliefGraph::new();
        let (text, graph) = model.encode_inputs(&empty).unwrap();
        assert_eq!(text.shape(), &[len, 16], "{v}");
        assert_eq!(graph.shape(), &[1, 16], "{v}");
        let (_, graph) = model.encode_inputs(&t).unwrap();
        let rows = if v.uses_graph() { t.g_seen_prev.vertices().len() } else { 1 };
        assert_eq!(graph.rows(), rows, "{v}");
    }
}

#[test]
fn text_side_is_the_same_for_every_variant() {
    let models: Vec<Model> = EncoderVariant::ALL.into_iter().map(shed_model).collect();
    let reference = &models[0];
    for m in &models[1..] {
        assert_eq!(m.text_encoder_params(), reference.text_encoder_params());
        for (_, name, value) in reference.params.iter() {
            if name == "embedding" || name.starts_with("encoder.") || name.starts_with("decoder.") {
                let other = m.params.id(name).unwrap();
                assert_eq!(m.params.get(other), value, "{name} differs for {}", m.variant());
            }
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let t = shed_transition();
    for v in EncoderVariant::ALL {
        let a = shed_model(v).forward_teacher_forced(&t, &t.ops).unwrap();
        let b = shed_model(v).forward_teacher_forced(&t, &t.ops).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a.is_finite() && a > 0.0);
    }
}

#[test]
fn long_targets_are_rejected() {
    let t = shed_transition();
    let registry = default_registry();
    let vocab = build_vocab([&t], &registry);
    let model = Model::new(ModelConfig { max_decode_len: 5, ..tiny(EncoderVariant::Rgcn) }, vocab, registry).unwrap();
    let len = render_sequence(&t.ops).len();
    match model.forward_teacher_forced(&t, &t.ops) {
        Err(ModelError::TargetTooLong { len: l, max: 5 }) => assert_eq!(l, len),
        other => panic!("expected TargetTooLong, got {other:?}"),
    }
}

#[test]
fn empty_gold_is_a_lone_eos() {
    let t = shed_transition();
    let model = shed_model(EncoderVariant::Rgcn);
    let empty = UpdateSequence::new();
    assert_eq!(model.targets(&model.source(&t), &empty).unwrap(), vec![EOS_ID]);
    let tape = kgdelta_autodiff::Tape::no_grad();
    let p = kgdelta_autodiff::Bound::new(&tape, &model.params);
    let (logp, _) = model.teacher_forced(&p, &t, &t.g_seen_prev, &empty).unwrap();
    let loss = model.forward_teacher_forced(&t, &empty).unwrap();
    assert_eq!(logp.rows(), 1);
    assert!((loss + logp.value().at(0, EOS_ID)).abs() < 1e-6);
}

#[test]
fn loss_depends_on_command_order() {
    let t = shed_transition();
    let model = shed_model(EncoderVariant::Rgcn);
    let mut reordered: Vec<UpdateOp> = t.ops.iter().cloned().collect();
    reordered.reverse();
    let a = model.forward_teacher_forced(&t, &t.ops).unwrap();
    let b = model.forward_teacher_forced(&t, &reordered.into()).unwrap();
    assert_ne!(a, b);
}

#[test]
fn checkpoints_reproduce_outputs() {
    let t = shed_transition();
    let mut model = shed_model(EncoderVariant::RgcnRelEmb);
    fit(&mut model, std::slice::from_ref(&t), 5, 1e-3);
    let path = std::env::temp_dir().join(format!("kgdelta-model-test-{}.ckpt", std::process::id()));
    let state = kgdelta_model::TrainingState { step: 5, adam: None };
    model.save(&path, &state).unwrap();
    let (loaded, state) = Model::load(&path).unwrap();
    std::fs::remove_file(&path).ok();
    assert_eq!(state.step, 5);
    assert_eq!(loaded.config, model.config);
    assert_eq!(
        loaded.forward_teacher_forced(&t, &t.ops).unwrap().to_bits(),
        model.forward_teacher_forced(&t, &t.ops).unwrap().to_bits()
    );
    assert_eq!(loaded.generate(&t), model.generate(&t));
}

fn ten_transitions() -> (Vec<Transition>, Vocabulary) {
    let cfg = WorldConfig::default();
    let splits = generate_splits(&cfg, SplitCounts { train: 2, valid: 0, test: 0 }, 5).unwrap();
    let data: Vec<Transition> = splits[0].1.iter().flat_map(|g| g.transitions.clone()).take(10).collect();
    let vocab = build_vocab(&data, &cfg.registry().unwrap());
    (data, vocab)
}

#[test]
fn same_seed_same_loss_curve() {
    let (data, vocab) = ten_transitions();
    let run = || {
        let mut m = Model::new(tiny(EncoderVariant::Gcn), vocab.clone(), default_registry()).unwrap();
        fit(&mut m, &data, 8, 1e-3)
    };
    let a = run();
    assert_eq!(a.len(), 8);
    assert_eq!(a, run());
}

#[test]
fn loss_halves_on_ten_samples() {
    let (data, vocab) = ten_transitions();
    let mut m = Model::new(tiny(EncoderVariant::Rgcn), vocab, default_registry()).unwrap();
    let losses = fit(&mut m, &data, 200, 3e-3);
    let (first, last) = (losses[0], *losses.last().unwrap());
    assert!(last <= 0.5 * first, "loss {first} -> {last}");
}

#[test]
fn overfits_the_shed_transition() {
    let t = shed_transition();
    let mut model = shed_model(EncoderVariant::Rgcn);
    fit(&mut model, std::slice::from_ref(&t), 300, 3e-3);
    let expected: UpdateSequence = shed_ops().into();
    assert_eq!(op_set(&model.generate(&t)), op_set(&expected));
}

#[test]
fn copies_words_outside_the_vocabulary() {
    let t = shed_transition();
    let registry = default_registry();
    let full = build_vocab([&t], &registry);
    let vocab = Vocabulary::from_tokens(full.tokens().iter().filter(|w| *w != "workbench").cloned());
    assert!(!vocab.contains("workbench"));
    let mut model = Model::new(tiny(EncoderVariant::NoGraph), vocab, registry).unwrap();
    fit(&mut model, std::slice::from_ref(&t), 300, 3e-3);
    let out = op_set(&model.generate(&t));
    assert!(out.contains("add ( workbench , shed , in )"), "{out:?}");
    assert_eq!(out, op_set(&t.ops));
}

#[test]
fn one_token_budget_yields_no_commands() {
    let t = shed_transition();
    let registry = default_registry();
    let vocab = build_vocab([&t], &registry);
    let model = Model::new(ModelConfig { max_decode_len: 1, ..tiny(EncoderVariant::Rgcn) }, vocab, registry).unwrap();
    assert!(model.generate_tokens(&t, &t.g_seen_prev).unwrap().len() <= 1);
    assert!(model.generate(&t).is_empty());
}
