//! Finite-difference checks of every differentiable block on small random
//! instances, shared by the test suite and the `gradcheck` command.

use std::fmt::Write as _;
use std::ops::Range;

use kgdelta_autodiff::{
    grad_check_vjp, AutodiffError, Bound, GradCheckOptions, GradCheckReport, ParamStore, Tape, Tensor, Var,
};
use kgdelta_core::{BeliefGraph, RelationRegistry, Transition, UpdateOp, UpdateSequence, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::layers::{
    mean_embeddings, Aggregator, DecoderBlock, EncoderBlock, EncoderVariant, GraphBatch, GraphEncoder,
    MultiHeadAttention, PointerHead,
};
use crate::model::{Model, ModelConfig};
use crate::ModelError;

const H: usize = 8;
const HEADS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Block {
    Embedding,
    Attention,
    EncoderBlock,
    DecoderBlock,
    Gcn,
    Rgcn,
    RgcnRelEmb,
    Aggregator,
    PointerSoftmax,
    FullModel,
}

impl Block {
    pub const ALL: [Block; 10] = [
        Block::Embedding,
        Block::Attention,
        Block::EncoderBlock,
        Block::DecoderBlock,
        Block::Gcn,
        Block::Rgcn,
        Block::RgcnRelEmb,
        Block::Aggregator,
        Block::PointerSoftmax,
        Block::FullModel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::Embedding => "embedding",
            Block::Attention => "multi_head_attention",
            Block::EncoderBlock => "encoder_block",
            Block::DecoderBlock => "decoder_block",
            Block::Gcn => "gcn",
            Block::Rgcn => "rgcn",
            Block::RgcnRelEmb => "rgcn_rel_emb",
            Block::Aggregator => "aggregator",
            Block::PointerSoftmax => "pointer_softmax",
            Block::FullModel => "full_model",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockResult {
    pub block: Block,
    pub seeds: usize,
    pub max_rel_error: f32,
    pub worst_seed: u64,
    pub checked: usize,
    pub skipped: usize,
}

impl BlockResult {
    pub fn passed(&self, tol: f32) -> bool {
        self.max_rel_error < tol
    }
}

fn rand_t(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::uniform(&[r, c], 1.0, rng)
}

/// Checks `f` with respect to every parameter of `store` and every tensor in
/// `data`.
fn check_with_params<F>(store: &ParamStore, eps: f32, data: Vec<Tensor>, seed: u64, max_coords: usize, f: F) -> Result<GradCheckReport, AutodiffError>
where
    F: for<'t> Fn(&Bound<'t, '_>, &[Var<'t>]) -> Result<Var<'t>, AutodiffError>,
{
    let n = store.len();
    let mut inputs: Vec<Tensor> = store.iter().map(|(_, _, t)| t.clone()).collect();
    inputs.extend(data);
    let opts = GradCheckOptions {
        eps,
        max_coords: Some(max_coords),
        seed,
        ..GradCheckOptions::default()
    };
    grad_check_vjp(
        |tape: &Tape, vars: &[Var<'_>]| {
            let p = Bound::from_vars(tape, store, &vars[..n])?;
            f(&p, &vars[n..])
        },
        &inputs,
        &opts,
    )
}

fn three_node_graph(relations: usize, rng: &mut ChaCha8Rng) -> GraphBatch {
    let mut edges = Vec::new();
    for &(a, b) in &[(0usize, 1usize), (1, 2), (0, 2)] {
        if rng.gen_bool(0.8) {
            let r = rng.gen_range(0..relations);
            edges.push((a, b, r));
            edges.push((b, a, r + relations));
        }
    }
    GraphBatch {
        node_names: vec!["a".into(), "b".into(), "c".into()],
        node_labels: vec![vec![5], vec![6, 7], vec![8]],
        edges,
        n_base_relations: relations,
    }
}

fn fixture_transition() -> (Transition, Vocabulary, RelationRegistry) {
    let registry = RelationRegistry::new(kgdelta_core::graph::DEFAULT_RELATIONS.iter().map(|s| s.to_string()))
        .expect("default relations");
    let t = |h: &str, tl: &str, r: &str| {
        kgdelta_core::Triple::parse(h, tl, r, &registry).expect("fixture triple")
    };
    let prev: BeliefGraph = [t("player", "kitchen", "at"), t("knife", "counter", "on"), t("counter", "kitchen", "at")]
        .into_iter()
        .collect();
    let ops: UpdateSequence = vec![
        UpdateOp::add(t("player", "shed", "at")),
        UpdateOp::delete(t("player", "kitchen", "at")),
    ]
    .into();
    let next = prev.apply_update(&ops);
    let transition = Transition {
        game: 0,
        step: 1,
        branch: 0,
        g_seen_prev: prev,
        action: "go east".into(),
        observation: "you are in the shed .".into(),
        g_seen_next: next,
        ops,
    };
    // "shed" stays out of the vocabulary so the copy path is exercised.
    let words = [
        "add", "delete", "(", ")", ",", "player", "kitchen", "knife", "counter", "at", "on", "go", "east", "you",
        "are", "in", "the", ".", "of", "north", "south", "west", "is", "part", "needs",
    ];
    let vocab = Vocabulary::from_tokens(words.iter().map(|s| s.to_string()));
    (transition, vocab, registry)
}

/// One randomized check of `block`.
pub fn check_block(block: Block, seed: u64) -> Result<GradCheckReport, ModelError> {
    check_block_with_step(block, seed, 1e-3)
}

/// As [`check_block`] with finite-difference step `eps`.
pub fn check_block_with_step(block: Block, seed: u64, eps: f32) -> Result<GradCheckReport, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_f491).wrapping_add(block as u64));
    let mut store = ParamStore::new();
    let report = match block {
        Block::Embedding => {
            let table = store.add("embedding", rand_t(&mut rng, 6, H));
            let ids: Vec<usize> = (0..4).map(|_| rng.gen_range(0..6)).collect();
            check_with_params(&store, eps, vec![], seed, 64, move |p, _| {
                let means = mean_embeddings(p.tape(), p.var(table), &[vec![0, 2], vec![1], vec![3, 4, 5]])?;
                let rows = p.tape().embedding(p.var(table), &ids)?;
                p.tape().concat_rows(&[means, rows])
            })?
        }
        Block::Attention => {
            let mha = MultiHeadAttention::new(&mut store, "attn", H, HEADS, &mut rng);
            let (q, m) = (rand_t(&mut rng, 2, H), rand_t(&mut rng, 3, H));
            let mut mask = Tensor::zeros(&[2, 3]);
            mask.data_mut()[2] = f32::NEG_INFINITY;
            check_with_params(&store, eps, vec![q, m], seed, 16, move |p, d| mha.forward(p, d[0], d[1], Some(&mask)))?
        }
        Block::EncoderBlock => {
            let b = EncoderBlock::new(&mut store, "enc", H, HEADS, 2 * H, &mut rng);
            check_with_params(&store, eps, vec![rand_t(&mut rng, 3, H)], seed, 16, move |p, d| b.forward(p, d[0], None))?
        }
        Block::DecoderBlock => {
            let b = DecoderBlock::new(&mut store, "dec", H, HEADS, 2 * H, &mut rng);
            let (x, m) = (rand_t(&mut rng, 3, H), rand_t(&mut rng, 4, H));
            check_with_params(&store, eps, vec![x, m], seed, 16, move |p, d| b.forward(p, d[0], d[1]))?
        }
        Block::Gcn | Block::Rgcn | Block::RgcnRelEmb => {
            let variant = match block {
                Block::Gcn => EncoderVariant::Gcn,
                Block::Rgcn => EncoderVariant::Rgcn,
                _ => EncoderVariant::RgcnRelEmb,
            };
            let n_rel = if block == Block::Gcn { 1 } else { 2 };
            let emb = store.add("embedding", rand_t(&mut rng, 10, H));
            let enc = GraphEncoder::new(&mut store, variant, H, 1, n_rel, &mut rng).expect("graph variant");
            let graph = three_node_graph(n_rel, &mut rng);
            let rel_labels = vec![vec![1, 3], vec![2, 3]];
            check_with_params(&store, eps, vec![rand_t(&mut rng, 3, H)], seed, 16, move |p, d| {
                enc.forward(p, &graph, d[0], p.var(emb), &rel_labels[..n_rel])
            })?
        }
        Block::Aggregator => {
            let agg = Aggregator::new(&mut store, H, &mut rng);
            let (t, g) = (rand_t(&mut rng, 4, H), rand_t(&mut rng, 3, H));
            check_with_params(&store, eps, vec![t, g], seed, 16, move |p, d| {
                let (a, b) = agg.forward(p, d[0], Some(d[1]))?;
                p.tape().concat_rows(&[a, b])
            })?
        }
        Block::PointerSoftmax => {
            let head = PointerHead::new(&mut store, H, &mut rng);
            let dec = rand_t(&mut rng, 3, H);
            let src = rand_t(&mut rng, 4, H);
            let logits = rand_t(&mut rng, 3, 6);
            check_with_params(&store, eps, vec![dec, src, logits], seed, 16, move |p, d| {
                head.forward(p, d[0], d[1], d[2], &[1, 6, 3, 6], 7)
            })?
        }
        Block::FullModel => {
            let (transition, vocab, registry) = fixture_transition();
            let variant = EncoderVariant::ALL[(seed % 4) as usize];
            let config = ModelConfig {
                hidden: H,
                n_enc_layers: 1,
                n_dec_layers: 1,
                n_heads: HEADS,
                n_graph_layers: 1,
                ffn_hidden: 2 * H,
                variant,
                max_decode_len: 64,
                seed,
            };
            let model = Model::new(config, vocab, registry)?;
            let store = model.params.clone();
            // Target probabilities rather than the mean log-likelihood: the
            // mean and the logs are rounded at a magnitude well above their
            // changes, which buries the finite differences in f32 noise. The
            // log itself is covered by the pointer-softmax block.
            check_with_params(&store, eps, vec![], seed, 4, move |p, _| {
                let (probs, targets) = model
                    .teacher_forced_probs(p, &transition, &transition.g_seen_prev, &transition.ops)
                    .map_err(|e| match e {
                        ModelError::Autodiff(a) => a,
                        other => panic!("fixture transition is valid by construction: {other}"),
                    })?;
                let mut pick = Tensor::zeros(&probs.shape());
                for (row, &t) in targets.iter().enumerate() {
                    pick.data_mut()[row * probs.cols() + t] = 1.0;
                }
                probs.mul(p.tape().constant(pick))
            })?
        }
    };
    Ok(report)
}

/// Runs each block once per seed and keeps the worst error.
pub fn run_suite(blocks: &[Block], seeds: Range<u64>) -> Result<Vec<BlockResult>, ModelError> {
    let mut out = Vec::with_capacity(blocks.len());
    for &block in blocks {
        let mut res = BlockResult {
            block,
            seeds: 0,
            max_rel_error: 0.0,
            worst_seed: seeds.start,
            checked: 0,
            skipped: 0,
        };
        for seed in seeds.clone() {
            let r = check_block(block, seed)?;
            res.seeds += 1;
            res.checked += r.checked;
            res.skipped += r.skipped;
            if r.max_rel_error > res.max_rel_error || r.max_rel_error.is_nan() {
                res.max_rel_error = r.max_rel_error;
                res.worst_seed = seed;
            }
        }
        out.push(res);
    }
    Ok(out)
}

/// Aligned pass/fail table.
pub fn suite_table(results: &[BlockResult], tol: f32) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<22} {:>6} {:>12} {:>9} {:>8}  result", "block", "seeds", "max_rel_err", "checked", "skipped");
    for r in results {
        let _ = writeln!(
            s,
            "{:<22} {:>6} {:>12.3e} {:>9} {:>8}  {}",
            r.block.name(),
            r.seeds,
            r.max_rel_error,
            r.checked,
            r.skipped,
            if r.passed(tol) { "pass" } else { "FAIL" }
        );
    }
    s
}
