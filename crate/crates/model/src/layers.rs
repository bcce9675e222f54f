//! Transformer blocks, graph encoders, the text/graph aggregator and the
//! pointer-softmax head.

use std::collections::BTreeMap;
use std::sync::Arc;

use kgdelta_autodiff::{AutodiffError, Bound, ParamId, ParamStore, Sparse, Tape, Tensor, Var};
use kgdelta_core::{BeliefGraph, RelationRegistry, Vocabulary};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ModelError;

type Res<'t> = Result<Var<'t>, AutodiffError>;

/// Which graph encoder feeds the aggregator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EncoderVariant {
    #[serde(rename = "none")]
    NoGraph,
    #[serde(rename = "gcn")]
    Gcn,
    #[serde(rename = "rgcn")]
    Rgcn,
    #[serde(rename = "rgcn-rel")]
    RgcnRelEmb,
}

impl EncoderVariant {
    pub const ALL: [EncoderVariant; 4] = [
        EncoderVariant::NoGraph,
        EncoderVariant::Gcn,
        EncoderVariant::Rgcn,
        EncoderVariant::RgcnRelEmb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EncoderVariant::NoGraph => "none",
            EncoderVariant::Gcn => "gcn",
            EncoderVariant::Rgcn => "rgcn",
            EncoderVariant::RgcnRelEmb => "rgcn-rel",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    pub fn uses_graph(self) -> bool {
        self != EncoderVariant::NoGraph
    }

    /// Whether the encoder distinguishes relation labels.
    pub fn relational(self) -> bool {
        matches!(self, EncoderVariant::Rgcn | EncoderVariant::RgcnRelEmb)
    }
}

impl std::fmt::Display for EncoderVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

pub fn glorot<R: Rng>(store: &mut ParamStore, name: &str, rows: usize, cols: usize, rng: &mut R) -> ParamId {
    store.add(name, Tensor::glorot(rows, cols, rng))
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, din: usize, dout: usize, bias: bool, rng: &mut R) -> Self {
        let w = glorot(store, &format!("{name}.w"), din, dout, rng);
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[dout])));
        Self { w, b }
    }

    pub fn forward<'t>(&self, p: &Bound<'t, '_>, x: Var<'t>) -> Res<'t> {
        let y = x.matmul(p.var(self.w))?;
        match self.b {
            Some(b) => y.add_row(p.var(b)),
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[dim], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t, '_>, x: Var<'t>) -> Res<'t> {
        x.layer_norm(p.var(self.gamma), p.var(self.beta))
    }
}

/// `-inf` above the diagonal.
pub fn causal_mask(len: usize) -> Tensor {
    let mut m = Tensor::zeros(&[len, len]);
    for i in 0..len {
        for j in i + 1..len {
            m.data_mut()[i * len + j] = f32::NEG_INFINITY;
        }
    }
    m
}

/// Sinusoidal position encodings for positions `start..start + len`.
pub fn positions(start: usize, len: usize, dim: usize) -> Tensor {
    let mut t = Tensor::zeros(&[len, dim]);
    for p in 0..len {
        let pos = (start + p) as f32;
        for i in 0..dim {
            let rate = 1.0 / 10000f32.powf((2 * (i / 2)) as f32 / dim as f32);
            let angle = pos * rate;
            t.data_mut()[p * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    t
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut R) -> Self {
        assert!(heads > 0 && dim % heads == 0, "hidden size {dim} not divisible by {heads} heads");
        Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, true, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, true, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, true, rng),
            o: Linear::new(store, &format!("{name}.o"), dim, dim, true, rng),
            heads,
            dim,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t, '_>, query: Var<'t>, memory: Var<'t>, mask: Option<&Tensor>) -> Res<'t> {
        let k = self.k.forward(p, memory)?;
        let v = self.v.forward(p, memory)?;
        self.attend(p, query, k, v, mask)
    }

    /// Attention of `query` rows over already projected keys and values.
    pub fn attend<'t>(&self, p: &Bound<'t, '_>, query: Var<'t>, k: Var<'t>, v: Var<'t>, mask: Option<&Tensor>) -> Res<'t> {
        if query.cols() != self.dim {
            return Err(AutodiffError::ShapeMismatch {
                op: "attention",
                left: query.shape(),
                right: vec![self.dim],
            });
        }
        let q = self.q.forward(p, query)?;
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (q.slice_cols(h * dh, dh)?, k.slice_cols(h * dh, dh)?, v.slice_cols(h * dh, dh)?)
            };
            let scores = qh.matmul_t(kh)?.scale(scale);
            let weights = match mask {
                Some(m) => scores.softmax_masked(m)?,
                None => scores.softmax(),
            };
            outs.push(weights.matmul(vh)?);
        }
        let joined = if outs.len() == 1 { outs[0] } else { p.tape().concat_cols(&outs)? };
        self.o.forward(p, joined)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, true, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, true, rng),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t, '_>, x: Var<'t>) -> Res<'t> {
        let h = self.up.forward(p, x)?.relu();
        self.down.forward(p, h)
    }
}

/// Pre-norm encoder block: self-attention then feed-forward, both residual.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub norm1: Norm,
    pub attn: MultiHeadAttention,
    pub norm2: Norm,
    pub ff: FeedForward,
}

impl EncoderBlock {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, heads: usize, ffn: usize, rng: &mut R) -> Self {
        Self {
            norm1: Norm::new(store, &format!("{name}.norm1"), dim),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, rng),
            norm2: Norm::new(store, &format!("{name}.norm2"), dim),
            ff: FeedForward::new(store, &format!("{name}.ff"), dim, ffn, rng),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t, '_>, x: Var<'t>, mask: Option<&Tensor>) -> Res<'t> {
        let n = self.norm1.forward(p, x)?;
        let x = x.add(self.attn.forward(p, n, n, mask)?)?;
        let n = self.norm2.forward(p, x)?;
        x.add(self.ff.forward(p, n)?)
    }
}

/// Keys and values of earlier positions, for incremental decoding.
#[derive(Clone, Debug, Default)]
pub struct KvCache {
    k: Vec<f32>,
    v: Vec<f32>,
    len: usize,
}

impl KvCache {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Pre-norm decoder block: causal self-attention, cross-attention over the
/// encoder memory, feed-forward; residual around each.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub norm1: Norm,
    pub self_attn: MultiHeadAttention,
    pub norm2: Norm,
    pub cross_attn: MultiHeadAttention,
    pub norm3: Norm,
    pub ff: FeedForward,
}

impl DecoderBlock {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, heads: usize, ffn: usize, rng: &mut R) -> Self {
        Self {
            norm1: Norm::new(store, &format!("{name}.norm1"), dim),
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), dim, heads, rng),
            norm2: Norm::new(store, &format!("{name}.norm2"), dim),
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross_attn"), dim, heads, rng),
            norm3: Norm::new(store, &format!("{name}.norm3"), dim),
            ff: FeedForward::new(store, &format!("{name}.ff"), dim, ffn, rng),
        }
    }

    /// Whole-sequence pass with a causal mask.
    pub fn forward<'t>(&self, p: &Bound<'t, '_>, x: Var<'t>, memory: Var<'t>) -> Res<'t> {
        let mask = causal_mask(x.rows());
        let n = self.norm1.forward(p, x)?;
        let x = x.add(self.self_attn.forward(p, n, n, Some(&mask))?)?;
        let n = self.norm2.forward(p, x)?;
        let x = x.add(self.cross_attn.forward(p, n, memory, None)?)?;
        let n = self.norm3.forward(p, x)?;
        x.add(self.ff.forward(p, n)?)
    }

    /// Projected memory keys and values, computed once per decode.
    pub fn memory_kv<'t>(&self, p: &Bound<'t, '_>, memory: Var<'t>) -> Result<(Var<'t>, Var<'t>), AutodiffError> {
        Ok((self.cross_attn.k.forward(p, memory)?, self.cross_attn.v.forward(p, memory)?))
    }

    /// One new position given the cache of earlier ones.
    pub fn step<'t>(
        &self,
        p: &Bound<'t, '_>,
        x: Var<'t>,
        cache: &mut KvCache,
        memory_kv: (Var<'t>, Var<'t>),
    ) -> Res<'t> {
        let tape = p.tape();
        let n = self.norm1.forward(p, x)?;
        let k_new = self.self_attn.k.forward(p, n)?;
        let v_new = self.self_attn.v.forward(p, n)?;
        cache.k.extend_from_slice(k_new.value().data());
        cache.v.extend_from_slice(v_new.value().data());
        cache.len += 1;
        let dim = self.self_attn.dim;
        let k = tape.constant(Tensor::matrix(cache.len, dim, cache.k.clone()));
        let v = tape.constant(Tensor::matrix(cache.len, dim, cache.v.clone()));
        let x = x.add(self.self_attn.attend(p, n, k, v, None)?)?;
        let n = self.norm2.forward(p, x)?;
        let x = x.add(self.cross_attn.attend(p, n, memory_kv.0, memory_kv.1, None)?)?;
        let n = self.norm3.forward(p, x)?;
        x.add(self.ff.forward(p, n)?)
    }
}

/// A belief graph prepared for the graph encoders.
///
/// Each triple `(h, t, r)` contributes an edge `t -> h` under relation `r`
/// and `h -> t` under the inverse relation `r + R`, where `R` is the number
/// of base relations; a collapsed graph has `R = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphBatch {
    pub node_names: Vec<String>,
    /// Vocabulary ids of each node label's words.
    pub node_labels: Vec<Vec<usize>>,
    /// `(target, source, relation)`: `source` is in `N_relation(target)`.
    pub edges: Vec<(usize, usize, usize)>,
    pub n_base_relations: usize,
}

impl GraphBatch {
    pub fn from_graph(
        graph: &BeliefGraph,
        vocab: &Vocabulary,
        registry: &RelationRegistry,
        collapsed: bool,
    ) -> Result<Self, ModelError> {
        let mut index: BTreeMap<&str, usize> = BTreeMap::new();
        for v in graph.vertices() {
            let next = index.len();
            index.insert(v.label(), next);
        }
        let mut node_names = vec![String::new(); index.len()];
        for (name, &i) in &index {
            node_names[i] = (*name).to_string();
        }
        let node_labels = node_names
            .iter()
            .map(|n| n.split(' ').map(|w| vocab.id(w)).collect())
            .collect();
        let n_base = if collapsed { 1 } else { registry.len() };
        let mut edges = Vec::with_capacity(2 * graph.len());
        for t in graph.iter() {
            let r = if collapsed {
                0
            } else {
                registry
                    .index_of(t.relation.label())
                    .ok_or_else(|| ModelError::UnknownRelation(t.relation.label().to_string()))?
            };
            let h = index[t.head.label()];
            let tl = index[t.tail.label()];
            edges.push((h, tl, r));
            edges.push((tl, h, r + n_base));
        }
        Ok(Self {
            node_names,
            node_labels,
            edges,
            n_base_relations: n_base,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.node_labels.len()
    }

    pub fn n_relations(&self) -> usize {
        2 * self.n_base_relations
    }

    /// Symmetric-normalised `A + I` over the undirected single-relation view.
    pub fn gcn_adjacency(&self) -> Sparse {
        let n = self.n_nodes();
        let mut adj = vec![std::collections::BTreeSet::new(); n];
        for i in 0..n {
            adj[i].insert(i);
        }
        for &(i, j, _) in &self.edges {
            adj[i].insert(j);
            adj[j].insert(i);
        }
        let deg: Vec<f32> = adj.iter().map(|s| s.len() as f32).collect();
        let mut m = Sparse::new(n, n);
        for (i, row) in adj.iter().enumerate() {
            for &j in row {
                m.push(i, j, 1.0 / (deg[i] * deg[j]).sqrt());
            }
        }
        m
    }

    /// Per relation: the mean-over-neighbours matrix (weights `1/|N_r(i)|`)
    /// and the rows that have at least one `r`-neighbour.
    pub fn relation_adjacency(&self) -> Vec<Option<(Sparse, Vec<usize>)>> {
        let n = self.n_nodes();
        let mut neigh: Vec<BTreeMap<usize, Vec<usize>>> = vec![BTreeMap::new(); self.n_relations()];
        for &(i, j, r) in &self.edges {
            neigh[r].entry(i).or_default().push(j);
        }
        neigh
            .into_iter()
            .map(|rows| {
                if rows.is_empty() {
                    return None;
                }
                let mut m = Sparse::new(n, n);
                let mut targets = Vec::with_capacity(rows.len());
                for (i, js) in rows {
                    let c = js.len() as f32;
                    for j in js {
                        m.push(i, j, 1.0 / c);
                    }
                    targets.push(i);
                }
                Some((m, targets))
            })
            .collect()
    }
}

/// Row `i` is the mean of `embedding` rows `groups[i]`.
pub fn mean_embeddings<'t>(tape: &'t Tape, embedding: Var<'t>, groups: &[Vec<usize>]) -> Res<'t> {
    let flat: Vec<usize> = groups.iter().flatten().copied().collect();
    let rows = tape.embedding(embedding, &flat)?;
    let mut avg = Sparse::new(groups.len(), flat.len());
    let mut col = 0;
    for (i, g) in groups.iter().enumerate() {
        for _ in g {
            avg.push(i, col, 1.0 / g.len() as f32);
            col += 1;
        }
    }
    tape.spmm(Arc::new(avg), rows)
}

/// `sigma(D^-1/2 (A + I) D^-1/2 h W)` with `sigma = ReLU` when `activate`.
pub fn gcn_layer<'t>(p: &Bound<'t, '_>, graph: &GraphBatch, h: Var<'t>, w: ParamId, activate: bool) -> Res<'t> {
    if h.rows() != graph.n_nodes() {
        return Err(AutodiffError::ShapeMismatch {
            op: "gcn_layer",
            left: h.shape(),
            right: vec![graph.n_nodes()],
        });
    }
    let prop = p.tape().spmm(Arc::new(graph.gcn_adjacency()), h)?;
    let out = prop.matmul(p.var(w))?;
    Ok(if activate { out.relu() } else { out })
}

/// Relational graph convolution. `rel_emb`, when given, holds one row per
/// relation id that is appended to every message sent under that relation,
/// in which case each `W_r` maps `2H -> H`.
pub fn rgcn_layer<'t>(
    p: &Bound<'t, '_>,
    graph: &GraphBatch,
    h: Var<'t>,
    w0: ParamId,
    w_rel: &[ParamId],
    rel_emb: Option<Var<'t>>,
    activate: bool,
) -> Res<'t> {
    let tape = p.tape();
    let n = graph.n_nodes();
    if h.rows() != n {
        return Err(AutodiffError::ShapeMismatch {
            op: "rgcn_layer",
            left: h.shape(),
            right: vec![n],
        });
    }
    if w_rel.len() != graph.n_relations() {
        return Err(AutodiffError::ShapeMismatch {
            op: "rgcn_layer relations",
            left: vec![w_rel.len()],
            right: vec![graph.n_relations()],
        });
    }
    let mut out = h.matmul(p.var(w0))?;
    for (r, adj) in graph.relation_adjacency().into_iter().enumerate() {
        let Some((m, targets)) = adj else { continue };
        let agg = tape.spmm(Arc::new(m), h)?;
        let msg = match rel_emb {
            None => agg,
            Some(e) => {
                // Each target with r-neighbours receives e_r once: the mean of
                // concat(h_j, e_r) over neighbours is concat(mean h_j, e_r).
                let mut pick = Sparse::new(n, e.rows());
                for i in targets {
                    pick.push(i, r, 1.0);
                }
                let er = tape.spmm(Arc::new(pick), e)?;
                tape.concat_cols(&[agg, er])?
            }
        };
        out = out.add(msg.matmul(p.var(w_rel[r]))?)?;
    }
    Ok(if activate { out.relu() } else { out })
}

/// Stacked graph layers with a residual connection around each.
#[derive(Clone, Debug)]
pub struct GraphEncoder {
    pub variant: EncoderVariant,
    pub layers: Vec<GraphLayerParams>,
    /// Projection of relation label embeddings (relation-embedding variant).
    pub rel_proj: Option<ParamId>,
}

#[derive(Clone, Debug)]
pub enum GraphLayerParams {
    Gcn { w: ParamId },
    Rgcn { w0: ParamId, w_rel: Vec<ParamId> },
}

impl GraphEncoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        variant: EncoderVariant,
        dim: usize,
        n_layers: usize,
        n_relations: usize,
        rng: &mut R,
    ) -> Option<Self> {
        if !variant.uses_graph() {
            return None;
        }
        let rel_proj = (variant == EncoderVariant::RgcnRelEmb)
            .then(|| glorot(store, "graph_encoder.rel_emb.proj", dim, dim, rng));
        let msg_in = if variant == EncoderVariant::RgcnRelEmb { 2 * dim } else { dim };
        let layers = (0..n_layers)
            .map(|l| {
                let name = format!("graph_encoder.{l}");
                match variant {
                    EncoderVariant::Gcn => GraphLayerParams::Gcn {
                        w: glorot(store, &format!("{name}.w"), dim, dim, rng),
                    },
                    _ => GraphLayerParams::Rgcn {
                        w0: glorot(store, &format!("{name}.w0"), dim, dim, rng),
                        w_rel: (0..2 * n_relations)
                            .map(|r| glorot(store, &format!("{name}.rel{r}.w"), msg_in, dim, rng))
                            .collect(),
                    },
                }
            })
            .collect();
        Some(Self {
            variant,
            layers,
            rel_proj,
        })
    }

    /// `rel_labels[r]` are the word ids of base relation `r`'s label.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t, '_>,
        graph: &GraphBatch,
        h0: Var<'t>,
        embedding: Var<'t>,
        rel_labels: &[Vec<usize>],
    ) -> Res<'t> {
        let rel_emb = match self.rel_proj {
            Some(proj) => {
                let both: Vec<Vec<usize>> = rel_labels.iter().chain(rel_labels.iter()).cloned().collect();
                let mean = mean_embeddings(p.tape(), embedding, &both)?;
                Some(mean.matmul(p.var(proj))?)
            }
            None => None,
        };
        let mut h = h0;
        for layer in &self.layers {
            let update = match layer {
                GraphLayerParams::Gcn { w } => gcn_layer(p, graph, h, *w, true)?,
                GraphLayerParams::Rgcn { w0, w_rel } => rgcn_layer(p, graph, h, *w0, w_rel, rel_emb, true)?,
            };
            h = h.add(update)?;
        }
        Ok(h)
    }
}

/// Attention in both directions between text and graph rows.
#[derive(Clone, Debug)]
pub struct Aggregator {
    /// Graph row used when there is no graph to encode.
    pub null: ParamId,
    pub text_proj: Linear,
    pub graph_proj: Linear,
}

impl Aggregator {
    pub fn new<R: Rng>(store: &mut ParamStore, dim: usize, rng: &mut R) -> Self {
        let bound = (3.0 / dim as f32).sqrt();
        Self {
            null: store.add("aggregator.null", Tensor::uniform(&[1, dim], bound, rng)),
            text_proj: Linear::new(store, "aggregator.text_proj", 2 * dim, dim, true, rng),
            graph_proj: Linear::new(store, "aggregator.graph_proj", 2 * dim, dim, true, rng),
        }
    }

    /// Returns `(text rows informed by the graph, graph rows informed by the text)`.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t, '_>,
        h_text: Var<'t>,
        h_graph: Option<Var<'t>>,
    ) -> Result<(Var<'t>, Var<'t>), AutodiffError> {
        let h_graph = h_graph.unwrap_or_else(|| p.var(self.null));
        let (og, go) = aggregate(p.tape(), h_text, h_graph)?;
        let tape = p.tape();
        let text = self.text_proj.forward(p, tape.concat_cols(&[h_text, og])?)?;
        let graph = self.graph_proj.forward(p, tape.concat_cols(&[h_graph, go])?)?;
        Ok((text, graph))
    }
}

/// `S = h_graph h_text^T / sqrt(H)`; returns `(softmax(S^T) h_graph,
/// softmax(S) h_text)`, before projection.
pub fn aggregate<'t>(_tape: &'t Tape, h_text: Var<'t>, h_graph: Var<'t>) -> Result<(Var<'t>, Var<'t>), AutodiffError> {
    let scale = 1.0 / (h_text.cols() as f32).sqrt();
    let s = h_graph.matmul_t(h_text)?.scale(scale);
    let go = s.softmax().matmul(h_text)?;
    let og = s.transpose().softmax().matmul(h_graph)?;
    Ok((og, go))
}

/// Mixes generation and copying:
/// `p(w) = g softmax(logits)[w] + (1 - g) sum_{i: src_i = w} attn_i`
/// over `width >= V` columns. Columns past `V` belong to source words outside
/// the vocabulary.
pub fn pointer_probs<'t>(
    gate: Var<'t>,
    attn: Var<'t>,
    vocab_logits: Var<'t>,
    source_ids: &[usize],
    width: usize,
) -> Res<'t> {
    let gen = vocab_logits.softmax().mul_col(gate)?.pad_cols(width)?;
    let copy = attn.mul_col(gate.affine(-1.0, 1.0))?.scatter_cols(source_ids, width)?;
    gen.add(copy)
}

/// `ln(max(p, 1e-12))` of [`pointer_probs`].
pub fn pointer_mix<'t>(
    gate: Var<'t>,
    attn: Var<'t>,
    vocab_logits: Var<'t>,
    source_ids: &[usize],
    width: usize,
) -> Res<'t> {
    Ok(pointer_probs(gate, attn, vocab_logits, source_ids, width)?.log_floor(1e-12))
}

/// Gate and copy attention of the pointer-softmax head.
#[derive(Clone, Debug)]
pub struct PointerHead {
    pub query: Linear,
    pub gate: Linear,
}

impl PointerHead {
    pub fn new<R: Rng>(store: &mut ParamStore, dim: usize, rng: &mut R) -> Self {
        Self {
            query: Linear::new(store, "pointer.query", dim, dim, false, rng),
            gate: Linear::new(store, "pointer.gate", dim, 1, true, rng),
        }
    }

    /// Log-distribution over the extended vocabulary for each decoder row.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t, '_>,
        dec: Var<'t>,
        source: Var<'t>,
        vocab_logits: Var<'t>,
        source_ids: &[usize],
        width: usize,
    ) -> Res<'t> {
        Ok(self.probs(p, dec, source, vocab_logits, source_ids, width)?.log_floor(1e-12))
    }

    /// Distribution over the extended vocabulary for each decoder row.
    pub fn probs<'t>(
        &self,
        p: &Bound<'t, '_>,
        dec: Var<'t>,
        source: Var<'t>,
        vocab_logits: Var<'t>,
        source_ids: &[usize],
        width: usize,
    ) -> Res<'t> {
        let scale = 1.0 / (dec.cols() as f32).sqrt();
        let attn = self.query.forward(p, dec)?.matmul_t(source)?.scale(scale).softmax();
        let gate = self.gate.forward(p, dec)?.sigmoid();
        pointer_probs(gate, attn, vocab_logits, source_ids, width)
    }
}
