use std::path::Path;

use kgdelta_autodiff::{AdamState, AutodiffError, Bound, Checkpoint, ParamId, ParamStore, Tape, Tensor, Var};
use kgdelta_core::dsl::{self, EOS_ID, PAD_ID, SEP, SOS_ID, UNK_ID};
use kgdelta_core::eval::{Generation, UpdateGenerator};
use kgdelta_core::{BeliefGraph, RelationRegistry, Transition, UpdateSequence, Vocabulary};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::layers::{
    mean_embeddings, positions, Aggregator, DecoderBlock, EncoderBlock, EncoderVariant, GraphBatch, GraphEncoder,
    KvCache, Norm, PointerHead,
};
use crate::ModelError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub n_heads: usize,
    pub n_graph_layers: usize,
    pub ffn_hidden: usize,
    pub variant: EncoderVariant,
    pub max_decode_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            n_enc_layers: 2,
            n_dec_layers: 2,
            n_heads: 4,
            n_graph_layers: 1,
            ffn_hidden: 128,
            variant: EncoderVariant::Rgcn,
            max_decode_len: 160,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden == 0 || self.n_heads == 0 || self.hidden % self.n_heads != 0 {
            return Err(ModelError::Config(format!(
                "hidden size {} must be a positive multiple of n_heads {}",
                self.hidden, self.n_heads
            )));
        }
        if self.max_decode_len == 0 {
            return Err(ModelError::Config("max_decode_len must be at least 1".into()));
        }
        if self.ffn_hidden == 0 {
            return Err(ModelError::Config("ffn_hidden must be at least 1".into()));
        }
        Ok(())
    }
}

/// Encoder input: `[A_{t-1} ; <sep> ; O_t]` as vocabulary ids, plus the
/// extended ids used by the copy path (out-of-vocabulary words get `V + k`).
#[derive(Clone, Debug, PartialEq)]
pub struct SourceText {
    pub tokens: Vec<String>,
    pub ids: Vec<usize>,
    pub ext_ids: Vec<usize>,
    pub oov: Vec<String>,
}

impl SourceText {
    pub fn new(vocab: &Vocabulary, action: &str, observation: &str) -> Self {
        let mut tokens: Vec<String> = dsl::tokenize(action).into_iter().map(|t| t.text).collect();
        tokens.push(SEP.to_string());
        tokens.extend(dsl::tokenize(observation).into_iter().map(|t| t.text));
        let mut oov: Vec<String> = Vec::new();
        let mut ids = Vec::with_capacity(tokens.len());
        let mut ext_ids = Vec::with_capacity(tokens.len());
        for tok in &tokens {
            match vocab.get(tok) {
                Some(id) => {
                    ids.push(id);
                    ext_ids.push(id);
                }
                None => {
                    let k = oov.iter().position(|o| o == tok).unwrap_or_else(|| {
                        oov.push(tok.clone());
                        oov.len() - 1
                    });
                    ids.push(UNK_ID);
                    ext_ids.push(vocab.len() + k);
                }
            }
        }
        Self {
            tokens,
            ids,
            ext_ids,
            oov,
        }
    }

    pub fn width(&self, vocab: &Vocabulary) -> usize {
        vocab.len() + self.oov.len()
    }

    /// Extended id of a target word: vocabulary first, then copied source words.
    pub fn target_id(&self, vocab: &Vocabulary, token: &str) -> usize {
        vocab
            .get(token)
            .or_else(|| self.oov.iter().position(|o| o == token).map(|k| vocab.len() + k))
            .unwrap_or(UNK_ID)
    }

    pub fn token<'a>(&'a self, vocab: &'a Vocabulary, id: usize) -> &'a str {
        if id < vocab.len() {
            vocab.token(id).unwrap_or(dsl::UNK)
        } else {
            self.oov.get(id - vocab.len()).map_or(dsl::UNK, String::as_str)
        }
    }
}

#[derive(Clone, Debug)]
struct Layers {
    embedding: ParamId,
    encoder: Vec<EncoderBlock>,
    enc_norm: Norm,
    graph: Option<GraphEncoder>,
    aggregator: Aggregator,
    decoder: Vec<DecoderBlock>,
    dec_norm: Norm,
    pointer: PointerHead,
}

/// The update-command generator: text encoder, optional graph encoder,
/// aggregator and pointer-softmax decoder.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub registry: RelationRegistry,
    pub params: ParamStore,
    layers: Layers,
    rel_labels: Vec<Vec<usize>>,
}

/// Everything the decoder needs from the encoders for one transition.
pub struct Encoded<'t> {
    pub text: Var<'t>,
    pub graph: Var<'t>,
    pub memory: Var<'t>,
    pub source: SourceText,
}

/// Extra state carried in a checkpoint besides the parameters.
#[derive(Clone, Debug, Default)]
pub struct TrainingState {
    pub step: u64,
    pub adam: Option<Vec<AdamState>>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    config: ModelConfig,
    vocab: Vocabulary,
    relations: Vec<String>,
    step: u64,
    adam_steps: Option<u64>,
}

const FORMAT: &str = "kgdelta-model/1";

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocabulary, registry: RelationRegistry) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let h = config.hidden;
        let bound = (3.0 / h as f32).sqrt();
        let embedding = store.add("embedding", Tensor::uniform(&[vocab.len(), h], bound, &mut rng));
        let encoder = (0..config.n_enc_layers)
            .map(|l| EncoderBlock::new(&mut store, &format!("encoder.{l}"), h, config.n_heads, config.ffn_hidden, &mut rng))
            .collect();
        let enc_norm = Norm::new(&mut store, "encoder.norm", h);
        // Graph parameters come from their own stream so the text-side
        // initialisation is the same for every variant.
        let mut graph_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6772_6170_6800);
        let collapsed = !config.variant.relational();
        let n_rel = if collapsed { 1 } else { registry.len() };
        let graph = GraphEncoder::new(&mut store, config.variant, h, config.n_graph_layers, n_rel, &mut graph_rng);
        let aggregator = Aggregator::new(&mut store, h, &mut rng);
        let decoder = (0..config.n_dec_layers)
            .map(|l| DecoderBlock::new(&mut store, &format!("decoder.{l}"), h, config.n_heads, config.ffn_hidden, &mut rng))
            .collect();
        let dec_norm = Norm::new(&mut store, "decoder.norm", h);
        let pointer = PointerHead::new(&mut store, h, &mut rng);
        let rel_labels = registry
            .labels()
            .iter()
            .map(|l| l.split('_').map(|w| vocab.id(w)).collect())
            .collect();
        Ok(Self {
            config,
            vocab,
            registry,
            params: store,
            layers: Layers {
                embedding,
                encoder,
                enc_norm,
                graph,
                aggregator,
                decoder,
                dec_norm,
                pointer,
            },
            rel_labels,
        })
    }

    pub fn variant(&self) -> EncoderVariant {
        self.config.variant
    }

    pub fn source(&self, transition: &Transition) -> SourceText {
        SourceText::new(&self.vocab, &transition.action, &transition.observation)
    }

    pub fn graph_batch(&self, graph: &BeliefGraph) -> Result<GraphBatch, ModelError> {
        GraphBatch::from_graph(graph, &self.vocab, &self.registry, !self.config.variant.relational())
    }

    fn embed<'t>(&self, p: &Bound<'t, '_>, ids: &[usize], start: usize) -> Result<Var<'t>, AutodiffError> {
        let v = self.vocab.len();
        let ids: Vec<usize> = ids.iter().map(|&i| if i < v { i } else { UNK_ID }).collect();
        let e = p.tape().embedding(p.var(self.layers.embedding), &ids)?;
        let pos = p.tape().constant(positions(start, ids.len(), self.config.hidden));
        e.add(pos)
    }

    /// Runs both encoders and the aggregator.
    pub fn encode<'t>(
        &self,
        p: &Bound<'t, '_>,
        source: SourceText,
        graph: &BeliefGraph,
    ) -> Result<Encoded<'t>, ModelError> {
        let tape = p.tape();
        let mut x = self.embed(p, &source.ids, 0)?;
        for block in &self.layers.encoder {
            x = block.forward(p, x, None)?;
        }
        let h_text = self.layers.enc_norm.forward(p, x)?;
        let h_graph = match &self.layers.graph {
            Some(enc) if !graph.is_empty() => {
                let batch = self.graph_batch(graph)?;
                let emb = p.var(self.layers.embedding);
                let h0 = mean_embeddings(tape, emb, &batch.node_labels)?;
                Some(enc.forward(p, &batch, h0, emb, &self.rel_labels)?)
            }
            _ => None,
        };
        let (text, graph) = self.layers.aggregator.forward(p, h_text, h_graph)?;
        let memory = tape.concat_rows(&[text, graph])?;
        Ok(Encoded {
            text,
            graph,
            memory,
            source,
        })
    }

    /// `(h_OG, h_GO)` for a transition against its recorded prior graph.
    pub fn encode_inputs(&self, transition: &Transition) -> Result<(Tensor, Tensor), ModelError> {
        let tape = Tape::no_grad();
        let p = Bound::new(&tape, &self.params);
        let enc = self.encode(&p, self.source(transition), &transition.g_seen_prev)?;
        Ok(((*enc.text.value()).clone(), (*enc.graph.value()).clone()))
    }

    fn decode_all<'t>(&self, p: &Bound<'t, '_>, enc: &Encoded<'t>, inputs: &[usize]) -> Result<Var<'t>, ModelError> {
        Ok(self.decode_all_probs(p, enc, inputs)?.log_floor(1e-12))
    }

    fn decode_all_probs<'t>(&self, p: &Bound<'t, '_>, enc: &Encoded<'t>, inputs: &[usize]) -> Result<Var<'t>, ModelError> {
        let mut x = self.embed(p, inputs, 0)?;
        for block in &self.layers.decoder {
            x = block.forward(p, x, enc.memory)?;
        }
        let d = self.layers.dec_norm.forward(p, x)?;
        self.head_probs(p, enc, d)
    }

    fn head<'t>(&self, p: &Bound<'t, '_>, enc: &Encoded<'t>, d: Var<'t>) -> Result<Var<'t>, ModelError> {
        Ok(self.head_probs(p, enc, d)?.log_floor(1e-12))
    }

    fn head_probs<'t>(&self, p: &Bound<'t, '_>, enc: &Encoded<'t>, d: Var<'t>) -> Result<Var<'t>, ModelError> {
        let logits = d.matmul_t(p.var(self.layers.embedding))?;
        let width = enc.source.width(&self.vocab);
        Ok(self
            .layers
            .pointer
            .probs(p, d, enc.text, logits, &enc.source.ext_ids, width)?)
    }

    /// Decoder targets for a gold sequence: rendered tokens as extended ids.
    pub fn targets(&self, source: &SourceText, gold: &UpdateSequence) -> Result<Vec<usize>, ModelError> {
        let rendered = dsl::render_sequence(gold);
        if rendered.len() > self.config.max_decode_len {
            return Err(ModelError::TargetTooLong {
                len: rendered.len(),
                max: self.config.max_decode_len,
            });
        }
        Ok(rendered.iter().map(|t| source.target_id(&self.vocab, &t.text)).collect())
    }

    /// Teacher-forced log-distributions (one row per target position) and targets.
    pub fn teacher_forced<'t>(
        &self,
        p: &Bound<'t, '_>,
        transition: &Transition,
        graph: &BeliefGraph,
        gold: &UpdateSequence,
    ) -> Result<(Var<'t>, Vec<usize>), ModelError> {
        let source = self.source(transition);
        let targets = self.targets(&source, gold)?;
        let enc = self.encode(p, source, graph)?;
        let mut inputs = Vec::with_capacity(targets.len());
        inputs.push(SOS_ID);
        inputs.extend_from_slice(&targets[..targets.len() - 1]);
        let logp = self.decode_all(p, &enc, &inputs)?;
        Ok((logp, targets))
    }

    /// As [`Model::teacher_forced`], returning probabilities instead of their logarithms.
    pub fn teacher_forced_probs<'t>(
        &self,
        p: &Bound<'t, '_>,
        transition: &Transition,
        graph: &BeliefGraph,
        gold: &UpdateSequence,
    ) -> Result<(Var<'t>, Vec<usize>), ModelError> {
        let source = self.source(transition);
        let targets = self.targets(&source, gold)?;
        let enc = self.encode(p, source, graph)?;
        let mut inputs = Vec::with_capacity(targets.len());
        inputs.push(SOS_ID);
        inputs.extend_from_slice(&targets[..targets.len() - 1]);
        let probs = self.decode_all_probs(p, &enc, &inputs)?;
        Ok((probs, targets))
    }

    /// Loss on `p`'s tape against the transition's recorded prior graph.
    pub fn loss<'t>(&self, p: &Bound<'t, '_>, transition: &Transition, gold: &UpdateSequence) -> Result<Var<'t>, ModelError> {
        let (logp, targets) = self.teacher_forced(p, transition, &transition.g_seen_prev, gold)?;
        Ok(logp.nll_loss(&targets, PAD_ID)?)
    }

    /// Mean NLL of `gold` under teacher forcing.
    pub fn forward_teacher_forced(&self, transition: &Transition, gold: &UpdateSequence) -> Result<f32, ModelError> {
        let tape = Tape::no_grad();
        let p = Bound::new(&tape, &self.params);
        Ok(self.loss(&p, transition, gold)?.value().item())
    }

    /// Greedy decoding against `graph`, returning the raw output tokens.
    pub fn generate_tokens(&self, transition: &Transition, graph: &BeliefGraph) -> Result<Vec<String>, ModelError> {
        let tape = Tape::no_grad();
        let p = Bound::new(&tape, &self.params);
        let enc = self.encode(&p, self.source(transition), graph)?;
        let memory_kv: Vec<(Var<'_>, Var<'_>)> = self
            .layers
            .decoder
            .iter()
            .map(|b| b.memory_kv(&p, enc.memory))
            .collect::<Result<_, _>>()?;
        let mut caches = vec![KvCache::default(); self.layers.decoder.len()];
        let mut out = Vec::new();
        let mut prev = SOS_ID;
        for pos in 0..self.config.max_decode_len {
            let mut x = self.embed(&p, &[prev], pos)?;
            for ((block, cache), kv) in self.layers.decoder.iter().zip(caches.iter_mut()).zip(&memory_kv) {
                x = block.step(&p, x, cache, *kv)?;
            }
            let d = self.layers.dec_norm.forward(&p, x)?;
            let logp = self.head(&p, &enc, d)?.value();
            let next = logp.argmax_row(0);
            if next == EOS_ID {
                break;
            }
            out.push(enc.source.token(&self.vocab, next).to_string());
            prev = next;
        }
        Ok(out)
    }

    /// Greedy decoding parsed into commands; malformed segments are counted.
    pub fn generate_with(&self, transition: &Transition, graph: &BeliefGraph) -> Generation {
        match self.generate_tokens(transition, graph) {
            Ok(tokens) => {
                let (ops, malformed) = dsl::parse_sequence(&tokens, &self.registry);
                Generation { ops, malformed }
            }
            Err(_) => Generation {
                ops: UpdateSequence::new(),
                malformed: 1,
            },
        }
    }

    pub fn generate(&self, transition: &Transition) -> UpdateSequence {
        self.generate_with(transition, &transition.g_seen_prev).ops
    }

    /// Parameter count of the text encoder (embedding and encoder blocks).
    pub fn text_encoder_params(&self) -> usize {
        self.params
            .iter()
            .filter(|(_, name, _)| *name == "embedding" || name.starts_with("encoder."))
            .map(|(_, _, t)| t.len())
            .sum()
    }

    pub fn to_checkpoint(&self, state: &TrainingState) -> Result<Checkpoint, ModelError> {
        let header = Header {
            format: FORMAT.to_string(),
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            relations: self.registry.labels().to_vec(),
            step: state.step,
            adam_steps: state.adam.as_ref().map(|s| s.first().map_or(0, |a| a.t)),
        };
        let mut tensors: Vec<(String, Tensor)> =
            self.params.iter().map(|(_, n, t)| (n.to_string(), t.clone())).collect();
        if let Some(adam) = &state.adam {
            for ((_, name, t), s) in self.params.iter().zip(adam) {
                tensors.push((format!("adam.m.{name}"), Tensor::new(t.shape().to_vec(), s.m.clone())?));
                tensors.push((format!("adam.v.{name}"), Tensor::new(t.shape().to_vec(), s.v.clone())?));
            }
        }
        Ok(Checkpoint {
            header: serde_json::to_string(&header).map_err(|e| ModelError::Checkpoint(e.to_string()))?,
            tensors,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, TrainingState), ModelError> {
        let header: Header =
            serde_json::from_str(&ck.header).map_err(|e| ModelError::Checkpoint(format!("header: {e}")))?;
        if header.format != FORMAT {
            return Err(ModelError::Checkpoint(format!("unknown format {}", header.format)));
        }
        let registry = RelationRegistry::new(header.relations).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let mut model = Model::new(header.config, header.vocab, registry)?;
        let ids: Vec<ParamId> = model.params.ids().collect();
        for id in &ids {
            let name = model.params.name(*id).to_string();
            let t = ck
                .get(&name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {name}")))?;
            model.params.set(*id, t.clone())?;
        }
        let adam = match header.adam_steps {
            Some(t) => Some(
                ids.iter()
                    .map(|id| {
                        let name = model.params.name(*id);
                        let get = |k: &str| {
                            ck.get(&format!("adam.{k}.{name}"))
                                .map(|t| t.data().to_vec())
                                .ok_or_else(|| ModelError::Checkpoint(format!("missing optimizer state for {name}")))
                        };
                        Ok(AdamState { m: get("m")?, v: get("v")?, t })
                    })
                    .collect::<Result<Vec<_>, ModelError>>()?,
            ),
            None => None,
        };
        Ok((
            model,
            TrainingState {
                step: header.step,
                adam,
            },
        ))
    }

    pub fn save(&self, path: &Path, state: &TrainingState) -> Result<(), ModelError> {
        self.to_checkpoint(state)?.save(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, TrainingState), ModelError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

impl UpdateGenerator for Model {
    fn generate(&self, transition: &Transition, graph: &BeliefGraph) -> Generation {
        self.generate_with(transition, graph)
    }

    fn relational(&self) -> bool {
        self.config.variant.relational()
    }
}
