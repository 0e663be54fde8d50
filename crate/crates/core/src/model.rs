//! Model configuration, parameter layout and the forward/predict entry points.

use std::collections::BTreeMap;
use std::fmt;

use depref_tensor::init::{glorot_uniform, normal};
use depref_tensor::{Elem, ParamId, ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decode::{argmax_decode, assign_labels, mst_decode, ArcScores, LabelScores};
use crate::encoder::{encode, Conditioning};
use crate::error::{Error, Result};
use crate::graph::DepGraph;
use crate::scorer::{arc_scores, label_scores, project};
use crate::vocab::{FramedSentence, Vocab};

/// Which network this is: the refiner conditions on a previous graph, the
/// initializer never does.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    RngTr,
    SynTr,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::RngTr => "rngtr",
            ModelKind::SynTr => "syntr",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub max_positions: usize,
}

impl EncoderConfig {
    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScorerConfig {
    pub arc_hidden: usize,
    pub rel_hidden: usize,
    pub dropout: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Paper,
}

impl Preset {
    pub fn encoder(self) -> EncoderConfig {
        match self {
            Preset::Desk => EncoderConfig {
                num_layers: 2,
                num_heads: 4,
                model_dim: 64,
                ffn_dim: 256,
                dropout: 0.33,
                max_positions: 128,
            },
            Preset::Paper => EncoderConfig {
                num_layers: 12,
                num_heads: 12,
                model_dim: 768,
                ffn_dim: 3072,
                dropout: 0.33,
                max_positions: 512,
            },
        }
    }

    pub fn scorer(self) -> ScorerConfig {
        match self {
            Preset::Desk => ScorerConfig {
                arc_hidden: 128,
                rel_hidden: 32,
                dropout: 0.33,
            },
            Preset::Paper => ScorerConfig {
                arc_hidden: 500,
                rel_hidden: 100,
                dropout: 0.33,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub encoder: EncoderConfig,
    pub scorer: ScorerConfig,
    pub word_vocab: usize,
    pub pos_vocab: usize,
    pub num_labels: usize,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, preset: Preset, vocab: &Vocab) -> Self {
        ModelConfig {
            kind,
            encoder: preset.encoder(),
            scorer: preset.scorer(),
            word_vocab: vocab.words.len(),
            pos_vocab: vocab.pos.len(),
            num_labels: vocab.num_labels(),
        }
    }

    pub fn num_relations(&self) -> usize {
        2 * self.num_labels + 1
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        let fail = |msg: String| Err(Error::Config(msg));
        if e.num_heads == 0 || !e.model_dim.is_multiple_of(e.num_heads) {
            return fail(format!("model_dim {} is not divisible by num_heads {}", e.model_dim, e.num_heads));
        }
        if !(0.0..1.0).contains(&e.dropout) || !(0.0..1.0).contains(&self.scorer.dropout) {
            return fail("dropout must lie in [0, 1)".into());
        }
        if e.max_positions < 4 || self.scorer.arc_hidden == 0 || self.scorer.rel_hidden == 0 {
            return fail("max_positions must be at least 4 and hidden sizes positive".into());
        }
        if self.num_labels == 0 || self.word_vocab < 5 || self.pos_vocab < 5 {
            return fail("vocabulary sizes are too small".into());
        }
        Ok(())
    }

    /// Flat `key=value` description, stable across runs.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let e = &self.encoder;
        let s = &self.scorer;
        vec![
            ("kind", self.kind.name().to_string()),
            ("num_layers", e.num_layers.to_string()),
            ("num_heads", e.num_heads.to_string()),
            ("model_dim", e.model_dim.to_string()),
            ("ffn_dim", e.ffn_dim.to_string()),
            ("dropout", e.dropout.to_string()),
            ("max_positions", e.max_positions.to_string()),
            ("arc_hidden", s.arc_hidden.to_string()),
            ("rel_hidden", s.rel_hidden.to_string()),
            ("mlp_dropout", s.dropout.to_string()),
            ("word_vocab", self.word_vocab.to_string()),
            ("pos_vocab", self.pos_vocab.to_string()),
            ("num_labels", self.num_labels.to_string()),
        ]
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        fn get<V: std::str::FromStr>(pairs: &BTreeMap<String, String>, key: &str) -> Result<V> {
            let raw = pairs
                .get(key)
                .ok_or_else(|| Error::Config(format!("missing model setting {key}")))?;
            raw.parse()
                .map_err(|_| Error::Config(format!("invalid value {raw:?} for {key}")))
        }
        let kind = match pairs.get("kind").map(String::as_str) {
            Some("rngtr") => ModelKind::RngTr,
            Some("syntr") => ModelKind::SynTr,
            other => return Err(Error::Config(format!("unknown model kind {other:?}"))),
        };
        let cfg = ModelConfig {
            kind,
            encoder: EncoderConfig {
                num_layers: get(pairs, "num_layers")?,
                num_heads: get(pairs, "num_heads")?,
                model_dim: get(pairs, "model_dim")?,
                ffn_dim: get(pairs, "ffn_dim")?,
                dropout: get(pairs, "dropout")?,
                max_positions: get(pairs, "max_positions")?,
            },
            scorer: ScorerConfig {
                arc_hidden: get(pairs, "arc_hidden")?,
                rel_hidden: get(pairs, "rel_hidden")?,
                dropout: get(pairs, "mlp_dropout")?,
            },
            word_vocab: get(pairs, "word_vocab")?,
            pos_vocab: get(pairs, "pos_vocab")?,
            num_labels: get(pairs, "num_labels")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.to_pairs().into_iter().map(|(k, v)| format!("{k}={v}")).collect();
        f.write_str(&parts.join(" "))
    }
}

#[derive(Clone, Debug)]
pub struct LayerIds {
    pub q: (ParamId, ParamId),
    pub k: (ParamId, ParamId),
    pub v: (ParamId, ParamId),
    pub out: (ParamId, ParamId),
    pub attn_ln: (ParamId, ParamId),
    pub ffn_in: (ParamId, ParamId),
    pub ffn_out: (ParamId, ParamId),
    pub ffn_ln: (ParamId, ParamId),
}

#[derive(Clone, Debug)]
pub struct RelationIds {
    pub key: ParamId,
    pub key_ln: (ParamId, ParamId),
    pub value: ParamId,
}

#[derive(Clone, Debug)]
pub struct ParamIds {
    pub word_emb: ParamId,
    pub pos_emb: ParamId,
    pub position_emb: ParamId,
    pub relations: Option<RelationIds>,
    pub layers: Vec<LayerIds>,
    pub arc_dep: (ParamId, ParamId),
    pub arc_head: (ParamId, ParamId),
    pub rel_dep: (ParamId, ParamId),
    pub rel_head: (ParamId, ParamId),
    pub arc_u: ParamId,
    pub arc_head_bias: ParamId,
    pub label_u: ParamId,
    pub label_dep: ParamId,
    pub label_head: ParamId,
    pub label_bias: ParamId,
}

impl ParamIds {
    fn resolve<T: Elem>(config: &ModelConfig, store: &ParamStore<T>) -> Result<Self> {
        let id = |name: &str| {
            store
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
        };
        let pair = |name: &str| -> Result<(ParamId, ParamId)> { Ok((id(&format!("{name}.weight"))?, id(&format!("{name}.bias"))?)) };
        let ln = |name: &str| -> Result<(ParamId, ParamId)> { Ok((id(&format!("{name}.gain"))?, id(&format!("{name}.bias"))?)) };
        let relations = match config.kind {
            ModelKind::RngTr => Some(RelationIds {
                key: id("rel.key")?,
                key_ln: ln("rel.key_ln")?,
                value: id("rel.value")?,
            }),
            ModelKind::SynTr => None,
        };
        let layers = (0..config.encoder.num_layers)
            .map(|l| {
                Ok(LayerIds {
                    q: pair(&format!("layer{l}.attn.q"))?,
                    k: pair(&format!("layer{l}.attn.k"))?,
                    v: pair(&format!("layer{l}.attn.v"))?,
                    out: pair(&format!("layer{l}.attn.out"))?,
                    attn_ln: ln(&format!("layer{l}.attn_ln"))?,
                    ffn_in: pair(&format!("layer{l}.ffn.in"))?,
                    ffn_out: pair(&format!("layer{l}.ffn.out"))?,
                    ffn_ln: ln(&format!("layer{l}.ffn_ln"))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(ParamIds {
            word_emb: id("emb.word")?,
            pos_emb: id("emb.pos")?,
            position_emb: id("emb.position")?,
            relations,
            layers,
            arc_dep: pair("mlp.arc_dep")?,
            arc_head: pair("mlp.arc_head")?,
            rel_dep: pair("mlp.rel_dep")?,
            rel_head: pair("mlp.rel_head")?,
            arc_u: id("arc.u")?,
            arc_head_bias: id("arc.head_bias")?,
            label_u: id("label.u")?,
            label_dep: id("label.dep")?,
            label_head: id("label.head")?,
            label_bias: id("label.bias")?,
        })
    }
}

/// Forward-pass mode: dropout is active only in training, with masks drawn
/// from `seed` and a per-call counter.
#[derive(Debug)]
pub struct Mode {
    pub training: bool,
    seed: u64,
    calls: u64,
}

impl Mode {
    pub fn inference() -> Self {
        Mode {
            training: false,
            seed: 0,
            calls: 0,
        }
    }

    pub fn training(seed: u64) -> Self {
        Mode {
            training: true,
            seed,
            calls: 0,
        }
    }

    pub(crate) fn next_seed(&mut self) -> u64 {
        self.calls += 1;
        mix_seed(self.seed, self.calls)
    }
}

/// SplitMix64-style combination of a seed with a stream index.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct Model<T: Elem = f32> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub ids: ParamIds,
}

/// Tape nodes produced by one forward pass over a sentence.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub encoded: Var,
    pub arc_dep: Var,
    pub arc_head: Var,
    pub rel_dep: Var,
    pub rel_head: Var,
    /// `n × (n + 3)` masked arc scores, one row per word.
    pub arcs: Var,
}

/// Decoded output of one pass.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub scores: ArcScores,
    /// Independent best heads with their best labels; may be cyclic.
    pub argmax: DepGraph,
    /// Maximum spanning tree with labels, when requested.
    pub tree: Option<DepGraph>,
}

impl<T: Elem> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let e = &config.encoder;
        let s = &config.scorer;
        let d = e.model_dim;
        let zeros = |shape: Vec<usize>| Tensor::<T>::zeros(shape);
        let ones = |n: usize| Tensor::<T>::full(vec![n], T::one());

        store.add("emb.word", normal(vec![config.word_vocab, d], 0.02, &mut rng), true);
        store.add("emb.pos", normal(vec![config.pos_vocab, d], 0.02, &mut rng), true);
        store.add("emb.position", normal(vec![e.max_positions, d], 0.02, &mut rng), true);
        if config.kind == ModelKind::RngTr {
            let r = config.num_relations();
            let mut key: Tensor<T> = normal(vec![r, d], 0.02, &mut rng);
            let mut value: Tensor<T> = normal(vec![r, d], 0.02, &mut rng);
            key.data_mut()[..d].fill(T::zero());
            value.data_mut()[..d].fill(T::zero());
            let key = store.add("rel.key", key, true);
            store.add("rel.key_ln.gain", ones(d), false);
            store.add("rel.key_ln.bias", zeros(vec![d]), false);
            let value = store.add("rel.value", value, true);
            // NONE stays the zero vector, like a padding embedding.
            store.freeze_rows(key, &[0]);
            store.freeze_rows(value, &[0]);
        }
        let mut linear = |store: &mut ParamStore<T>, name: String, fan_in: usize, fan_out: usize| {
            store.add(format!("{name}.weight"), glorot_uniform(fan_in, fan_out, &mut rng), true);
            store.add(format!("{name}.bias"), zeros(vec![fan_out]), false);
        };
        let layer_norm = |store: &mut ParamStore<T>, name: String| {
            store.add(format!("{name}.gain"), ones(d), false);
            store.add(format!("{name}.bias"), zeros(vec![d]), false);
        };
        for l in 0..e.num_layers {
            for p in ["q", "k", "v", "out"] {
                linear(&mut store, format!("layer{l}.attn.{p}"), d, d);
            }
            layer_norm(&mut store, format!("layer{l}.attn_ln"));
            linear(&mut store, format!("layer{l}.ffn.in"), d, e.ffn_dim);
            linear(&mut store, format!("layer{l}.ffn.out"), e.ffn_dim, d);
            layer_norm(&mut store, format!("layer{l}.ffn_ln"));
        }
        linear(&mut store, "mlp.arc_dep".into(), d, s.arc_hidden);
        linear(&mut store, "mlp.arc_head".into(), d, s.arc_hidden);
        linear(&mut store, "mlp.rel_dep".into(), d, s.rel_hidden);
        linear(&mut store, "mlp.rel_head".into(), d, s.rel_hidden);
        let (ha, hr, l) = (s.arc_hidden, s.rel_hidden, config.num_labels);
        store.add("arc.u", glorot_uniform(ha, ha, &mut rng), true);
        store.add("arc.head_bias", zeros(vec![ha, 1]), false);
        store.add("label.u", glorot_uniform(hr, l * hr, &mut rng), true);
        store.add("label.dep", glorot_uniform(hr, l, &mut rng), true);
        store.add("label.head", glorot_uniform(hr, l, &mut rng), true);
        store.add("label.bias", zeros(vec![l]), false);

        let ids = ParamIds::resolve(&config, &store)?;
        Ok(Model {
            config,
            params: store,
            ids,
        })
    }

    /// Rebuild from an existing parameter store, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let reference = Model::<T>::new(config.clone(), 0)?;
        if reference.params.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                reference.params.len(),
                params.len()
            )));
        }
        for (_, p) in reference.params.iter() {
            let id = params
                .id(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", p.name)))?;
            let got = params.get(id).shape();
            if got != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {got:?}, expected {:?}",
                    p.name,
                    p.value.shape()
                )));
            }
        }
        let mut params = params;
        for (_, p) in reference.params.iter() {
            if !p.frozen_rows.is_empty() {
                let id = params.id(&p.name).unwrap();
                params.freeze_rows(id, &p.frozen_rows);
            }
        }
        let ids = ParamIds::resolve(&config, &params)?;
        Ok(Model { config, params, ids })
    }

    pub fn cast<U: Elem>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            ids: self.ids.clone(),
        }
    }

    /// Encode and score one sentence on `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        sentence: &FramedSentence,
        conditioning: Conditioning<'_>,
        mode: &mut Mode,
    ) -> Result<Forward> {
        let encoded = encode(tape, self, sentence, conditioning, mode)?;
        let p = project(tape, self, encoded, mode)?;
        let arcs = arc_scores(tape, self, p.arc_dep, p.arc_head, sentence.len)?;
        Ok(Forward {
            encoded,
            arc_dep: p.arc_dep,
            arc_head: p.arc_head,
            rel_dep: p.rel_dep,
            rel_head: p.rel_head,
            arcs,
        })
    }

    /// Arc cross-entropy over gold heads plus label cross-entropy at the
    /// gold head of every word.
    pub fn loss(&self, tape: &mut Tape<T>, sentence: &FramedSentence, fwd: &Forward) -> Result<Var> {
        let gold_labels: Vec<usize> = sentence
            .labels
            .iter()
            .map(|l| l.ok_or_else(|| Error::Vocab("gold label outside the vocabulary".into())))
            .collect::<Result<_>>()?;
        let arc = tape.cross_entropy_logits(fwd.arcs, &sentence.heads, None)?;
        let labels = label_scores(tape, self, fwd.rel_dep, fwd.rel_head, &sentence.heads)?;
        let label = tape.cross_entropy_logits(labels, &gold_labels, None)?;
        Ok(tape.add(arc, label)?)
    }

    /// Label scores at the given heads on an existing forward pass.
    pub fn labels_at(&self, tape: &mut Tape<T>, fwd: &Forward, heads: &[usize]) -> Result<LabelScores> {
        let v = label_scores(tape, self, fwd.rel_dep, fwd.rel_head, heads)?;
        Ok(LabelScores {
            num_labels: self.config.num_labels,
            data: tape.value(v).data().iter().map(|x| x.widen() as f32).collect(),
        })
    }

    pub fn arc_scores_of(&self, tape: &Tape<T>, fwd: &Forward, words: usize) -> Result<ArcScores> {
        let rows: Vec<f32> = tape.value(fwd.arcs).data().iter().map(|x| x.widen() as f32).collect();
        ArcScores::from_word_rows(words, &rows)
    }

    /// Inference pass: argmax graph and, if `tree` is set, the single-root
    /// (or unconstrained) maximum spanning tree.
    pub fn predict(
        &self,
        sentence: &FramedSentence,
        conditioning: Conditioning<'_>,
        tree: Option<bool>,
    ) -> Result<Prediction> {
        let mut tape = Tape::inference();
        let mut mode = Mode::inference();
        let fwd = self.forward(&mut tape, sentence, conditioning, &mut mode)?;
        let scores = self.arc_scores_of(&tape, &fwd, sentence.len)?;
        let heads = argmax_decode(&scores)?;
        let labels = self.labels_at(&mut tape, &fwd, &heads)?;
        let argmax = assign_labels(&heads, &labels)?;
        let tree = match tree {
            Some(single_root) => {
                let heads = mst_decode(&scores, single_root)?;
                let labels = self.labels_at(&mut tape, &fwd, &heads)?;
                Some(assign_labels(&heads, &labels)?)
            }
            None => None,
        };
        Ok(Prediction { scores, argmax, tree })
    }
}
