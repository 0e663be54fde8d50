//! Input embeddings and the stack of graph-conditioned self-attention layers.

use std::sync::Arc;

use depref_tensor::{Elem, Tape, Var};

use crate::error::{Error, Result};
use crate::graph::{graph_to_relation_matrix, DepGraph, RelationMatrix};
use crate::model::{Mode, Model, ModelKind};
use crate::vocab::FramedSentence;

/// What the encoder is told about the previous graph.
#[derive(Clone, Copy, Debug)]
pub enum Conditioning<'a> {
    /// No relation terms at all (the initializer network).
    Disabled,
    /// Relation terms present but every pair is NONE.
    Empty,
    Graph(&'a DepGraph),
}

/// Per-head relation inputs for one forward pass.
pub struct RelationInputs {
    pub ids: Arc<[u16]>,
    /// Transposed, layer-normalised key table slice (`head_dim × R`).
    pub keys_t: Var,
    /// Value table slice (`R × head_dim`).
    pub values: Var,
}

/// Sum of word, POS and position embeddings, one row per framed position.
pub fn embed_inputs<T: Elem>(tape: &mut Tape<T>, model: &Model<T>, s: &FramedSentence) -> Result<Var> {
    let n = s.positions();
    let max = model.config.encoder.max_positions;
    if n > max {
        return Err(Error::Config(format!(
            "sentence of {} words needs {n} positions but max_positions is {max}; split or drop longer sentences",
            s.len
        )));
    }
    let ids = &model.ids;
    let word = tape.param(&model.params, ids.word_emb);
    let pos = tape.param(&model.params, ids.pos_emb);
    let position = tape.param(&model.params, ids.position_emb);
    let w = tape.gather_rows(word, &s.words)?;
    let p = tape.gather_rows(pos, &s.pos)?;
    let positions: Vec<usize> = (0..n).collect();
    let f = tape.gather_rows(position, &positions)?;
    Ok(tape.add_n(&[f, w, p])?)
}

/// One attention head over projected queries, keys and values (`N × head_dim`).
pub fn graph_attention_head<T: Elem>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    relations: Option<&RelationInputs>,
) -> Result<Var> {
    let head_dim = tape.shape(q)[1];
    let kt = tape.transpose(k)?;
    let mut logits = tape.matmul(q, kt)?;
    if let Some(rel) = relations {
        let per_relation = tape.matmul(q, rel.keys_t)?;
        let gathered = tape.rel_gather(per_relation, rel.ids.clone())?;
        logits = tape.add(logits, gathered)?;
    }
    let logits = tape.scale(logits, T::of(1.0 / (head_dim as f64).sqrt()));
    let alpha = tape.softmax_lastdim(logits)?;
    let mut out = tape.matmul(alpha, v)?;
    if let Some(rel) = relations {
        let width = tape.shape(rel.values)[0];
        let mass = tape.rel_scatter(alpha, rel.ids.clone(), width)?;
        let extra = tape.matmul(mass, rel.values)?;
        out = tape.add(out, extra)?;
    }
    Ok(out)
}

fn linear<T: Elem>(tape: &mut Tape<T>, model: &Model<T>, x: Var, p: (depref_tensor::ParamId, depref_tensor::ParamId)) -> Result<Var> {
    let w = tape.param(&model.params, p.0);
    let b = tape.param(&model.params, p.1);
    let y = tape.matmul(x, w)?;
    Ok(tape.add_row(y, b)?)
}

fn layer_norm<T: Elem>(tape: &mut Tape<T>, model: &Model<T>, x: Var, p: (depref_tensor::ParamId, depref_tensor::ParamId)) -> Result<Var> {
    let g = tape.param(&model.params, p.0);
    let b = tape.param(&model.params, p.1);
    Ok(tape.layer_norm(x, g, b)?)
}

fn relation_inputs<T: Elem>(
    tape: &mut Tape<T>,
    model: &Model<T>,
    matrix: RelationMatrix,
) -> Result<Vec<RelationInputs>> {
    let rel = model
        .ids
        .relations
        .as_ref()
        .ok_or_else(|| Error::Config("this model has no relation embeddings".into()))?;
    let key = tape.param(&model.params, rel.key);
    let key = layer_norm(tape, model, key, rel.key_ln)?;
    let value = tape.param(&model.params, rel.value);
    let enc = &model.config.encoder;
    let hd = enc.head_dim();
    (0..enc.num_heads)
        .map(|h| {
            let k = tape.slice_cols(key, h * hd, hd)?;
            let keys_t = tape.transpose(k)?;
            let values = tape.slice_cols(value, h * hd, hd)?;
            Ok(RelationInputs {
                ids: matrix.ids.clone(),
                keys_t,
                values,
            })
        })
        .collect()
}

/// Node embeddings for `s` conditioned on the previous graph.
pub fn encode<T: Elem>(
    tape: &mut Tape<T>,
    model: &Model<T>,
    s: &FramedSentence,
    conditioning: Conditioning<'_>,
    mode: &mut Mode,
) -> Result<Var> {
    let cfg = &model.config;
    let enc = &cfg.encoder;
    let n = s.positions();
    let matrix = match conditioning {
        Conditioning::Disabled => None,
        _ if cfg.kind == ModelKind::SynTr => {
            return Err(Error::Config("the initializer model cannot condition on a graph".into()));
        }
        Conditioning::Empty => Some(RelationMatrix::empty(n)),
        Conditioning::Graph(g) => Some(graph_to_relation_matrix(g, n, cfg.num_labels)?),
    };
    let relations = match matrix {
        Some(m) => Some(relation_inputs(tape, model, m)?),
        None => None,
    };

    let mut x = embed_inputs(tape, model, s)?;
    x = tape.dropout(x, enc.dropout, mode.training, mode.next_seed())?;
    let hd = enc.head_dim();
    for layer in &model.ids.layers {
        let q = linear(tape, model, x, layer.q)?;
        let k = linear(tape, model, x, layer.k)?;
        let v = linear(tape, model, x, layer.v)?;
        let mut heads = Vec::with_capacity(enc.num_heads);
        for h in 0..enc.num_heads {
            let qh = tape.slice_cols(q, h * hd, hd)?;
            let kh = tape.slice_cols(k, h * hd, hd)?;
            let vh = tape.slice_cols(v, h * hd, hd)?;
            let rel = relations.as_ref().map(|r| &r[h]);
            heads.push(graph_attention_head(tape, qh, kh, vh, rel)?);
        }
        let joined = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
        let attended = linear(tape, model, joined, layer.out)?;
        let attended = tape.dropout(attended, enc.dropout, mode.training, mode.next_seed())?;
        let sum = tape.add(x, attended)?;
        x = layer_norm(tape, model, sum, layer.attn_ln)?;

        let hidden = linear(tape, model, x, layer.ffn_in)?;
        let hidden = tape.gelu(hidden);
        let ff = linear(tape, model, hidden, layer.ffn_out)?;
        let ff = tape.dropout(ff, enc.dropout, mode.training, mode.next_seed())?;
        let sum = tape.add(x, ff)?;
        x = layer_norm(tape, model, sum, layer.ffn_ln)?;
    }
    Ok(x)
}
