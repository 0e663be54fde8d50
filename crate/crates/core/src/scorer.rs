//! MLP projections and biaffine arc/label scorers.

use depref_tensor::{Elem, ParamId, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::model::{Mode, Model};

pub const LEAKY_SLOPE: f64 = 0.1;

pub struct Projections {
    pub arc_dep: Var,
    pub arc_head: Var,
    pub rel_dep: Var,
    pub rel_head: Var,
}

fn mlp<T: Elem>(tape: &mut Tape<T>, model: &Model<T>, z: Var, p: (ParamId, ParamId), mode: &mut Mode) -> Result<Var> {
    let w = tape.param(&model.params, p.0);
    let b = tape.param(&model.params, p.1);
    let y = tape.matmul(z, w)?;
    let y = tape.add_row(y, b)?;
    let y = tape.leaky_relu(y, T::of(LEAKY_SLOPE));
    Ok(tape.dropout(y, model.config.scorer.dropout, mode.training, mode.next_seed())?)
}

/// The four role-specific views of the node embeddings, one row per position.
pub fn project<T: Elem>(tape: &mut Tape<T>, model: &Model<T>, z: Var, mode: &mut Mode) -> Result<Projections> {
    let ids = &model.ids;
    Ok(Projections {
        arc_dep: mlp(tape, model, z, ids.arc_dep, mode)?,
        arc_head: mlp(tape, model, z, ids.arc_head, mode)?,
        rel_dep: mlp(tape, model, z, ids.rel_dep, mode)?,
        rel_head: mlp(tape, model, z, ids.rel_head, mode)?,
    })
}

fn word_rows(words: usize) -> Vec<usize> {
    (2..words + 2).collect()
}

/// `n × (n + 3)` head scores for each word: `dep·U·headᵀ + head·u`, with
/// CLS, SEP and the word itself masked to `-inf`.
pub fn arc_scores<T: Elem>(tape: &mut Tape<T>, model: &Model<T>, dep: Var, head: Var, words: usize) -> Result<Var> {
    let size = tape.shape(head)[0];
    if size != words + 3 {
        return Err(Error::Config(format!("{size} positions for {words} words")));
    }
    let dep = tape.gather_rows(dep, &word_rows(words))?;
    let u = tape.param(&model.params, model.ids.arc_u);
    let bias = tape.param(&model.params, model.ids.arc_head_bias);
    let du = tape.matmul(dep, u)?;
    let ht = tape.transpose(head)?;
    let bilinear = tape.matmul(du, ht)?;
    let head_term = tape.matmul(head, bias)?;
    let head_term = tape.reshape(head_term, vec![size])?;
    let scores = tape.add_row(bilinear, head_term)?;
    let mut mask = Tensor::<T>::zeros(vec![words, size]);
    let data = mask.data_mut();
    for k in 0..words {
        for illegal in [0, size - 1, k + 2] {
            data[k * size + illegal] = T::neg_infinity();
        }
    }
    let mask = tape.constant(mask);
    Ok(tape.add(scores, mask)?)
}

/// `n × |L|` label scores for word `k` attached to framed position `heads[k]`.
pub fn label_scores<T: Elem>(tape: &mut Tape<T>, model: &Model<T>, dep: Var, head: Var, heads: &[usize]) -> Result<Var> {
    let ids = &model.ids;
    let dep = tape.gather_rows(dep, &word_rows(heads.len()))?;
    let head = tape.gather_rows(head, heads)?;
    let u = tape.param(&model.params, ids.label_u);
    let wd = tape.param(&model.params, ids.label_dep);
    let wh = tape.param(&model.params, ids.label_head);
    let b = tape.param(&model.params, ids.label_bias);
    let du = tape.matmul(dep, u)?;
    let bilinear = tape.row_dot(du, head)?;
    let from_dep = tape.matmul(dep, wd)?;
    let from_head = tape.matmul(head, wh)?;
    let sum = tape.add_n(&[bilinear, from_dep, from_head])?;
    Ok(tape.add_row(sum, b)?)
}
