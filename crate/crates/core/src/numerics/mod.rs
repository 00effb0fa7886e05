//! Dense tensors, a reverse-mode tape, MLP blocks and the Adam optimizer.

mod checkpoint;
pub mod gradcheck;
mod graph;
mod mlp;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{
    apply as apply_checkpoint, decode as decode_checkpoint, encode as encode_checkpoint, load_into as load_checkpoint,
    save as save_checkpoint, CheckpointEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use graph::{softmax_slice, Graph, TensorNode, Var};
pub use mlp::{forward_mlp, Activation, Linear, Mlp};
pub use optim::{adam_step, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use params::{truncated_normal, GroupName, ParamGroup, ParamId, ParamStore, Parameter, INIT_STD};
pub use tensor::Tensor;

use crate::error::{Result, SarlError};

/// Floor applied to probabilities before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Row-wise softmax. Each row of the output sums to one.
pub fn softmax(g: &mut Graph, logits: Var) -> Var {
    g.softmax_rows(logits)
}

/// `-ln p[class]` for a single distribution (one row).
pub fn nll_pick(g: &mut Graph, probs: Var, class_index: usize) -> Result<Var> {
    let (rows, cols) = g.shape(probs);
    if rows != 1 {
        return Err(SarlError::shape("nll_pick", &[rows, cols], &[1, cols]));
    }
    if class_index >= cols {
        return Err(SarlError::IndexOutOfRange {
            index: class_index,
            len: cols,
        });
    }
    let p = g.element(probs, class_index)?;
    let lp = g.log_clamped(p, PROB_FLOOR);
    Ok(g.neg(lp))
}

/// `sum_i -ln probs[i, classes[i]]` over the rows of `probs`.
pub fn nll_rows(g: &mut Graph, probs: Var, classes: &[usize]) -> Result<Var> {
    let (rows, cols) = g.shape(probs);
    if classes.len() != rows {
        return Err(SarlError::shape("nll_rows", &[rows, cols], &[classes.len()]));
    }
    let mut picked = Vec::with_capacity(rows);
    for (r, &c) in classes.iter().enumerate() {
        if c >= cols {
            return Err(SarlError::IndexOutOfRange { index: c, len: cols });
        }
        picked.push(g.element(probs, r * cols + c)?);
    }
    let stacked = g.concat_rows(&picked)?;
    let logs = g.log_clamped(stacked, PROB_FLOOR);
    let total = g.sum(logs);
    Ok(g.neg(total))
}

/// Per-row `KL(teacher || student)` as an `m x 1` column.
///
/// `teacher` is a constant target (no gradient flows into it); student
/// probabilities are clamped at [`PROB_FLOOR`] before the logarithm.
pub fn kl_rows(g: &mut Graph, teacher: &Tensor, student: Var) -> Result<Var> {
    let (m, n) = g.shape(student);
    if teacher.dims2() != (m, n) {
        return Err(SarlError::shape("kl_divergence", teacher.shape(), &[m, n]));
    }
    if teacher.data().iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return Err(SarlError::Contract("teacher distribution has negative entries".into()));
    }
    if g.value(student).data().iter().any(|&q| q < 0.0) {
        return Err(SarlError::Contract("student distribution has negative entries".into()));
    }
    let neg_entropy: Vec<f64> = teacher
        .data()
        .chunks(n)
        .map(|row| row.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum())
        .collect();
    let p = g.constant(teacher.clone());
    let log_q = g.log_clamped(student, PROB_FLOOR);
    let cross = g.mul(p, log_q)?;
    let ones = g.constant(Tensor::filled(n, 1, 1.0));
    let cross_rows = g.matmul(cross, ones)?;
    let ent = g.constant(Tensor::from_parts_unchecked(m, 1, neg_entropy));
    g.sub(ent, cross_rows)
}

/// `KL(teacher || student)` summed over rows.
pub fn kl_divergence(g: &mut Graph, teacher: &Tensor, student: Var) -> Result<Var> {
    let rows = kl_rows(g, teacher, student)?;
    Ok(g.sum(rows))
}
