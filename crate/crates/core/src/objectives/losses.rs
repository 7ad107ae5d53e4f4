use candle_core::{Tensor, D};

use super::masking::IGNORE_INDEX;
use crate::error::{Error, Result};
use crate::ops::{log_softmax_last, softmax_last};

/// Mean negative log-likelihood over the non-ignored rows of `logits`
/// (`[n, classes]`). Zero (still attached to the graph) when every label
/// is ignored.
pub fn cross_entropy(logits: &Tensor, labels: &[i64]) -> Result<Tensor> {
    let (n, c) = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::Contract(format!("{} labels for {n} logit rows", labels.len())));
    }
    let mut onehot = vec![0.0f64; n * c];
    let mut count = 0usize;
    for (row, &label) in labels.iter().enumerate() {
        if label == IGNORE_INDEX {
            continue;
        }
        if label < 0 || label as usize >= c {
            return Err(Error::Contract(format!("label {label} outside [0, {c})")));
        }
        onehot[row * c + label as usize] = 1.0;
        count += 1;
    }
    let onehot = Tensor::from_vec(onehot, (n, c), logits.device())?.to_dtype(logits.dtype())?;
    let picked = log_softmax_last(logits)?.mul(&onehot)?.sum_all()?;
    Ok((picked.neg()? / count.max(1) as f64)?)
}

/// Mean over rows of KL(p‖q) + KL(q‖p) for row-wise softmaxes of the two
/// logit tensors, i.e. Σ (p − q)(log p − log q).
pub fn symmetrized_kl(logits_p: &Tensor, logits_q: &Tensor) -> Result<Tensor> {
    if logits_p.dims() != logits_q.dims() {
        return Err(Error::Contract(format!(
            "symmetrized_kl shapes differ: {:?} vs {:?}",
            logits_p.dims(),
            logits_q.dims()
        )));
    }
    let rows = logits_p.elem_count() / logits_p.dim(D::Minus1)?.max(1);
    let diff_p = softmax_last(logits_p)?.sub(&softmax_last(logits_q)?)?;
    let diff_log = log_softmax_last(logits_p)?.sub(&log_softmax_last(logits_q)?)?;
    Ok((diff_p.mul(&diff_log)?.sum_all()? / rows.max(1) as f64)?)
}
