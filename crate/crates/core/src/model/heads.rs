//! Task heads that sit on top of the shared per-token trunk.

use candle_core::{Tensor, D};
use rand_chacha::ChaCha8Rng;

use super::config::{HeadKind, HeadSpec};
use super::layers::Linear;
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Reads the trunk state at the sequence-start (`[CLS]`) position.
#[derive(Debug, Clone)]
pub struct LinearHead {
    out: Linear,
}

/// Length-dimension convolutions with max-over-time pooling.
#[derive(Debug, Clone)]
pub struct CnnHead {
    convs: Vec<(usize, Linear)>,
    out: Linear,
}

/// Per-token projection to the vocabulary.
#[derive(Debug, Clone)]
pub struct MlmHead {
    decoder: Linear,
}

#[derive(Debug, Clone)]
pub enum Head {
    Linear(LinearHead),
    Cnn(CnnHead),
    Mlm(MlmHead),
}

impl Head {
    pub(crate) fn new(spec: &HeadSpec, width: usize, std: f64, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        let prefix = format!("heads.{}", spec.task_name);
        Ok(match spec.kind {
            HeadKind::Linear => Head::Linear(LinearHead {
                out: Linear::new(store, &format!("{prefix}.out"), width, spec.num_classes, std, rng)?,
            }),
            HeadKind::Cnn => {
                let f = spec.cnn_filters_per_window;
                let mut convs = Vec::with_capacity(spec.cnn_window_sizes.len());
                for &w in &spec.cnn_window_sizes {
                    convs.push((w, Linear::new(store, &format!("{prefix}.conv{w}"), w * width, f, std, rng)?));
                }
                let pooled = f * convs.len();
                Head::Cnn(CnnHead {
                    convs,
                    out: Linear::new(store, &format!("{prefix}.out"), pooled, spec.num_classes, std, rng)?,
                })
            }
            HeadKind::Mlm => Head::Mlm(MlmHead {
                decoder: Linear::new(store, &format!("{prefix}.decoder"), width, spec.num_classes, std, rng)?,
            }),
        })
    }

    pub fn kind(&self) -> HeadKind {
        match self {
            Head::Linear(_) => HeadKind::Linear,
            Head::Cnn(_) => HeadKind::Cnn,
            Head::Mlm(_) => HeadKind::Mlm,
        }
    }
}

impl LinearHead {
    /// `trunk`: `[b, l, h]` → `[b, classes]`.
    pub fn forward(&self, trunk: &Tensor) -> Result<Tensor> {
        let cls = trunk.narrow(1, 0, 1)?.squeeze(1)?;
        self.out.forward(&cls)
    }
}

impl CnnHead {
    pub fn max_window(&self) -> usize {
        self.convs.iter().map(|(w, _)| *w).max().unwrap_or(1)
    }

    /// Width of the pooled feature vector fed to the output map.
    pub fn pooled_width(&self) -> usize {
        self.convs.iter().map(|(_, c)| c.out_features()).sum()
    }

    /// Concatenated max-pooled features, `[b, pooled_width]`.
    ///
    /// Padded positions are zeroed before convolving and sequences shorter
    /// than the largest window are zero-padded up to it. A window counts
    /// only if it lies fully inside the valid tokens, or if it is the first
    /// window of a sequence shorter than the window.
    pub fn features(&self, trunk: &Tensor, attention_mask: &Tensor) -> Result<Tensor> {
        let (b, l, h) = trunk.dims3()?;
        let mask = attention_mask.to_dtype(trunk.dtype())?;
        let mut x = trunk.broadcast_mul(&mask.unsqueeze(D::Minus1)?)?;
        let width = l.max(self.max_window());
        if width > l {
            let pad = Tensor::zeros((b, width - l, h), x.dtype(), x.device())?;
            x = Tensor::cat(&[&x, &pad], 1)?;
        }
        let lengths: Vec<usize> = crate::ops::to_f64_vec(&mask.sum(1)?)?
            .into_iter()
            .map(|v| v.round() as usize)
            .collect();
        let mut pooled = Vec::with_capacity(self.convs.len());
        for (w, conv) in &self.convs {
            let positions = width - w + 1;
            let shifted: Vec<Tensor> = (0..*w).map(|k| x.narrow(1, k, positions)).collect::<candle_core::Result<_>>()?;
            let windows = Tensor::cat(&shifted, D::Minus1)?;
            let act = conv.forward(&windows)?.relu()?;
            let mut valid = Vec::with_capacity(b * positions);
            for &len in &lengths {
                for s in 0..positions {
                    let ok = s + w <= len || (s == 0 && len < *w);
                    valid.push(if ok { 1.0 } else { 0.0 });
                }
            }
            let valid = Tensor::from_vec(valid, (b, positions, 1), x.device())?.to_dtype(x.dtype())?;
            // activations are ≥ 0 after ReLU, so zeroing never beats a valid max
            pooled.push(act.broadcast_mul(&valid)?.max(1)?);
        }
        Ok(Tensor::cat(&pooled, D::Minus1)?)
    }

    pub fn forward(&self, trunk: &Tensor, attention_mask: &Tensor) -> Result<Tensor> {
        self.out.forward(&self.features(trunk, attention_mask)?)
    }
}

impl MlmHead {
    /// Logits at the given flat row indices (`b * l + position`) of `trunk`.
    pub fn forward_at(&self, trunk: &Tensor, flat_rows: &[u32]) -> Result<Tensor> {
        let (b, l, h) = trunk.dims3()?;
        if let Some(&bad) = flat_rows.iter().find(|&&r| r as usize >= b * l) {
            return Err(Error::Contract(format!("mlm position {bad} outside a {b}x{l} batch")));
        }
        let idx = Tensor::from_vec(flat_rows.to_vec(), flat_rows.len(), trunk.device())?;
        let rows = trunk.reshape((b * l, h))?.index_select(&idx, 0)?;
        self.decoder.forward(&rows)
    }
}
