use candle_core::{Tensor, D};
use rand_chacha::ChaCha8Rng;

use super::params::{Init, ParamStore};
use crate::error::Result;

/// Affine map with PyTorch weight layout `[out, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(store: &mut ParamStore, prefix: &str, input: usize, output: usize, std: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            weight: store.create(&format!("{prefix}.weight"), &[output, input], Init::Normal(std), rng)?,
            bias: store.create(&format!("{prefix}.bias"), &[output], Init::Zeros, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.broadcast_matmul(&self.weight.t()?)?;
        Ok(y.broadcast_add(&self.bias)?)
    }

    pub fn out_features(&self) -> usize {
        self.weight.dims()[0]
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, eps: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            weight: store.create(&format!("{prefix}.weight"), &[dim], Init::Ones, rng)?,
            bias: store.create(&format!("{prefix}.bias"), &[dim], Init::Zeros, rng)?,
            eps,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)?)
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    table: Tensor,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, rows: usize, dim: usize, std: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            table: store.create(name, &[rows, dim], Init::Normal(std), rng)?,
        })
    }

    /// `ids` of shape `[b, l]` → `[b, l, dim]`.
    pub fn forward(&self, ids: &Tensor) -> Result<Tensor> {
        let (b, l) = ids.dims2()?;
        let flat = ids.flatten_all()?;
        let rows = self.table.index_select(&flat, 0)?;
        Ok(rows.reshape((b, l, self.table.dims()[1]))?)
    }

    pub fn rows(&self) -> usize {
        self.table.dims()[0]
    }
}
