//! BERT-style bidirectional encoder whose forward pass can start from
//! token ids or from the embedding-layer output.

use candle_core::Tensor;
use rand_chacha::ChaCha8Rng;

use super::config::EncoderHandle;
use super::layers::{Embedding, LayerNorm, Linear};
use super::params::ParamStore;
use super::Mode;
use crate::error::{Error, Result};
use crate::ops::softmax_last;

#[derive(Debug, Clone)]
struct Embeddings {
    word: Embedding,
    position: Embedding,
    token_type: Embedding,
    norm: LayerNorm,
    dropout: f64,
    position_offset: usize,
}

impl Embeddings {
    fn forward(&self, ids: &Tensor, mode: &mut Mode) -> Result<Tensor> {
        let (b, l) = ids.dims2()?;
        if l + self.position_offset > self.position.rows() {
            return Err(Error::Contract(format!(
                "sequence length {l} exceeds the encoder's {} positions",
                self.position.rows() - self.position_offset
            )));
        }
        let device = ids.device();
        let pos: Vec<u32> = (0..l).map(|p| (p + self.position_offset) as u32).collect();
        let pos = Tensor::from_vec(pos, (1, l), device)?;
        let types = Tensor::zeros((1, l), candle_core::DType::U32, device)?;
        let words = self.word.forward(ids)?;
        let x = words
            .broadcast_add(&self.position.forward(&pos)?)?
            .broadcast_add(&self.token_type.forward(&types)?)?;
        debug_assert_eq!(x.dims()[0], b);
        mode.dropout(&self.norm.forward(&x)?, self.dropout)
    }
}

#[derive(Debug, Clone)]
struct Layer {
    query: Linear,
    key: Linear,
    value: Linear,
    attn_out: Linear,
    attn_norm: LayerNorm,
    intermediate: Linear,
    output: Linear,
    out_norm: LayerNorm,
    heads: usize,
    hidden_dropout: f64,
    attention_dropout: f64,
}

impl Layer {
    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (b, l, h) = x.dims3()?;
        Ok(x.reshape((b, l, self.heads, h / self.heads))?.transpose(1, 2)?.contiguous()?)
    }

    fn forward(&self, x: &Tensor, mask_bias: &Tensor, mode: &mut Mode) -> Result<Tensor> {
        let (b, l, h) = x.dims3()?;
        let head_dim = h / self.heads;
        let q = self.split_heads(&self.query.forward(x)?)?;
        let k = self.split_heads(&self.key.forward(x)?)?;
        let v = self.split_heads(&self.value.forward(x)?)?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? / (head_dim as f64).sqrt())?;
        let probs = softmax_last(&scores.broadcast_add(mask_bias)?)?;
        let probs = mode.dropout(&probs, self.attention_dropout)?;
        let ctx = probs.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, l, h))?;
        let attn = mode.dropout(&self.attn_out.forward(&ctx)?, self.hidden_dropout)?;
        let x = self.attn_norm.forward(&(attn + x)?)?;
        let inter = self.intermediate.forward(&x)?.gelu_erf()?;
        let out = mode.dropout(&self.output.forward(&inter)?, self.hidden_dropout)?;
        self.out_norm.forward(&(out + x)?)
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    embeddings: Embeddings,
    layers: Vec<Layer>,
}

impl Encoder {
    pub(crate) fn new(handle: &EncoderHandle, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        let arch = &handle.architecture;
        let h = handle.hidden_size;
        let std = arch.initializer_range;
        let eps = arch.layer_norm_eps;
        let embeddings = Embeddings {
            word: Embedding::new(store, "bert.embeddings.word_embeddings.weight", handle.vocab_size, h, std, rng)?,
            position: Embedding::new(
                store,
                "bert.embeddings.position_embeddings.weight",
                handle.max_length + arch.position_offset,
                h,
                std,
                rng,
            )?,
            token_type: Embedding::new(
                store,
                "bert.embeddings.token_type_embeddings.weight",
                arch.type_vocab_size.max(1),
                h,
                std,
                rng,
            )?,
            norm: LayerNorm::new(store, "bert.embeddings.LayerNorm", h, eps, rng)?,
            dropout: arch.hidden_dropout,
            position_offset: arch.position_offset,
        };
        let mut layers = Vec::with_capacity(arch.num_layers);
        for i in 0..arch.num_layers {
            let p = format!("bert.encoder.layer.{i}");
            layers.push(Layer {
                query: Linear::new(store, &format!("{p}.attention.self.query"), h, h, std, rng)?,
                key: Linear::new(store, &format!("{p}.attention.self.key"), h, h, std, rng)?,
                value: Linear::new(store, &format!("{p}.attention.self.value"), h, h, std, rng)?,
                attn_out: Linear::new(store, &format!("{p}.attention.output.dense"), h, h, std, rng)?,
                attn_norm: LayerNorm::new(store, &format!("{p}.attention.output.LayerNorm"), h, eps, rng)?,
                intermediate: Linear::new(store, &format!("{p}.intermediate.dense"), h, arch.intermediate_size, std, rng)?,
                output: Linear::new(store, &format!("{p}.output.dense"), arch.intermediate_size, h, std, rng)?,
                out_norm: LayerNorm::new(store, &format!("{p}.output.LayerNorm"), h, eps, rng)?,
                heads: arch.num_heads,
                hidden_dropout: arch.hidden_dropout,
                attention_dropout: arch.attention_dropout,
            });
        }
        Ok(Self { embeddings, layers })
    }

    /// Output of the embedding layer (word + position + type, normalized).
    pub fn embed(&self, ids: &Tensor, mode: &mut Mode) -> Result<Tensor> {
        self.embeddings.forward(ids, mode)
    }

    /// Runs the transformer stack on embedding-layer output.
    pub fn forward_embeddings(&self, embeddings: &Tensor, attention_mask: &Tensor, mode: &mut Mode) -> Result<Tensor> {
        let (b, l) = attention_mask.dims2()?;
        // 0 where attended, -1e9 where padded; shape [b, 1, 1, l]
        let bias = ((attention_mask - 1.0)? * 1e9)?.reshape((b, 1, 1, l))?;
        let mut x = embeddings.clone();
        for layer in &self.layers {
            x = layer.forward(&x, &bias, mode)?;
        }
        Ok(x)
    }
}
