//! Encoder, shared trunk, and task heads (linear, CNN, MLM).

mod config;
mod encoder;
mod heads;
mod layers;
mod params;
mod tokenizer;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{
    parse_device, EncoderArchitecture, EncoderHandle, HeadKind, HeadSpec, MultitaskModelConfig, Precision,
    TINY_ENCODER,
};
pub use encoder::Encoder;
pub use heads::{CnnHead, Head, LinearHead, MlmHead};
pub use layers::{Embedding, LayerNorm, Linear};
pub use params::{Init, ParamStore};
pub use tokenizer::{Batch, SpecialTokens, TextTokenizer, WordVocab, CLS, MASK, PAD, SEP, UNK};

use crate::error::{Error, Result};
use crate::objectives::{MaskingPlan, IGNORE_INDEX};

/// Inference (no dropout) or training with a dropout stream.
#[derive(Debug, Clone)]
pub enum Mode {
    Eval,
    Train(ChaCha8Rng),
}

impl Mode {
    pub fn train(seed: u64) -> Self {
        Mode::Train(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }

    pub fn dropout(&mut self, x: &Tensor, p: f64) -> Result<Tensor> {
        match self {
            Mode::Eval => Ok(x.clone()),
            Mode::Train(rng) => crate::ops::dropout(x, p, rng),
        }
    }
}

/// MLM logits at plan-selected positions only.
#[derive(Debug, Clone)]
pub struct MlmOutput {
    /// `[selected, vocab]`, absent when nothing was selected.
    pub logits: Option<Tensor>,
    /// `(row, position)` of each logit row.
    pub positions: Vec<(usize, usize)>,
    /// Target ids aligned with `positions`.
    pub labels: Vec<i64>,
    pub batch_size: usize,
    pub width: usize,
}

impl MlmOutput {
    /// `[b][l]` labels with [`IGNORE_INDEX`] at unselected positions.
    pub fn dense_labels(&self) -> Vec<Vec<i64>> {
        let mut out = vec![vec![IGNORE_INDEX; self.width]; self.batch_size];
        for (&(r, p), &l) in self.positions.iter().zip(&self.labels) {
            out[r][p] = l;
        }
        out
    }
}

/// Encoder → per-token linear → layer norm → heads.
#[derive(Debug)]
pub struct MultitaskModel {
    config: MultitaskModelConfig,
    store: ParamStore,
    encoder: Encoder,
    trunk_dense: Linear,
    trunk_norm: LayerNorm,
    heads: BTreeMap<String, Head>,
    trunk_calls: AtomicUsize,
}

const PRETRAINED_FILE: &str = "model.safetensors";

impl MultitaskModel {
    /// Builds the model with parameters drawn from `seed`, then overlays
    /// the encoder checkpoint if the config names one.
    pub fn build(config: &MultitaskModelConfig, device: &Device, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new(device.clone(), config.precision.dtype());
        let enc = &config.encoder;
        let std = enc.architecture.initializer_range;
        let encoder = Encoder::new(enc, &mut store, &mut rng)?;
        let width = config.trunk_width();
        let trunk_dense = Linear::new(&mut store, "trunk.dense", enc.hidden_size, width, std, &mut rng)?;
        let trunk_norm = LayerNorm::new(&mut store, "trunk.LayerNorm", width, enc.architecture.layer_norm_eps, &mut rng)?;
        let mut heads = BTreeMap::new();
        for spec in &config.heads {
            heads.insert(spec.task_name.clone(), Head::new(spec, width, std, &mut store, &mut rng)?);
        }
        let model = Self {
            config: config.clone(),
            store,
            encoder,
            trunk_dense,
            trunk_norm,
            heads,
            trunk_calls: AtomicUsize::new(0),
        };
        if let Some(dir) = &enc.checkpoint {
            model.load_pretrained_encoder(&dir.join(PRETRAINED_FILE))?;
        }
        log::info!(
            "built model `{}` with {} heads and {} parameters",
            enc.name,
            model.heads.len(),
            model.num_parameters()
        );
        Ok(model)
    }

    /// Fresh model with the same config and a copy of this model's θ.
    pub fn duplicate(&self) -> Result<Self> {
        let mut cfg = self.config.clone();
        cfg.encoder.checkpoint = None;
        let copy = Self::build(&cfg, self.store.device(), 0)?;
        copy.store.assign(&self.store.snapshot()?, true)?;
        Ok(copy.with_config(self.config.clone()))
    }

    /// Replaces the stored config (used to keep the original checkpoint
    /// reference after parameters were loaded by other means).
    pub(crate) fn with_config(self, config: MultitaskModelConfig) -> Self {
        Self { config, ..self }
    }

    pub fn config(&self) -> &MultitaskModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_parameters()
    }

    pub fn head(&self, task_name: &str) -> Result<&Head> {
        self.heads
            .get(task_name)
            .ok_or_else(|| Error::UnknownTask(task_name.to_owned()))
    }

    pub fn head_names(&self) -> impl Iterator<Item = &str> {
        self.heads.keys().map(String::as_str)
    }

    /// Names of the parameters owned by one head.
    pub fn head_parameter_names(&self, task_name: &str) -> Vec<String> {
        let prefix = format!("heads.{task_name}.");
        self.store.names().filter(|n| n.starts_with(&prefix)).map(str::to_owned).collect()
    }

    /// Number of trunk evaluations since construction.
    pub fn trunk_calls(&self) -> usize {
        self.trunk_calls.load(Ordering::Relaxed)
    }

    /// Output of the encoder's first embedding layer, `[b, l, hidden]`.
    pub fn embed_inputs(&self, batch: &Batch, mode: &mut Mode) -> Result<Tensor> {
        self.encoder.embed(&batch.ids, mode)
    }

    /// Trunk states `[b, l, trunk_width]` from embedding-layer output.
    pub fn trunk_from_embeddings(&self, embeddings: &Tensor, attention_mask: &Tensor, mode: &mut Mode) -> Result<Tensor> {
        self.trunk_calls.fetch_add(1, Ordering::Relaxed);
        let states = self.encoder.forward_embeddings(embeddings, attention_mask, mode)?;
        self.trunk_norm.forward(&self.trunk_dense.forward(&states)?)
    }

    pub fn trunk(&self, batch: &Batch, mode: &mut Mode) -> Result<Tensor> {
        let emb = self.embed_inputs(batch, mode)?;
        self.trunk_from_embeddings(&emb, &batch.attention_mask, mode)
    }

    /// Applies a classification head to precomputed trunk states.
    pub fn head_logits(&self, task_name: &str, trunk: &Tensor, attention_mask: &Tensor, mode: &mut Mode) -> Result<Tensor> {
        let head = self.head(task_name)?;
        let x = mode.dropout(trunk, self.config.trunk_dropout)?;
        match head {
            Head::Linear(h) => h.forward(&x),
            Head::Cnn(h) => h.forward(&x, attention_mask),
            Head::Mlm(_) => Err(Error::Contract(format!(
                "`{task_name}` is an mlm head; use forward_mlm"
            ))),
        }
    }

    /// `[b, classes]` logits for a linear or CNN head.
    pub fn forward_classification(&self, batch: &Batch, task_name: &str, mode: &mut Mode) -> Result<Tensor> {
        self.head(task_name)?;
        let trunk = self.trunk(batch, mode)?;
        self.head_logits(task_name, &trunk, &batch.attention_mask, mode)
    }

    pub fn forward_cnn_head(&self, batch: &Batch, task_name: &str, mode: &mut Mode) -> Result<Tensor> {
        if self.head(task_name)?.kind() != HeadKind::Cnn {
            return Err(Error::Contract(format!("`{task_name}` is not a cnn head")));
        }
        self.forward_classification(batch, task_name, mode)
    }

    pub fn forward_from_embeddings(
        &self,
        embeddings: &Tensor,
        attention_mask: &Tensor,
        task_name: &str,
        mode: &mut Mode,
    ) -> Result<Tensor> {
        self.head(task_name)?;
        let trunk = self.trunk_from_embeddings(embeddings, attention_mask, mode)?;
        self.head_logits(task_name, &trunk, attention_mask, mode)
    }

    /// Logits for several heads from a single trunk evaluation.
    pub fn forward_tasks(
        &self,
        embeddings: &Tensor,
        attention_mask: &Tensor,
        tasks: &[&str],
        mode: &mut Mode,
    ) -> Result<BTreeMap<String, Tensor>> {
        for t in tasks {
            self.head(t)?;
        }
        let trunk = self.trunk_from_embeddings(embeddings, attention_mask, mode)?;
        tasks
            .iter()
            .map(|&t| Ok((t.to_owned(), self.head_logits(t, &trunk, attention_mask, mode)?)))
            .collect()
    }

    /// MLM logits on a corrupted batch at the positions chosen by `plan`.
    pub fn forward_mlm(&self, corrupted: &Batch, plan: Option<&MaskingPlan>, mode: &mut Mode) -> Result<MlmOutput> {
        let plan = plan.ok_or_else(|| Error::Contract("forward_mlm needs a masking plan".into()))?;
        let head = match self.heads.values().find(|h| h.kind() == HeadKind::Mlm) {
            Some(Head::Mlm(h)) => h,
            _ => return Err(Error::Contract("model has no mlm head".into())),
        };
        if plan.sequences.len() != corrupted.size() {
            return Err(Error::Contract("masking plan and batch differ in size".into()));
        }
        let positions = plan.flat_positions();
        let labels = plan.flat_labels();
        let (b, l) = (corrupted.size(), corrupted.width());
        let logits = if positions.is_empty() {
            None
        } else {
            let trunk = self.trunk(corrupted, mode)?;
            let x = mode.dropout(&trunk, self.config.trunk_dropout)?;
            let rows: Vec<u32> = positions.iter().map(|&(r, p)| (r * l + p) as u32).collect();
            Some(head.forward_at(&x, &rows)?)
        };
        Ok(MlmOutput {
            logits,
            positions,
            labels,
            batch_size: b,
            width: l,
        })
    }

    /// Loads encoder weights from a BERT / RoBERTa / ELECTRA safetensors
    /// archive. Non-encoder tensors (poolers, pretraining heads) are skipped.
    pub fn load_pretrained_encoder(&self, path: &Path) -> Result<()> {
        if !path.is_file() {
            return Err(Error::Build {
                layer: "encoder".into(),
                message: format!("checkpoint {} not found", path.display()),
            });
        }
        let raw = candle_core::safetensors::load(path, self.device())?;
        let mut mapped = HashMap::new();
        for (name, tensor) in raw {
            if let Some(ours) = map_pretrained_name(&name) {
                if self.store.get(&ours).is_some() {
                    mapped.insert(ours, tensor);
                }
            }
        }
        for name in self.store.names().filter(|n| n.starts_with("bert.")) {
            if !mapped.contains_key(name) {
                return Err(Error::Build {
                    layer: name.to_owned(),
                    message: format!("missing from {}", path.display()),
                });
            }
        }
        self.store.assign(&mapped, false)
    }

    pub fn save_parameters(&self, path: &Path) -> Result<()> {
        self.store.save(path)
    }

    pub fn load_parameters(&self, path: &Path) -> Result<()> {
        self.store.load(path, true)
    }
}

/// Maps checkpoint tensor names onto the `bert.` layout used here.
fn map_pretrained_name(name: &str) -> Option<String> {
    let body = ["bert.", "roberta.", "electra.", "model.", "xlm_roberta."]
        .iter()
        .find_map(|p| name.strip_prefix(p))
        .unwrap_or(name);
    if !(body.starts_with("embeddings.") || body.starts_with("encoder.")) {
        return None;
    }
    let body = body
        .strip_suffix(".gamma")
        .map(|s| format!("{s}.weight"))
        .or_else(|| body.strip_suffix(".beta").map(|s| format!("{s}.bias")))
        .unwrap_or_else(|| body.to_owned());
    Some(format!("bert.{body}"))
}

#[cfg(test)]
mod tests;
