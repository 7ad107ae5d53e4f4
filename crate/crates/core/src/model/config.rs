use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device};
use serde::{Deserialize, Serialize};

use crate::corpus::Task;
use crate::error::{Error, Result};

/// Transformer dimensions of an encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderArchitecture {
    pub num_layers: usize,
    pub num_heads: usize,
    pub intermediate_size: usize,
    #[serde(default = "default_type_vocab")]
    pub type_vocab_size: usize,
    #[serde(default = "default_ln_eps")]
    pub layer_norm_eps: f64,
    #[serde(default = "default_dropout")]
    pub hidden_dropout: f64,
    #[serde(default = "default_dropout")]
    pub attention_dropout: f64,
    /// First position id. RoBERTa-family checkpoints start at `pad_id + 1`.
    #[serde(default)]
    pub position_offset: usize,
    #[serde(default = "default_init_std")]
    pub initializer_range: f64,
}

fn default_type_vocab() -> usize {
    2
}
fn default_ln_eps() -> f64 {
    1e-12
}
fn default_dropout() -> f64 {
    0.1
}
fn default_init_std() -> f64 {
    0.02
}

/// Reference to the encoder f(·, θ): its shape, special ids, and an
/// optional pretrained checkpoint directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderHandle {
    pub name: String,
    pub hidden_size: usize,
    pub vocab_size: usize,
    pub max_length: usize,
    pub mask_token_id: u32,
    pub special_token_ids: Vec<u32>,
    pub architecture: EncoderArchitecture,
    /// Directory holding `model.safetensors` (+ `config.json`, `tokenizer.json`).
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

pub const TINY_ENCODER: &str = "tiny-random";

impl EncoderHandle {
    /// Randomly initialized 2-layer, 32-wide encoder for offline tests.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            name: TINY_ENCODER.into(),
            hidden_size: 32,
            vocab_size,
            max_length: 256,
            mask_token_id: 4,
            special_token_ids: vec![0, 1, 2, 3, 4],
            architecture: EncoderArchitecture {
                num_layers: 2,
                num_heads: 2,
                intermediate_size: 64,
                type_vocab_size: 2,
                layer_norm_eps: 1e-12,
                hidden_dropout: 0.1,
                attention_dropout: 0.1,
                position_offset: 0,
                initializer_range: 0.02,
            },
            checkpoint: None,
        }
    }

    /// Reads a BERT / RoBERTa style `config.json` from a checkpoint directory.
    pub fn from_pretrained_dir(dir: &Path, name: &str) -> Result<Self> {
        let path = dir.join("config.json");
        let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let cfg: HfConfig = serde_json::from_str(&raw)?;
        let roberta_like = matches!(cfg.model_type.as_deref(), Some("roberta" | "xlm-roberta" | "camembert"));
        let pad = cfg.pad_token_id.unwrap_or(if roberta_like { 1 } else { 0 });
        let tokenizer = super::tokenizer::TextTokenizer::from_pretrained_file(&dir.join("tokenizer.json"))?;
        let special = tokenizer.special();
        Ok(Self {
            name: name.to_owned(),
            hidden_size: cfg.hidden_size,
            vocab_size: cfg.vocab_size,
            max_length: cfg.max_position_embeddings.saturating_sub(if roberta_like { pad as usize + 1 } else { 0 }),
            mask_token_id: special.mask,
            special_token_ids: special.all(),
            architecture: EncoderArchitecture {
                num_layers: cfg.num_hidden_layers,
                num_heads: cfg.num_attention_heads,
                intermediate_size: cfg.intermediate_size,
                type_vocab_size: cfg.type_vocab_size.unwrap_or(2),
                layer_norm_eps: cfg.layer_norm_eps.unwrap_or(1e-12),
                hidden_dropout: cfg.hidden_dropout_prob.unwrap_or(0.1),
                attention_dropout: cfg.attention_probs_dropout_prob.unwrap_or(0.1),
                position_offset: if roberta_like { pad as usize + 1 } else { 0 },
                initializer_range: cfg.initializer_range.unwrap_or(0.02),
            },
            checkpoint: Some(dir.to_path_buf()),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.vocab_size == 0 || self.max_length == 0 {
            return Err(Error::config("encoder", "hidden_size, vocab_size and max_length must be positive"));
        }
        if self.mask_token_id as usize >= self.vocab_size {
            return Err(Error::config("encoder.mask_token_id", "must be below vocab_size"));
        }
        if self.architecture.num_heads == 0 || self.hidden_size % self.architecture.num_heads != 0 {
            return Err(Error::config("encoder.architecture.num_heads", "must divide hidden_size"));
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct HfConfig {
    model_type: Option<String>,
    hidden_size: usize,
    vocab_size: usize,
    num_hidden_layers: usize,
    num_attention_heads: usize,
    intermediate_size: usize,
    max_position_embeddings: usize,
    type_vocab_size: Option<usize>,
    layer_norm_eps: Option<f64>,
    hidden_dropout_prob: Option<f64>,
    attention_probs_dropout_prob: Option<f64>,
    pad_token_id: Option<u32>,
    initializer_range: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Linear,
    Cnn,
    Mlm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub task_name: String,
    pub kind: HeadKind,
    pub num_classes: usize,
    #[serde(default = "default_windows")]
    pub cnn_window_sizes: Vec<usize>,
    #[serde(default = "default_filters")]
    pub cnn_filters_per_window: usize,
}

fn default_windows() -> Vec<usize> {
    vec![2, 3, 4]
}
fn default_filters() -> usize {
    128
}

impl HeadSpec {
    pub fn linear(task: Task) -> Self {
        Self {
            task_name: task.as_str().into(),
            kind: HeadKind::Linear,
            num_classes: task.num_classes(),
            cnn_window_sizes: default_windows(),
            cnn_filters_per_window: default_filters(),
        }
    }

    pub fn cnn(task: Task) -> Self {
        Self {
            kind: HeadKind::Cnn,
            ..Self::linear(task)
        }
    }

    pub fn mlm(vocab_size: usize) -> Self {
        Self {
            task_name: "mlm".into(),
            kind: HeadKind::Mlm,
            num_classes: vocab_size,
            cnn_window_sizes: default_windows(),
            cnn_filters_per_window: default_filters(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

/// Encoder, shared trunk, and task heads in data form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultitaskModelConfig {
    pub encoder: EncoderHandle,
    /// Width of the trunk projection; defaults to the encoder width.
    #[serde(default)]
    pub trunk_hidden: Option<usize>,
    #[serde(default = "default_dropout")]
    pub trunk_dropout: f64,
    pub heads: Vec<HeadSpec>,
    #[serde(default = "default_precision")]
    pub precision: Precision,
}

fn default_precision() -> Precision {
    Precision::F32
}

impl MultitaskModelConfig {
    /// Tiny encoder with one linear head per task (plus MLM when asked).
    pub fn tiny(vocab_size: usize, tasks: &[Task], mlm: bool) -> Self {
        let mut heads: Vec<HeadSpec> = tasks.iter().map(|&t| HeadSpec::linear(t)).collect();
        if mlm {
            heads.push(HeadSpec::mlm(vocab_size));
        }
        Self {
            encoder: EncoderHandle::tiny(vocab_size),
            trunk_hidden: None,
            trunk_dropout: 0.1,
            heads,
            precision: Precision::F64,
        }
    }

    pub fn trunk_width(&self) -> usize {
        self.trunk_hidden.unwrap_or(self.encoder.hidden_size)
    }

    pub fn head(&self, task_name: &str) -> Option<&HeadSpec> {
        self.heads.iter().find(|h| h.task_name == task_name)
    }

    pub fn mlm_head(&self) -> Option<&HeadSpec> {
        self.heads.iter().find(|h| h.kind == HeadKind::Mlm)
    }

    pub fn classification_heads(&self) -> impl Iterator<Item = &HeadSpec> {
        self.heads.iter().filter(|h| h.kind != HeadKind::Mlm)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.heads.is_empty() || self.heads.len() > 3 {
            return Err(Error::config("heads", format!("expected 1 to 3 heads, got {}", self.heads.len())));
        }
        let mut names = HashSet::new();
        for h in &self.heads {
            if !names.insert(h.task_name.as_str()) {
                return Err(Error::config("heads", format!("duplicate task_name `{}`", h.task_name)));
            }
            if h.num_classes == 0 {
                return Err(Error::config("heads.num_classes", "must be positive"));
            }
            if let Some(task) = Task::parse(&h.task_name) {
                if h.kind != HeadKind::Mlm && h.num_classes != task.num_classes() {
                    return Err(Error::config(
                        "heads.num_classes",
                        format!("{} head needs {} classes, got {}", task, task.num_classes(), h.num_classes),
                    ));
                }
            }
            match h.kind {
                HeadKind::Mlm if h.num_classes != self.encoder.vocab_size => {
                    return Err(Error::config("heads.num_classes", "mlm head width must equal vocab_size"));
                }
                HeadKind::Cnn if h.cnn_window_sizes.is_empty() || h.cnn_window_sizes.contains(&0) || h.cnn_filters_per_window == 0 => {
                    return Err(Error::config("heads.cnn", "cnn heads need positive windows and filters"));
                }
                _ => {}
            }
        }
        if self.heads.iter().filter(|h| h.kind == HeadKind::Mlm).count() > 1 {
            return Err(Error::config("heads", "at most one mlm head"));
        }
        if !(0.0..1.0).contains(&self.trunk_dropout) {
            return Err(Error::config("trunk_dropout", "must lie in [0, 1)"));
        }
        if self.trunk_hidden == Some(0) {
            return Err(Error::config("trunk_hidden", "must be positive"));
        }
        Ok(())
    }
}

/// Parses `cpu`, `cuda`, or `cuda:N`.
pub fn parse_device(descriptor: &str) -> Result<Device> {
    let d = descriptor.trim().to_ascii_lowercase();
    if d == "cpu" {
        return Ok(Device::Cpu);
    }
    let ordinal = match d.as_str() {
        "cuda" | "gpu" => 0,
        _ => d
            .strip_prefix("cuda:")
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| Error::config("device", format!("unknown device `{descriptor}`")))?,
    };
    Device::new_cuda(ordinal).map_err(|e| Error::config("device", e.to_string()))
}
