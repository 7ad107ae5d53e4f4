use std::path::Path;

use candle_core::Device;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledExample, Task};
use crate::error::{Error, Result};
use crate::model::{
    EncoderHandle, HeadKind, HeadSpec, MultitaskModel, MultitaskModelConfig, Precision, TextTokenizer, WordVocab,
    TINY_ENCODER,
};

/// How to assemble a model and tokenizer for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelRecipe {
    /// `tiny-random`, or a directory with `config.json`,
    /// `model.safetensors` and `tokenizer.json`.
    pub encoder: String,
    /// Head type for the classification tasks.
    pub head_kind: HeadKind,
    pub precision: Option<Precision>,
    /// Vocabulary cap of the word-level tokenizer used by `tiny-random`.
    pub tiny_vocab_size: usize,
    pub trunk_hidden: Option<usize>,
    pub trunk_dropout: f64,
    pub cnn_window_sizes: Vec<usize>,
    pub cnn_filters_per_window: usize,
}

impl Default for ModelRecipe {
    fn default() -> Self {
        Self {
            encoder: TINY_ENCODER.into(),
            head_kind: HeadKind::Linear,
            precision: None,
            tiny_vocab_size: 1000,
            trunk_hidden: None,
            trunk_dropout: 0.1,
            cnn_window_sizes: vec![2, 3, 4],
            cnn_filters_per_window: 128,
        }
    }
}

impl ModelRecipe {
    pub fn tiny() -> Self {
        Self::default()
    }

    /// Display name for result tables, e.g. `phobert-base-v2-CNN`.
    pub fn label(&self) -> String {
        let base = Path::new(&self.encoder)
            .file_name()
            .map_or(self.encoder.clone(), |n| n.to_string_lossy().into_owned());
        match self.head_kind {
            HeadKind::Cnn => format!("{base}-CNN"),
            _ => base,
        }
    }

    pub fn is_tiny(&self) -> bool {
        self.encoder == TINY_ENCODER
    }

    /// Model config plus tokenizer; the tiny encoder's word vocabulary is
    /// built from `train`.
    pub fn prepare(&self, tasks: &[Task], use_mlm: bool, train: &[LabeledExample]) -> Result<(MultitaskModelConfig, TextTokenizer)> {
        if self.head_kind == HeadKind::Mlm {
            return Err(Error::config("head_kind", "classification heads must be linear or cnn"));
        }
        let (encoder, tokenizer, default_precision) = if self.is_tiny() {
            let vocab = WordVocab::build(train.iter().map(|e| e.text.as_str()), self.tiny_vocab_size);
            (EncoderHandle::tiny(vocab.len()), TextTokenizer::Word(vocab), Precision::F64)
        } else {
            let dir = Path::new(&self.encoder);
            let name = dir.file_name().map_or(self.encoder.clone(), |n| n.to_string_lossy().into_owned());
            let handle = EncoderHandle::from_pretrained_dir(dir, &name)?;
            let tok = TextTokenizer::from_pretrained_file(&dir.join("tokenizer.json"))?;
            (handle, tok, Precision::F32)
        };
        let mut heads: Vec<HeadSpec> = tasks
            .iter()
            .map(|&t| {
                let mut h = HeadSpec::linear(t);
                h.kind = self.head_kind;
                h.cnn_window_sizes = self.cnn_window_sizes.clone();
                h.cnn_filters_per_window = self.cnn_filters_per_window;
                h
            })
            .collect();
        if use_mlm {
            heads.push(HeadSpec::mlm(encoder.vocab_size));
        }
        let config = MultitaskModelConfig {
            encoder,
            trunk_hidden: self.trunk_hidden,
            trunk_dropout: self.trunk_dropout,
            heads,
            precision: self.precision.unwrap_or(default_precision),
        };
        config.validate()?;
        Ok((config, tokenizer))
    }

    pub fn build(
        &self,
        tasks: &[Task],
        use_mlm: bool,
        train: &[LabeledExample],
        device: &Device,
        seed: u64,
    ) -> Result<(MultitaskModel, TextTokenizer)> {
        let (config, tokenizer) = self.prepare(tasks, use_mlm, train)?;
        Ok((MultitaskModel::build(&config, device, seed)?, tokenizer))
    }
}
