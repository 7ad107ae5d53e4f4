use std::collections::HashMap;
use std::fs;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::corpus::vocabulary_tokens;
use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokens {
    pub pad: u32,
    pub unk: u32,
    pub cls: u32,
    pub sep: u32,
    pub mask: u32,
}

impl SpecialTokens {
    pub fn all(&self) -> Vec<u32> {
        let mut ids = vec![self.pad, self.unk, self.cls, self.sep, self.mask];
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Structural tokens that are never MLM targets.
    pub fn is_structural(&self, id: u32) -> bool {
        id == self.pad || id == self.cls || id == self.sep
    }
}

/// Word-level vocabulary over normalized whitespace tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordVocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl WordVocab {
    const SPECIALS: [&'static str; 5] = [PAD, UNK, CLS, SEP, MASK];

    /// Keeps the `max_size - 5` most frequent tokens; ties break
    /// lexicographically so the result is deterministic.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: usize) -> Self {
        let mut freq: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for tok in vocabulary_tokens(text) {
                *freq.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let room = max_size.saturating_sub(Self::SPECIALS.len());
        let tokens = Self::SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().take(room).map(|(t, _)| t))
            .collect();
        Self::from_tokens(tokens).expect("specials are in place")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, s) in Self::SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::Tokenizer(format!("vocabulary slot {i} must hold {s}")));
            }
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect::<HashMap<_, _>>();
        if index.len() != tokens.len() {
            return Err(Error::Tokenizer("vocabulary contains duplicate tokens".into()));
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn special(&self) -> SpecialTokens {
        SpecialTokens {
            pad: 0,
            unk: 1,
            cls: 2,
            sep: 3,
            mask: 4,
        }
    }

    fn encode_words(&self, text: &str) -> Vec<u32> {
        vocabulary_tokens(text)
            .iter()
            .map(|t| self.index.get(t).copied().unwrap_or(1))
            .collect()
    }
}

/// Text → token ids, either the built-in word vocabulary or a
/// `tokenizer.json` shipped with a pretrained checkpoint.
#[derive(Clone)]
pub enum TextTokenizer {
    Word(WordVocab),
    Pretrained {
        inner: Box<tokenizers::Tokenizer>,
        special: SpecialTokens,
    },
}

impl std::fmt::Debug for TextTokenizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TextTokenizer::Word(v) => write!(f, "TextTokenizer::Word({} tokens)", v.len()),
            TextTokenizer::Pretrained { special, .. } => {
                write!(f, "TextTokenizer::Pretrained({special:?})")
            }
        }
    }
}

const VOCAB_FILE: &str = "vocab.txt";
const HF_FILE: &str = "tokenizer.json";

impl TextTokenizer {
    pub fn special(&self) -> SpecialTokens {
        match self {
            TextTokenizer::Word(v) => v.special(),
            TextTokenizer::Pretrained { special, .. } => *special,
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            TextTokenizer::Word(v) => v.len(),
            TextTokenizer::Pretrained { inner, .. } => inner.get_vocab_size(true),
        }
    }

    /// `[CLS] tokens.. [SEP]`, truncated to `max_len`.
    pub fn encode(&self, text: &str, max_len: usize) -> Result<Vec<u32>> {
        let max_len = max_len.max(2);
        let special = self.special();
        let mut ids = match self {
            TextTokenizer::Word(v) => {
                let mut ids = vec![special.cls];
                ids.extend(v.encode_words(text));
                ids.push(special.sep);
                ids
            }
            TextTokenizer::Pretrained { inner, .. } => inner
                .encode(text, true)
                .map_err(|e| Error::Tokenizer(e.to_string()))?
                .get_ids()
                .to_vec(),
        };
        if ids.len() > max_len {
            ids.truncate(max_len - 1);
            ids.push(special.sep);
        }
        Ok(ids)
    }

    pub fn batch<S: AsRef<str>>(&self, texts: &[S], max_len: usize, device: &Device, dtype: DType) -> Result<Batch> {
        let seqs = texts
            .iter()
            .map(|t| self.encode(t.as_ref(), max_len))
            .collect::<Result<Vec<_>>>()?;
        Batch::from_sequences(&seqs, self.special(), device, dtype)
    }

    /// Loads `tokenizer.json` (pretrained) or `vocab.txt` (word level) from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let hf = dir.join(HF_FILE);
        if hf.is_file() {
            return Self::from_pretrained_file(&hf);
        }
        let path = dir.join(VOCAB_FILE);
        let content = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let tokens = content.lines().map(str::to_owned).collect();
        Ok(TextTokenizer::Word(WordVocab::from_tokens(tokens)?))
    }

    pub fn from_pretrained_file(path: &Path) -> Result<Self> {
        let inner = tokenizers::Tokenizer::from_file(path).map_err(|e| Error::Tokenizer(e.to_string()))?;
        let find = |cands: &[&str]| -> Result<u32> {
            cands
                .iter()
                .find_map(|c| inner.token_to_id(c))
                .ok_or_else(|| Error::Tokenizer(format!("tokenizer lacks any of {cands:?}")))
        };
        let special = SpecialTokens {
            pad: find(&["[PAD]", "<pad>"])?,
            unk: find(&["[UNK]", "<unk>"])?,
            cls: find(&["[CLS]", "<s>"])?,
            sep: find(&["[SEP]", "</s>"])?,
            mask: find(&["[MASK]", "<mask>"])?,
        };
        Ok(TextTokenizer::Pretrained {
            inner: Box::new(inner),
            special,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        match self {
            TextTokenizer::Word(v) => {
                let path = dir.join(VOCAB_FILE);
                let mut body = v.tokens.join("\n");
                body.push('\n');
                fs::write(&path, body).map_err(|e| Error::io(&path, e))
            }
            TextTokenizer::Pretrained { inner, .. } => inner
                .save(dir.join(HF_FILE), false)
                .map_err(|e| Error::Tokenizer(e.to_string())),
        }
    }
}

/// A padded batch of token sequences.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[b, l]` u32 ids.
    pub ids: Tensor,
    /// `[b, l]` 1 for real tokens, 0 for padding, in the model dtype.
    pub attention_mask: Tensor,
    /// Host copy of `ids`, padded.
    pub token_ids: Vec<Vec<u32>>,
    pub lengths: Vec<usize>,
    /// Positions eligible for MLM corruption (real, non-structural tokens).
    pub maskable: Vec<Vec<bool>>,
    pub special: SpecialTokens,
}

impl Batch {
    pub fn from_sequences(seqs: &[Vec<u32>], special: SpecialTokens, device: &Device, dtype: DType) -> Result<Self> {
        if seqs.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let width = seqs.iter().map(Vec::len).max().unwrap_or(0).max(1);
        let mut flat_ids = Vec::with_capacity(seqs.len() * width);
        let mut flat_mask = Vec::with_capacity(seqs.len() * width);
        let mut token_ids = Vec::with_capacity(seqs.len());
        let mut maskable = Vec::with_capacity(seqs.len());
        for seq in seqs {
            let mut row = seq.clone();
            row.resize(width, special.pad);
            flat_ids.extend_from_slice(&row);
            flat_mask.extend((0..width).map(|i| if i < seq.len() { 1.0 } else { 0.0 }));
            maskable.push(
                row.iter()
                    .enumerate()
                    .map(|(i, &id)| i < seq.len() && !special.is_structural(id))
                    .collect(),
            );
            token_ids.push(row);
        }
        let b = seqs.len();
        Ok(Self {
            ids: Tensor::from_vec(flat_ids, (b, width), device)?,
            attention_mask: Tensor::from_vec(flat_mask, (b, width), device)?.to_dtype(dtype)?,
            token_ids,
            lengths: seqs.iter().map(Vec::len).collect(),
            maskable,
            special,
        })
    }

    pub fn size(&self) -> usize {
        self.token_ids.len()
    }

    pub fn width(&self) -> usize {
        self.token_ids.first().map_or(0, Vec::len)
    }

    /// Same padding layout with different ids (an MLM-corrupted copy).
    pub fn with_ids(&self, ids: Vec<Vec<u32>>) -> Result<Self> {
        let b = ids.len();
        let width = self.width();
        if b != self.size() || ids.iter().any(|r| r.len() != width) {
            return Err(Error::Contract("replacement ids must match the batch layout".into()));
        }
        let flat: Vec<u32> = ids.iter().flatten().copied().collect();
        Ok(Self {
            ids: Tensor::from_vec(flat, (b, width), self.ids.device())?,
            attention_mask: self.attention_mask.clone(),
            token_ids: ids,
            lengths: self.lengths.clone(),
            maskable: self.maskable.clone(),
            special: self.special,
        })
    }

    /// Rows reordered by `order`, keeping the padded width.
    pub fn select(&self, order: &[usize]) -> Result<Self> {
        let b = order.len();
        let width = self.width();
        let token_ids: Vec<Vec<u32>> = order.iter().map(|&i| self.token_ids[i].clone()).collect();
        let flat: Vec<u32> = token_ids.iter().flatten().copied().collect();
        let mask: Vec<f64> = order
            .iter()
            .flat_map(|&i| (0..width).map(move |p| if p < self.lengths[i] { 1.0 } else { 0.0 }))
            .collect();
        Ok(Self {
            ids: Tensor::from_vec(flat, (b, width), self.ids.device())?,
            attention_mask: Tensor::from_vec(mask, (b, width), self.ids.device())?
                .to_dtype(self.attention_mask.dtype())?,
            token_ids,
            lengths: order.iter().map(|&i| self.lengths[i]).collect(),
            maskable: order.iter().map(|&i| self.maskable[i].clone()).collect(),
            special: self.special,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_is_frequency_ranked_and_capped() {
        let v = WordVocab::build(["b a a", "c a b"], 7);
        assert_eq!(v.len(), 7);
        assert_eq!(v.token(5), Some("a"));
        assert_eq!(v.token(6), Some("b"));
    }

    #[test]
    fn encode_wraps_and_truncates() {
        let tok = TextTokenizer::Word(WordVocab::build(["x y z"], 100));
        let ids = tok.encode("x y z q", 4).unwrap();
        assert_eq!(ids.len(), 4);
        assert_eq!(ids[0], 2);
        assert_eq!(*ids.last().unwrap(), 3);
        let full = tok.encode("x q", 16).unwrap();
        assert_eq!(full[2], 1, "unknown word maps to [UNK]");
    }

    #[test]
    fn batch_pads_and_marks_maskable() {
        let tok = TextTokenizer::Word(WordVocab::build(["x y z"], 100));
        let b = tok.batch(&["x y z", "x"], 16, &Device::Cpu, DType::F64).unwrap();
        assert_eq!(b.width(), 5);
        assert_eq!(b.lengths, vec![5, 3]);
        assert_eq!(b.maskable[1], vec![false, true, false, false, false]);
        let mask = b.attention_mask.to_vec2::<f64>().unwrap();
        assert_eq!(mask[1], vec![1.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let tok = TextTokenizer::Word(WordVocab::build(["học qtkd", "khó"], 50));
        tok.save(dir.path()).unwrap();
        let back = TextTokenizer::load(dir.path()).unwrap();
        assert_eq!(back.encode("học khó", 8).unwrap(), tok.encode("học khó", 8).unwrap());
    }
}
