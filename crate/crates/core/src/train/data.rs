use std::collections::BTreeMap;

use candle_core::Tensor;

use crate::corpus::{LabeledExample, Task};
use crate::error::{Error, Result};
use crate::evalx::{compute_metrics, MetricsReport, PredictionSet};
use crate::model::{Batch, Mode, MultitaskModel, TextTokenizer};

/// A tokenized example with its class codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedExample {
    pub ids: Vec<u32>,
    pub sentiment: usize,
    pub topic: usize,
}

impl EncodedExample {
    pub fn label(&self, task: Task) -> usize {
        match task {
            Task::Sentiment => self.sentiment,
            Task::Topic => self.topic,
        }
    }
}

pub fn encode_examples(tokenizer: &TextTokenizer, examples: &[LabeledExample], max_len: usize) -> Result<Vec<EncodedExample>> {
    examples
        .iter()
        .map(|e| {
            Ok(EncodedExample {
                ids: tokenizer.encode(&e.text, max_len)?,
                sentiment: Task::Sentiment.label_of(e),
                topic: Task::Topic.label_of(e),
            })
        })
        .collect()
}

pub fn make_batch(model: &MultitaskModel, tokenizer: &TextTokenizer, data: &[EncodedExample], idx: &[usize]) -> Result<Batch> {
    let seqs: Vec<Vec<u32>> = idx.iter().map(|&i| data[i].ids.clone()).collect();
    Batch::from_sequences(&seqs, tokenizer.special(), model.device(), model.dtype())
}

pub fn parse_task(name: &str) -> Result<Task> {
    Task::parse(name).ok_or_else(|| Error::UnknownTask(name.to_owned()))
}

fn argmax_rows(logits: &Tensor) -> Result<Vec<usize>> {
    Ok(logits.argmax(candle_core::D::Minus1)?.to_vec1::<u32>()?.into_iter().map(|v| v as usize).collect())
}

/// Inference-mode predictions for each task, batched.
pub fn predict(
    model: &MultitaskModel,
    tokenizer: &TextTokenizer,
    data: &[EncodedExample],
    tasks: &[Task],
    batch_size: usize,
) -> Result<BTreeMap<String, PredictionSet>> {
    if data.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty split".into()));
    }
    let names: Vec<&str> = tasks.iter().map(|t| t.as_str()).collect();
    let mut preds: BTreeMap<String, Vec<usize>> = names.iter().map(|n| (n.to_string(), Vec::new())).collect();
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(batch_size.max(1)) {
        let batch = make_batch(model, tokenizer, data, chunk)?;
        let mut mode = Mode::Eval;
        let x = model.embed_inputs(&batch, &mut mode)?;
        let out = model.forward_tasks(&x, &batch.attention_mask, &names, &mut mode)?;
        for (task, logits) in out {
            preds.get_mut(&task).expect("task present").extend(argmax_rows(&logits)?);
        }
    }
    Ok(tasks
        .iter()
        .map(|&t| {
            let gold = data.iter().map(|e| e.label(t)).collect();
            (t.as_str().to_owned(), PredictionSet::new(t.as_str(), gold, preds[t.as_str()].clone()))
        })
        .collect())
}

pub fn evaluate(
    model: &MultitaskModel,
    tokenizer: &TextTokenizer,
    data: &[EncodedExample],
    tasks: &[Task],
    batch_size: usize,
) -> Result<BTreeMap<String, MetricsReport>> {
    predict(model, tokenizer, data, tasks, batch_size)?
        .into_iter()
        .map(|(k, set)| {
            let n = parse_task(&k)?.num_classes();
            Ok((k, compute_metrics(&set, n)?))
        })
        .collect()
}
