use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledExample, Task};
use crate::error::{Error, Result};
use crate::evalx::{compute_metrics, MetricsReport, PredictionSet};

use super::fewshot::FewShotSet;
use super::prompt::{build_prompt, parse_prompt, PromptTemplate, ShotMode};
use super::provider::{ChatModel, ChatResponse};

/// Index of the single label named in `response`, matched case-insensitively
/// on word boundaries. Zero or several distinct labels give `None`.
pub fn parse_label(response: &str, labels: &[&str]) -> Option<usize> {
    let hay = response.to_lowercase();
    let mut spans: Vec<(usize, usize, usize)> = Vec::new();
    for (i, label) in labels.iter().enumerate() {
        let needle = label.to_lowercase();
        if needle.is_empty() {
            continue;
        }
        let mut from = 0;
        while let Some(off) = hay[from..].find(&needle) {
            let start = from + off;
            let end = start + needle.len();
            let before = hay[..start].chars().next_back();
            let after = hay[end..].chars().next();
            if !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric) {
                spans.push((start, end, i));
            }
            from = start + needle.chars().next().map_or(1, char::len_utf8);
        }
    }
    let outer: Vec<usize> = spans
        .iter()
        .filter(|&&(s, e, _)| !spans.iter().any(|&(s2, e2, _)| s2 <= s && e <= e2 && (e2 - s2) > (e - s)))
        .map(|&(_, _, i)| i)
        .collect();
    let first = *outer.first()?;
    outer.iter().all(|&i| i == first).then_some(first)
}

/// Outcome of one benchmark query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LLMVerdict {
    pub example_id: String,
    pub task: Task,
    pub mode: ShotMode,
    pub model: String,
    pub raw_response: Option<String>,
    pub parsed_label: Option<String>,
    pub gold_label: String,
    /// Parse or provider failure; scored as incorrect.
    pub failure: Option<String>,
    pub latency_ms: f64,
    pub cached: bool,
    pub retries: u32,
}

#[derive(Debug, Clone)]
pub struct BenchmarkOptions {
    pub template: PromptTemplate,
    /// Number of requests in flight.
    pub concurrency: usize,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            template: PromptTemplate::default(),
            concurrency: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub model: String,
    pub task: Task,
    pub mode: ShotMode,
    pub metrics: MetricsReport,
    pub verdicts: Vec<LLMVerdict>,
    pub network_calls: usize,
}

/// Queries `provider` once per test example and scores parsed labels.
///
/// Only authentication and configuration errors abort the run.
pub fn run_benchmark(
    test: &[LabeledExample],
    task: Task,
    fewshot: Option<&FewShotSet>,
    provider: &dyn ChatModel,
    options: &BenchmarkOptions,
) -> Result<BenchmarkResult> {
    if test.is_empty() {
        return Err(Error::Contract("benchmark needs at least one test example".into()));
    }
    let mode = if fewshot.is_some() { ShotMode::Few } else { ShotMode::Zero };
    let calls_before = provider.network_calls();
    let width = options.concurrency.max(1);
    let chunk = test.len().div_ceil(width);
    let answers: Vec<Result<ChatResponse>> = std::thread::scope(|scope| {
        let handles: Vec<_> = test
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|e| provider.query(&build_prompt(task, &e.text, fewshot, &options.template)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("benchmark worker panicked")).collect()
    });

    let labels = task.label_names();
    let mut verdicts = Vec::with_capacity(test.len());
    let mut predicted = Vec::with_capacity(test.len());
    for (e, answer) in test.iter().zip(answers) {
        let gold = task.label_of(e);
        let mut v = LLMVerdict {
            example_id: e.id.clone(),
            task,
            mode,
            model: provider.model_name().to_owned(),
            raw_response: None,
            parsed_label: None,
            gold_label: labels[gold].to_owned(),
            failure: None,
            latency_ms: 0.0,
            cached: false,
            retries: 0,
        };
        let code = match answer {
            Ok(r) => {
                let code = parse_label(&r.text, &labels);
                if code.is_none() {
                    v.failure = Some("unparseable response".into());
                }
                v.parsed_label = code.map(|c| labels[c].to_owned());
                v.raw_response = Some(r.text);
                v.latency_ms = r.latency_ms;
                v.cached = r.cached;
                v.retries = r.retries;
                code
            }
            Err(err @ (Error::Auth(_) | Error::Config { .. })) => return Err(err),
            Err(err) => {
                log::warn!("{}: {err}", e.id);
                v.failure = Some(err.to_string());
                None
            }
        };
        predicted.push(code);
        verdicts.push(v);
    }
    let gold: Vec<usize> = test.iter().map(|e| task.label_of(e)).collect();
    let metrics = compute_metrics(&PredictionSet::with_abstentions(task.as_str(), gold, predicted), task.num_classes())?;
    Ok(BenchmarkResult {
        model: provider.model_name().to_owned(),
        task,
        mode,
        metrics,
        verdicts,
        network_calls: provider.network_calls() - calls_before,
    })
}

pub fn write_verdict_log(path: &Path, verdicts: &[LLMVerdict]) -> Result<()> {
    let mut buf = Vec::new();
    for v in verdicts {
        serde_json::to_writer(&mut buf, v)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_verdict_log(path: &Path) -> Result<Vec<LLMVerdict>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Schema {
                location: format!("{}:{}", path.display(), i + 1),
                message: e.to_string(),
            })
        })
        .collect()
}

/// Answers with the gold label of the prompt's target text.
#[derive(Debug)]
pub struct OracleModel {
    gold: HashMap<String, String>,
    template: PromptTemplate,
}

impl OracleModel {
    pub fn new(task: Task, examples: &[LabeledExample], template: PromptTemplate) -> Self {
        let gold = examples
            .iter()
            .map(|e| (e.text.clone(), task.label_name(task.label_of(e)).unwrap_or_default().to_owned()))
            .collect();
        Self { gold, template }
    }
}

impl ChatModel for OracleModel {
    fn model_name(&self) -> &str {
        "mock-oracle"
    }

    fn query(&self, prompt: &str) -> Result<ChatResponse> {
        let target = parse_prompt(prompt, &self.template)?.target;
        let label = self
            .gold
            .get(&target)
            .ok_or_else(|| Error::Provider("oracle has no gold label for this text".into()))?;
        Ok(ChatResponse {
            text: label.clone(),
            cached: false,
            retries: 0,
            latency_ms: 0.0,
        })
    }
}

/// Always answers the same text.
#[derive(Debug)]
pub struct ConstantModel {
    pub answer: String,
}

impl ChatModel for ConstantModel {
    fn model_name(&self) -> &str {
        "mock-constant"
    }

    fn query(&self, _prompt: &str) -> Result<ChatResponse> {
        Ok(ChatResponse {
            text: self.answer.clone(),
            cached: false,
            retries: 0,
            latency_ms: 0.0,
        })
    }
}
