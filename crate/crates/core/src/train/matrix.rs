use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Strategy, TrainerConfig};
use super::data::parse_task;
use super::setup::ModelRecipe;
use super::trainer::{evaluate_examples, train};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::evalx::{MetricsReport, ReportRow};
use crate::objectives::SmartConfig;

/// One configuration to train and test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixCell {
    pub name: String,
    #[serde(default)]
    pub model: Option<ModelRecipe>,
    pub strategy: Strategy,
    #[serde(default)]
    pub use_mlm: bool,
    #[serde(default)]
    pub smart: bool,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub inject_nan_at_step: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    /// Settings shared by every cell.
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub model: ModelRecipe,
    /// SMART settings for cells with `smart = true`.
    #[serde(default)]
    pub smart: SmartConfig,
    pub cells: Vec<MatrixCell>,
}

impl MatrixSpec {
    /// Single-task, 2-task, 2-task + SMART, and 2-task + MLM + SMART.
    pub fn four_strategies(trainer: TrainerConfig, model: ModelRecipe) -> Self {
        let cell = |name: &str, strategy, use_mlm, smart| MatrixCell {
            name: name.into(),
            model: None,
            strategy,
            use_mlm,
            smart,
            seed: None,
            inject_nan_at_step: None,
        };
        Self {
            trainer,
            model,
            smart: SmartConfig::default(),
            cells: vec![
                cell("single-task", Strategy::SingleTask, false, false),
                cell("2-task", Strategy::JointSum, false, false),
                cell("2-task+SMART", Strategy::JointSum, false, true),
                cell("2-task+MLM+SMART", Strategy::JointSum, true, true),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::config("cells", "the matrix has no cells"));
        }
        let mut names = std::collections::HashSet::new();
        for c in &self.cells {
            if !names.insert(c.name.as_str()) {
                return Err(Error::config("cells.name", format!("duplicate cell `{}`", c.name)));
            }
        }
        self.smart.validate()
    }

    /// Trainer config of one cell (single-task cells get their task set
    /// later, one run per task).
    pub fn cell_config(&self, cell: &MatrixCell) -> TrainerConfig {
        let mut cfg = self.trainer.clone();
        cfg.strategy = cell.strategy;
        cfg.use_mlm = cell.use_mlm;
        cfg.smart = cell.smart.then(|| self.smart.clone());
        if let Some(seed) = cell.seed {
            cfg.seed = seed;
        }
        cfg.inject_nan_at_step = cell.inject_nan_at_step;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixResult {
    pub rows: Vec<ReportRow>,
}

impl MatrixResult {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.failure.is_some()).count()
    }
}

fn run_cell(spec: &MatrixSpec, cell: &MatrixCell, corpus: &Corpus, out: Option<&Path>) -> Result<BTreeMap<String, MetricsReport>> {
    let base = spec.cell_config(cell);
    let recipe = cell.model.clone().unwrap_or_else(|| spec.model.clone());
    let device = crate::model::parse_device(&base.device)?;
    let runs: Vec<Vec<String>> = match cell.strategy {
        Strategy::SingleTask => base.tasks.iter().map(|t| vec![t.clone()]).collect(),
        _ => vec![base.tasks.clone()],
    };
    let split_dirs = runs.len() > 1;
    let mut metrics = BTreeMap::new();
    for tasks in runs {
        let mut cfg = base.clone();
        cfg.tasks = tasks.clone();
        let parsed = tasks.iter().map(|t| parse_task(t)).collect::<Result<Vec<_>>>()?;
        let (model, tokenizer) = recipe.build(&parsed, cfg.use_mlm, &corpus.train.examples, &device, cfg.seed)?;
        let dir = out.map(|o| if split_dirs { o.join(&tasks[0]) } else { o.to_path_buf() });
        let outcome = train(model, tokenizer, &corpus.train.examples, &corpus.validation.examples, &cfg, dir.as_deref())?;
        let test = evaluate_examples(
            &outcome.model,
            &outcome.tokenizer,
            &corpus.test.examples,
            &parsed,
            cfg.eval_batch_size,
            cfg.max_sequence_length,
        )?;
        metrics.extend(test);
    }
    Ok(metrics)
}

/// Trains and tests every cell. A failing cell becomes a row with its
/// error; the remaining cells still run.
pub fn run_experiment_matrix(spec: &MatrixSpec, corpus: &Corpus, output: Option<&Path>) -> Result<MatrixResult> {
    spec.validate()?;
    let mut rows = Vec::with_capacity(spec.cells.len());
    for cell in &spec.cells {
        let recipe = cell.model.as_ref().unwrap_or(&spec.model);
        let cell_dir = output.map(|o| o.join(sanitize(&cell.name)));
        log::info!("matrix cell `{}`", cell.name);
        let (metrics, failure) = match run_cell(spec, cell, corpus, cell_dir.as_deref()) {
            Ok(m) => (m, None),
            Err(e) => {
                log::error!("cell `{}` failed: {e}", cell.name);
                (BTreeMap::new(), Some(e.to_string()))
            }
        };
        rows.push(ReportRow {
            model: recipe.label(),
            strategy: cell.name.clone(),
            metrics,
            failure,
        });
    }
    Ok(MatrixResult { rows })
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}
