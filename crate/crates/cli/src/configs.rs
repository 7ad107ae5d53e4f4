use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;
use esc_core::corpus::{load_corpus, Corpus, DatasetSource};
use esc_core::llmbench::{PromptTemplate, ProviderConfig};
use esc_core::objectives::SmartConfig;
use esc_core::train::{MatrixCell, MatrixSpec, ModelRecipe, TrainerConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Bad flags, files or schemas; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Reads a TOML file, or JSON when the extension is `.json`.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let raw = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&raw).map_err(|e| e.to_string())
    } else {
        toml::from_str(&raw).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| usage(format!("invalid config {}: {}", path.display(), e.trim_end())))
}

pub fn require_exists(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

/// Input files behind a dataset locator (none for hub ids).
pub fn data_inputs(locator: &str) -> Result<Vec<PathBuf>> {
    match DatasetSource::parse(locator) {
        DatasetSource::Path(p) => {
            require_exists(&p, "dataset")?;
            Ok(vec![p])
        }
        DatasetSource::Hub(_) => Ok(Vec::new()),
    }
}

pub fn load_data(locator: &str, max_train: Option<usize>) -> Result<Corpus> {
    let mut corpus = load_corpus(&DatasetSource::parse(locator))?;
    if let Some(n) = max_train {
        corpus.train.examples.truncate(n);
    }
    Ok(corpus)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    /// Dataset locator: a path or `hf:<owner>/<name>`.
    pub data: String,
    #[serde(default)]
    pub max_train_examples: Option<usize>,
    #[serde(default)]
    pub model: ModelRecipe,
    #[serde(default)]
    pub trainer: TrainerConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixFile {
    pub data: String,
    #[serde(default)]
    pub max_train_examples: Option<usize>,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub model: ModelRecipe,
    #[serde(default)]
    pub smart: SmartConfig,
    /// Empty means the four standard strategies.
    #[serde(default)]
    pub cells: Vec<MatrixCell>,
}

impl MatrixFile {
    pub fn spec(&self) -> MatrixSpec {
        let mut spec = MatrixSpec::four_strategies(self.trainer.clone(), self.model.clone());
        spec.smart = self.smart.clone();
        if !self.cells.is_empty() {
            spec.cells = self.cells.clone();
        }
        spec
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchFile {
    pub data: String,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub fewshot_seed: u64,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub max_test_examples: Option<usize>,
    #[serde(default)]
    pub template: PromptTemplate,
}

fn default_concurrency() -> usize {
    4
}
