use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::Device;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::TrainerConfig;
use super::optim::AdamW;
use crate::error::{Error, Result};
use crate::evalx::MetricsReport;
use crate::model::{MultitaskModel, MultitaskModelConfig, TextTokenizer};

const CONFIG_FILE: &str = "config.json";
const PARAMS_FILE: &str = "params.safetensors";
const OPT_TENSORS: &str = "optimizer.safetensors";
const OPT_META: &str = "optimizer.json";
const REFERENCE_FILE: &str = "reference.safetensors";
const STATE_FILE: &str = "state.json";
pub const FORMAT_VERSION: u32 = 1;

/// Progress counters. All training randomness is derived from the seed
/// and these counters, so they are the full RNG state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    /// Epoch in progress (or the next one, when `step_in_epoch` is 0).
    pub epoch: usize,
    pub step_in_epoch: u64,
    pub global_step: u64,
    pub best_metric: Option<f64>,
    pub best_epoch: Option<usize>,
    #[serde(default)]
    pub validation: BTreeMap<String, MetricsReport>,
    /// Running sum of step losses in the current epoch.
    #[serde(default)]
    pub epoch_loss_sum: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointConfig {
    model: MultitaskModelConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    trainer: Option<TrainerConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StateFile {
    format_version: u32,
    state: TrainingState,
    /// sha256 of every other file in the directory.
    digests: BTreeMap<String, String>,
}

pub struct CheckpointRecord<'a> {
    pub model: &'a MultitaskModel,
    pub tokenizer: &'a TextTokenizer,
    pub trainer: Option<&'a TrainerConfig>,
    pub optimizer: Option<&'a AdamW>,
    pub reference: Option<&'a MultitaskModel>,
    pub state: &'a TrainingState,
}

pub struct LoadedCheckpoint {
    pub model: MultitaskModel,
    pub tokenizer: TextTokenizer,
    pub trainer: Option<TrainerConfig>,
    pub optimizer: Option<AdamW>,
    pub reference: Option<MultitaskModel>,
    pub state: TrainingState,
    pub dir: PathBuf,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes the record into `dir` (created if needed); `state.json` is
/// written last and carries digests of the other files.
pub fn save_checkpoint(dir: &Path, record: &CheckpointRecord<'_>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for stale in [OPT_TENSORS, OPT_META, REFERENCE_FILE, STATE_FILE, "vocab.txt", "tokenizer.json"] {
        let p = dir.join(stale);
        if p.exists() {
            fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    let cfg = CheckpointConfig {
        model: record.model.config().clone(),
        trainer: record.trainer.cloned(),
    };
    let cfg_path = dir.join(CONFIG_FILE);
    fs::write(&cfg_path, serde_json::to_string_pretty(&cfg)?).map_err(|e| Error::io(&cfg_path, e))?;
    record.model.save_parameters(&dir.join(PARAMS_FILE))?;
    record.tokenizer.save(dir)?;
    if let Some(opt) = record.optimizer {
        opt.save(&dir.join(OPT_TENSORS), &dir.join(OPT_META))?;
    }
    if let Some(r) = record.reference {
        r.save_parameters(&dir.join(REFERENCE_FILE))?;
    }
    let mut digests = BTreeMap::new();
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != STATE_FILE && !n.ends_with(".tmp"))
        .collect();
    names.sort();
    for n in names {
        digests.insert(n.clone(), sha256_file(&dir.join(&n))?);
    }
    let body = serde_json::to_string_pretty(&StateFile {
        format_version: FORMAT_VERSION,
        state: record.state.clone(),
        digests,
    })?;
    let tmp = dir.join(format!("{STATE_FILE}.tmp"));
    let fin = dir.join(STATE_FILE);
    fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &fin).map_err(|e| Error::io(&fin, e))
}

/// Loads and integrity-checks a checkpoint directory.
pub fn load_checkpoint(dir: &Path, device: &Device) -> Result<LoadedCheckpoint> {
    let state_path = dir.join(STATE_FILE);
    let raw = fs::read_to_string(&state_path).map_err(|e| Error::io(&state_path, e))?;
    let state: StateFile = serde_json::from_str(&raw).map_err(|e| Error::Integrity {
        path: state_path.clone(),
        message: format!("unreadable state: {e}"),
    })?;
    if state.format_version != FORMAT_VERSION {
        return Err(Error::Integrity {
            path: state_path,
            message: format!("format version {} (expected {FORMAT_VERSION})", state.format_version),
        });
    }
    for (name, want) in &state.digests {
        let p = dir.join(name);
        if !p.is_file() {
            return Err(Error::Integrity {
                path: p,
                message: "file listed in state.json is missing".into(),
            });
        }
        let got = sha256_file(&p)?;
        if &got != want {
            return Err(Error::Integrity {
                path: p,
                message: format!("sha256 {got} does not match recorded {want}"),
            });
        }
    }
    let cfg_path = dir.join(CONFIG_FILE);
    let cfg_raw = fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let cfg: CheckpointConfig = serde_json::from_str(&cfg_raw).map_err(|e| Error::Schema {
        location: cfg_path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut model_cfg = cfg.model.clone();
    // the archive carries every parameter; skip the pretrained overlay
    model_cfg.encoder.checkpoint = None;
    let model = MultitaskModel::build(&model_cfg, device, 0)?;
    model.load_parameters(&dir.join(PARAMS_FILE))?;
    let model = model.with_config(cfg.model.clone());
    let tokenizer = TextTokenizer::load(dir)?;
    let optimizer = if dir.join(OPT_META).is_file() {
        Some(AdamW::load(&dir.join(OPT_TENSORS), &dir.join(OPT_META), model.params())?)
    } else {
        None
    };
    let reference = if dir.join(REFERENCE_FILE).is_file() {
        let r = MultitaskModel::build(&model_cfg, device, 0)?;
        r.load_parameters(&dir.join(REFERENCE_FILE))?;
        Some(r)
    } else {
        None
    };
    Ok(LoadedCheckpoint {
        model,
        tokenizer,
        trainer: cfg.trainer,
        optimizer,
        reference,
        state: state.state,
        dir: dir.to_path_buf(),
    })
}
