use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{MaskingConfig, SigmaMode, SmartConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    SingleTask,
    JointSum,
    RoundRobin,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::SingleTask => "single_task",
            Strategy::JointSum => "joint_sum",
            Strategy::RoundRobin => "round_robin",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub strategy: Strategy,
    pub tasks: Vec<String>,
    pub use_mlm: bool,
    pub smart: Option<SmartConfig>,
    pub masking: MaskingConfig,
    pub sigma_mode: SigmaMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub gradient_clip_norm: Option<f64>,
    pub seed: u64,
    pub max_sequence_length: usize,
    pub device: String,
    /// Stop (after checkpointing) once this many optimizer steps have run
    /// in total. Used to interrupt and later resume a run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_after_steps: Option<u64>,
    /// Fault injection: poison the loss at this global step.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inject_nan_at_step: Option<u64>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::JointSum,
            tasks: vec!["sentiment".into(), "topic".into()],
            use_mlm: false,
            smart: None,
            masking: MaskingConfig::default(),
            sigma_mode: SigmaMode::default(),
            epochs: 10,
            batch_size: 32,
            eval_batch_size: 64,
            learning_rate: 2e-5,
            warmup_fraction: 0.1,
            weight_decay: 0.01,
            gradient_clip_norm: Some(1.0),
            seed: 0,
            max_sequence_length: 256,
            device: "cpu".into(),
            stop_after_steps: None,
            inject_nan_at_step: None,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::config("tasks", "at least one task is required"));
        }
        if self.strategy == Strategy::SingleTask && self.tasks.len() != 1 {
            return Err(Error::config("tasks", "single_task needs exactly one task"));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.tasks.iter().find(|t| !seen.insert(t.as_str())) {
            return Err(Error::config("tasks", format!("task `{dup}` listed twice")));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::config("warmup_fraction", "must lie in [0, 1]"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "must be nonnegative"));
        }
        if let Some(c) = self.gradient_clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::config("gradient_clip_norm", "must be positive"));
            }
        }
        if self.max_sequence_length < 2 {
            return Err(Error::config("max_sequence_length", "must be at least 2"));
        }
        if let Some(s) = &self.smart {
            s.validate()?;
        }
        if self.use_mlm {
            self.masking.validate()?;
        }
        Ok(())
    }
}
