use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::backprop::GradStore;
use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adam with decoupled weight decay. Biases and layer-norm parameters are
/// not decayed. Parameters without a gradient in a step are left alone.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AdamWMeta {
    config: AdamWConfig,
    step: u64,
}

pub fn decays(name: &str) -> bool {
    !(name.ends_with(".bias") || name.contains("LayerNorm"))
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &ParamStore, grads: &GradStore, lr: f64, scale: f64) -> Result<()> {
        self.step += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (name, var) in params.iter() {
            let Some(g) = grads.get(var.as_tensor()) else { continue };
            let g = if scale == 1.0 { g.clone() } else { (g * scale)? };
            let m = match self.m.get(name) {
                Some(m) => ((m * beta1)? + (&g * (1.0 - beta1))?)?,
                None => (&g * (1.0 - beta1))?,
            };
            let v = match self.v.get(name) {
                Some(v) => ((v * beta2)? + (g.sqr()? * (1.0 - beta2))?)?,
                None => (g.sqr()? * (1.0 - beta2))?,
            };
            let update = ((&m / bc1)? / ((&v / bc2)?.sqrt()? + eps)?)?;
            let theta = var.as_tensor();
            let decayed = if weight_decay > 0.0 && decays(name) {
                (theta * (1.0 - lr * weight_decay))?
            } else {
                theta.clone()
            };
            var.set(&(decayed - (update * lr)?)?)?;
            self.m.insert(name.to_owned(), m);
            self.v.insert(name.to_owned(), v);
        }
        Ok(())
    }

    pub fn save(&self, tensors: &Path, meta: &Path) -> Result<()> {
        let mut map: HashMap<String, Tensor> = HashMap::new();
        for (k, t) in &self.m {
            map.insert(format!("m.{k}"), t.clone());
        }
        for (k, t) in &self.v {
            map.insert(format!("v.{k}"), t.clone());
        }
        if map.is_empty() {
            // safetensors needs at least one entry to be a useful archive
            map.insert("__empty__".into(), Tensor::zeros(1, candle_core::DType::F32, &candle_core::Device::Cpu)?);
        }
        candle_core::safetensors::save(&map, tensors)?;
        let body = serde_json::to_string_pretty(&AdamWMeta {
            config: self.config,
            step: self.step,
        })?;
        std::fs::write(meta, body).map_err(|e| Error::io(meta, e))
    }

    pub fn load(tensors: &Path, meta: &Path, params: &ParamStore) -> Result<Self> {
        let raw = std::fs::read_to_string(meta).map_err(|e| Error::io(meta, e))?;
        let meta: AdamWMeta = serde_json::from_str(&raw)?;
        let map = candle_core::safetensors::load(tensors, params.device())?;
        let mut opt = Self::new(meta.config);
        opt.step = meta.step;
        for (k, t) in map {
            let (slot, name) = match k.split_once('.') {
                Some(("m", n)) => (&mut opt.m, n.to_owned()),
                Some(("v", n)) => (&mut opt.v, n.to_owned()),
                _ => continue,
            };
            let Some(var) = params.get(&name) else {
                return Err(Error::Build {
                    layer: name,
                    message: "optimizer state for an unknown parameter".into(),
                });
            };
            if var.dims() != t.dims() {
                return Err(Error::Build {
                    layer: name,
                    message: format!("optimizer state shape {:?} vs parameter {:?}", t.dims(), var.dims()),
                });
            }
            slot.insert(name, t.to_dtype(params.dtype())?);
        }
        Ok(opt)
    }
}

/// Linear warmup to the base rate, then linear decay towards 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSchedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl LinearSchedule {
    pub fn new(base_lr: f64, warmup_fraction: f64, total_steps: u64) -> Self {
        Self {
            base_lr,
            warmup_steps: (warmup_fraction * total_steps as f64).ceil() as u64,
            total_steps,
        }
    }

    /// Rate used for the update at 0-based `step`.
    pub fn lr(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps);
        if span == 0 {
            return self.base_lr;
        }
        self.base_lr * (self.total_steps.saturating_sub(step)) as f64 / span as f64
    }
}

/// Global L2 norm of all parameter gradients.
pub fn grad_norm(params: &ParamStore, grads: &GradStore) -> Result<f64> {
    let mut sq = 0.0;
    for (_, var) in params.iter() {
        if let Some(g) = grads.get(var.as_tensor()) {
            sq += crate::ops::scalar_f64(&g.sqr()?.sum_all()?)?;
        }
    }
    Ok(sq.sqrt())
}

/// Multiplier that brings a gradient of norm `norm` under `max_norm`.
pub fn clip_scale(norm: f64, max_norm: Option<f64>) -> f64 {
    match max_norm {
        Some(max) if norm > max => max / (norm + 1e-6),
        _ => 1.0,
    }
}
