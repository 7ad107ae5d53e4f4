use std::collections::HashMap;

use candle_core::Tensor;

use super::losses::symmetrized_kl;
use super::smart::ProximalMode;
use crate::error::{Error, Result};
use crate::model::MultitaskModel;

/// μ · mean over tasks of symKL(current, reference) with the reference side
/// treated as constant.
pub fn bregman_proximal_term(current: &[Tensor], reference: &[Tensor], mu: f64) -> Result<Tensor> {
    if current.len() != reference.len() || current.is_empty() {
        return Err(Error::Contract("proximal term needs matching, non-empty head lists".into()));
    }
    let mut acc: Option<Tensor> = None;
    for (c, r) in current.iter().zip(reference) {
        let term = symmetrized_kl(c, &r.detach())?;
        acc = Some(match acc {
            Some(a) => a.add(&term)?,
            None => term,
        });
    }
    let mean = (acc.expect("non-empty") / current.len() as f64)?;
    Ok((mean * mu)?)
}

/// The parameter set θ̃ whose outputs anchor the proximal term.
///
/// Starts as a copy of θ₀. After every optimizer step, `vanilla` sets
/// θ̃ ← θ and `momentum` sets θ̃ ← β·θ̃ + (1 − β)·θ.
#[derive(Debug)]
pub struct ProximalReference {
    mode: ProximalMode,
    beta: f64,
    model: MultitaskModel,
}

impl ProximalReference {
    pub fn new(current: &MultitaskModel, mode: ProximalMode, beta: f64) -> Result<Self> {
        Ok(Self {
            mode,
            beta,
            model: current.duplicate()?,
        })
    }

    /// Wraps an existing parameter set (restored from a checkpoint).
    pub fn from_model(model: MultitaskModel, mode: ProximalMode, beta: f64) -> Self {
        Self { mode, beta, model }
    }

    pub fn model(&self) -> &MultitaskModel {
        &self.model
    }

    pub fn mode(&self) -> ProximalMode {
        self.mode
    }

    pub fn update(&self, current: &MultitaskModel) -> Result<()> {
        let theta = current.params().snapshot()?;
        match self.mode {
            ProximalMode::None => Ok(()),
            ProximalMode::Vanilla => self.model.params().assign(&theta, true),
            ProximalMode::Momentum => {
                let old = self.model.params().snapshot()?;
                let mut blended = HashMap::with_capacity(theta.len());
                for (name, t) in theta {
                    let r = &old[&name];
                    let v = ((r * self.beta)? + (t * (1.0 - self.beta))?)?;
                    blended.insert(name, v);
                }
                self.model.params().assign(&blended, true)
            }
        }
    }
}
