use std::collections::BTreeMap;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::scalar_f64;

/// How σ, the divisor of the MLM loss, is measured on a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// Mean number of MLM-selected tokens per sequence.
    #[default]
    SelectedPerSequence,
    /// Mean number of (non-padding) tokens per sequence.
    TokensPerSequence,
}

impl SigmaMode {
    /// σ for a batch; falls back to 1 when the measured value is 0.
    pub fn sigma(self, selected_per_sequence: f64, tokens_per_sequence: f64) -> f64 {
        let v = match self {
            SigmaMode::SelectedPerSequence => selected_per_sequence,
            SigmaMode::TokensPerSequence => tokens_per_sequence,
        };
        if v > 0.0 {
            v
        } else {
            1.0
        }
    }
}

/// Differentiable pieces of one step's objective.
#[derive(Debug, Default)]
pub struct LossTerms {
    pub task_losses: BTreeMap<String, Tensor>,
    pub smart_terms: BTreeMap<String, Tensor>,
    pub lambda_s: f64,
    pub mlm: Option<(Tensor, f64)>,
    pub proximal: Option<Tensor>,
}

/// Host values of every loss component plus the total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub task_losses: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub smart_terms: BTreeMap<String, f64>,
    pub lambda_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mlm_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proximal: Option<f64>,
    pub total: f64,
}

impl LossBreakdown {
    /// Σ_tasks (L + λ_s·R_s) + L_MLM/σ + proximal, in the same order as
    /// [`total_loss`].
    pub fn recompose(&self) -> f64 {
        let mut total = 0.0;
        for (task, l) in &self.task_losses {
            total += l;
            if let Some(r) = self.smart_terms.get(task) {
                total += self.lambda_s * r;
            }
        }
        if let (Some(m), Some(s)) = (self.mlm_loss, self.sigma) {
            total += m / s;
        }
        if let Some(p) = self.proximal {
            total += p;
        }
        total
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.task_losses.values().all(|v| v.is_finite())
            && self.smart_terms.values().all(|v| v.is_finite())
            && self.mlm_loss.is_none_or(f64::is_finite)
            && self.proximal.is_none_or(f64::is_finite)
    }

    /// Number of loss components (classification heads + MLM).
    pub fn component_count(&self) -> usize {
        self.task_losses.len() + usize::from(self.mlm_loss.is_some())
    }
}

/// Combines the terms into the scalar that is differentiated, plus its
/// host-side breakdown.
pub fn total_loss(terms: &LossTerms) -> Result<(Tensor, LossBreakdown)> {
    if terms.task_losses.is_empty() && terms.mlm.is_none() {
        return Err(Error::Contract("total_loss needs at least one loss term".into()));
    }
    for task in terms.smart_terms.keys() {
        if !terms.task_losses.contains_key(task) {
            return Err(Error::Contract(format!("SMART term for `{task}` without a task loss")));
        }
    }
    let mut acc: Option<Tensor> = None;
    let mut push = |t: Tensor| -> Result<()> {
        acc = Some(match acc.take() {
            Some(a) => a.add(&t)?,
            None => t,
        });
        Ok(())
    };
    let mut breakdown = LossBreakdown {
        task_losses: BTreeMap::new(),
        smart_terms: BTreeMap::new(),
        lambda_s: terms.lambda_s,
        mlm_loss: None,
        sigma: None,
        proximal: None,
        total: 0.0,
    };
    for (task, l) in &terms.task_losses {
        breakdown.task_losses.insert(task.clone(), scalar_f64(l)?);
        push(l.clone())?;
        if let Some(r) = terms.smart_terms.get(task) {
            breakdown.smart_terms.insert(task.clone(), scalar_f64(r)?);
            push((r * terms.lambda_s)?)?;
        }
    }
    if let Some((m, sigma)) = &terms.mlm {
        if !(*sigma > 0.0) {
            return Err(Error::Contract(format!("σ must be positive, got {sigma}")));
        }
        breakdown.mlm_loss = Some(scalar_f64(m)?);
        breakdown.sigma = Some(*sigma);
        push((m / *sigma)?)?;
    }
    if let Some(p) = &terms.proximal {
        breakdown.proximal = Some(scalar_f64(p)?);
        push(p.clone())?;
    }
    let total = acc.expect("at least one term");
    breakdown.total = scalar_f64(&total)?;
    Ok((total, breakdown))
}
