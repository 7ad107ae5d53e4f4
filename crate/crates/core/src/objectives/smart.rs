use candle_core::{Tensor, Var};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::losses::symmetrized_kl;
use crate::error::{Error, Result};
use crate::ops::to_f64_vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormOrder {
    Inf,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProximalMode {
    None,
    Vanilla,
    Momentum,
}

/// Smoothness-inducing adversarial regularization and Bregman proximal
/// settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmartConfig {
    pub lambda_s: f64,
    pub epsilon: f64,
    pub norm_order: NormOrder,
    pub init_noise_scale: f64,
    pub ascent_steps: usize,
    pub ascent_step_size: f64,
    pub proximal_mode: ProximalMode,
    pub mu: f64,
    pub momentum_beta: f64,
}

impl Default for SmartConfig {
    fn default() -> Self {
        Self {
            lambda_s: 1.0,
            epsilon: 1e-5,
            norm_order: NormOrder::Inf,
            init_noise_scale: 1e-5,
            ascent_steps: 1,
            ascent_step_size: 1e-3,
            proximal_mode: ProximalMode::None,
            mu: 1.0,
            momentum_beta: 0.995,
        }
    }
}

impl SmartConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.lambda_s) {
            return Err(Error::config("smart.lambda_s", "must be a nonnegative number"));
        }
        if !finite_nonneg(self.epsilon) {
            return Err(Error::config("smart.epsilon", "must be a nonnegative number"));
        }
        if !(self.init_noise_scale.is_finite() && self.init_noise_scale > 0.0) {
            return Err(Error::config("smart.init_noise_scale", "must be positive"));
        }
        if self.ascent_steps == 0 {
            return Err(Error::config("smart.ascent_steps", "must be positive"));
        }
        if !(self.ascent_step_size.is_finite() && self.ascent_step_size > 0.0) {
            return Err(Error::config("smart.ascent_step_size", "must be positive"));
        }
        if !finite_nonneg(self.mu) {
            return Err(Error::config("smart.mu", "must be a nonnegative number"));
        }
        if self.proximal_mode != ProximalMode::None && self.mu <= 0.0 {
            return Err(Error::config("smart.mu", "must be positive when a proximal mode is set"));
        }
        if !(0.0..1.0).contains(&self.momentum_beta) {
            return Err(Error::config("smart.momentum_beta", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Result of the inner maximization.
#[derive(Debug, Clone)]
pub struct Perturbation {
    /// Detached offset δ with the embeddings' shape.
    pub delta: Tensor,
    /// Set when a non-finite ascent gradient forced δ = 0.
    pub aborted: bool,
}

impl Perturbation {
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.add(&self.delta)?)
    }
}

/// Per-sample ρ-norm of a flat row.
pub fn norm(row: &[f64], order: NormOrder) -> f64 {
    match order {
        NormOrder::Inf => row.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        NormOrder::L2 => row.iter().map(|v| v * v).sum::<f64>().sqrt(),
    }
}

fn project(row: &mut [f64], eps: f64, order: NormOrder) {
    match order {
        NormOrder::Inf => row.iter_mut().for_each(|v| *v = v.clamp(-eps, eps)),
        NormOrder::L2 => {
            let n = norm(row, order);
            if n > eps {
                let s = eps / n;
                row.iter_mut().for_each(|v| *v *= s);
            }
        }
    }
}

fn ascend(row: &mut [f64], grad: &[f64], step: f64, order: NormOrder) {
    let scale = norm(grad, order);
    if scale == 0.0 {
        return;
    }
    for (d, g) in row.iter_mut().zip(grad) {
        *d += step * g / scale;
    }
}

/// Per-sample ρ-norms of `x̃ − x` computed the way the caller would check
/// them (in the tensor dtype, then on the host).
pub fn ball_norms(x: &Tensor, x_tilde: &Tensor, order: NormOrder) -> Result<Vec<f64>> {
    let b = x.dims()[0];
    let diff = to_f64_vec(&x_tilde.sub(x)?)?;
    let per = diff.len() / b.max(1);
    Ok(diff.chunks(per.max(1)).map(|r| norm(r, order)).collect())
}

/// Builds δ for `x` (`[b, l, h]`): Gaussian start, then normalized
/// gradient ascent on Σ_tasks symKL(f(x + δ), clean), each step followed by
/// projection onto the per-sample ε-ball. `model_fn` maps embeddings to
/// per-task logits; `clean` are the logits at `x`, treated as constants.
/// Padded positions (`mask` = 0) are never perturbed.
pub fn smart_perturb<F>(
    x: &Tensor,
    mask: &Tensor,
    clean: &[Tensor],
    mut model_fn: F,
    config: &SmartConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Perturbation>
where
    F: FnMut(&Tensor) -> Result<Vec<Tensor>>,
{
    let x = x.detach();
    let zero = || -> Result<Perturbation> {
        Ok(Perturbation {
            delta: x.zeros_like()?,
            aborted: false,
        })
    };
    if config.epsilon == 0.0 {
        return zero();
    }
    let dims = x.dims().to_vec();
    let (b, l) = (dims[0], dims[1]);
    let per = x.elem_count() / b.max(1);
    let h = per / l.max(1);
    let keep: Vec<f64> = to_f64_vec(mask)?;
    let apply_mask = |delta: &mut [f64]| {
        for (i, v) in delta.iter_mut().enumerate() {
            *v *= keep[i / h];
        }
    };
    let noise = Normal::new(0.0, config.init_noise_scale).map_err(|e| Error::config("smart.init_noise_scale", e.to_string()))?;
    let mut delta: Vec<f64> = (0..x.elem_count()).map(|_| noise.sample(rng)).collect();
    apply_mask(&mut delta);
    delta.chunks_mut(per).for_each(|r| project(r, config.epsilon, config.norm_order));
    let clean: Vec<Tensor> = clean.iter().map(Tensor::detach).collect();

    for _ in 0..config.ascent_steps {
        let var = Var::from_tensor(&Tensor::from_vec(delta.clone(), dims.as_slice(), x.device())?.to_dtype(x.dtype())?)?;
        let adv = model_fn(&x.add(var.as_tensor())?)?;
        if adv.len() != clean.len() {
            return Err(Error::Contract("model_fn returned a different number of heads".into()));
        }
        let mut objective: Option<Tensor> = None;
        for (a, c) in adv.iter().zip(&clean) {
            let term = symmetrized_kl(a, c)?;
            objective = Some(match objective {
                Some(acc) => acc.add(&term)?,
                None => term,
            });
        }
        let Some(objective) = objective else { return zero() };
        let grads = objective.backward()?;
        let grad = match grads.get(var.as_tensor()) {
            Some(g) => to_f64_vec(g)?,
            None => vec![0.0; delta.len()],
        };
        if grad.iter().any(|g| !g.is_finite()) {
            log::warn!("non-finite SMART ascent gradient; perturbation skipped");
            return Ok(Perturbation {
                delta: x.zeros_like()?,
                aborted: true,
            });
        }
        for (row, g) in delta.chunks_mut(per).zip(grad.chunks(per)) {
            ascend(row, g, config.ascent_step_size, config.norm_order);
        }
        apply_mask(&mut delta);
        delta.chunks_mut(per).for_each(|r| project(r, config.epsilon, config.norm_order));
    }

    // Rounding in x + δ can push a coordinate just past ε; shrink until the
    // recomputed difference is inside the ball.
    let mut delta_t = Tensor::from_vec(delta.clone(), dims.as_slice(), x.device())?.to_dtype(x.dtype())?;
    for attempt in 0..32 {
        let norms = ball_norms(&x, &x.add(&delta_t)?, config.norm_order)?;
        if norms.iter().all(|&n| n <= config.epsilon) {
            return Ok(Perturbation {
                delta: delta_t,
                aborted: false,
            });
        }
        for (row, &n) in delta.chunks_mut(per).zip(&norms) {
            if n > config.epsilon {
                let s = (config.epsilon / n * (1.0 - 1e-4 * f64::powi(2.0, attempt))).max(0.0);
                row.iter_mut().for_each(|v| *v *= s);
            }
        }
        delta_t = Tensor::from_vec(delta.clone(), dims.as_slice(), x.device())?.to_dtype(x.dtype())?;
    }
    log::warn!("SMART perturbation could not be made feasible; using δ = 0");
    zero()
}

/// R_s per task: symKL(f(x̃, θ), f(x, θ)) with gradients through both sides.
pub fn smart_regularizer(adversarial: &[Tensor], clean: &[Tensor]) -> Result<Vec<Tensor>> {
    if adversarial.len() != clean.len() {
        return Err(Error::Contract("adversarial and clean head counts differ".into()));
    }
    adversarial.iter().zip(clean).map(|(a, c)| symmetrized_kl(a, c)).collect()
}
