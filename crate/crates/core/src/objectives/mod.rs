//! Loss mathematics: MLM masking, cross-entropy, symmetrized KL, SMART,
//! proximal terms and the total-loss composition.

mod losses;
mod masking;
mod proximal;
mod smart;
mod total;

pub use losses::{cross_entropy, symmetrized_kl};
pub use masking::{apply_masking, plan_masking, MaskAction, MaskingConfig, MaskingPlan, SequencePlan, IGNORE_INDEX};
pub use proximal::{bregman_proximal_term, ProximalReference};
pub use smart::{ball_norms, norm, smart_perturb, smart_regularizer, NormOrder, Perturbation, ProximalMode, SmartConfig};
pub use total::{total_loss, LossBreakdown, LossTerms, SigmaMode};
