//! Masked-language-model corruption: choose positions, then mask, replace
//! with a random token, or keep each chosen token.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label value for positions that carry no MLM target.
pub const IGNORE_INDEX: i64 = -100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskingConfig {
    pub select_rate: f64,
    pub mask_fraction: f64,
    pub random_fraction: f64,
    pub keep_fraction: f64,
    pub seed: u64,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        Self {
            select_rate: 0.30,
            mask_fraction: 0.8,
            random_fraction: 0.1,
            keep_fraction: 0.1,
            seed: 0,
        }
    }
}

impl MaskingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.select_rate > 0.0 && self.select_rate < 1.0) {
            return Err(Error::config("masking.select_rate", "must lie in (0, 1)"));
        }
        let fracs = [self.mask_fraction, self.random_fraction, self.keep_fraction];
        if fracs.iter().any(|f| !(*f >= 0.0)) {
            return Err(Error::config("masking", "action fractions must be non-negative"));
        }
        let sum: f64 = fracs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config("masking", format!("action fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MaskAction {
    Mask,
    Random,
    Keep,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequencePlan {
    pub positions: Vec<usize>,
    pub actions: Vec<MaskAction>,
    pub originals: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskingPlan {
    pub sequences: Vec<SequencePlan>,
}

impl MaskingPlan {
    pub fn total_selected(&self) -> usize {
        self.sequences.iter().map(|s| s.positions.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_selected() == 0
    }

    /// Mean number of selected positions per sequence.
    pub fn mean_selected(&self) -> f64 {
        if self.sequences.is_empty() {
            return 0.0;
        }
        self.total_selected() as f64 / self.sequences.len() as f64
    }

    /// `(row, position)` pairs in row-major order.
    pub fn flat_positions(&self) -> Vec<(usize, usize)> {
        self.sequences
            .iter()
            .enumerate()
            .flat_map(|(row, s)| s.positions.iter().map(move |&p| (row, p)))
            .collect()
    }

    /// Original ids at the selected positions, aligned with `flat_positions`.
    pub fn flat_labels(&self) -> Vec<i64> {
        self.sequences
            .iter()
            .flat_map(|s| s.originals.iter().map(|&id| id as i64))
            .collect()
    }
}

/// Selects each maskable position independently with probability
/// `select_rate`, then draws its action with the configured fractions.
pub fn plan_masking(
    ids: &[Vec<u32>],
    maskable: &[Vec<bool>],
    config: &MaskingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<MaskingPlan> {
    config.validate()?;
    if ids.len() != maskable.len() {
        return Err(Error::Contract("ids and maskable rows differ in count".into()));
    }
    let mut sequences = Vec::with_capacity(ids.len());
    for (row, flags) in ids.iter().zip(maskable) {
        if row.len() != flags.len() {
            return Err(Error::Contract("ids and maskable rows differ in length".into()));
        }
        let mut plan = SequencePlan::default();
        for (pos, (&id, &ok)) in row.iter().zip(flags).enumerate() {
            if !ok || rng.gen::<f64>() >= config.select_rate {
                continue;
            }
            let u: f64 = rng.gen();
            let action = if u < config.mask_fraction {
                MaskAction::Mask
            } else if u < config.mask_fraction + config.random_fraction {
                MaskAction::Random
            } else {
                MaskAction::Keep
            };
            plan.positions.push(pos);
            plan.actions.push(action);
            plan.originals.push(id);
        }
        sequences.push(plan);
    }
    Ok(MaskingPlan { sequences })
}

/// Corrupts a copy of `ids` according to `plan` and returns the MLM labels
/// (original id at selected positions, [`IGNORE_INDEX`] elsewhere).
///
/// Random replacements never produce a special token or the original id.
pub fn apply_masking(
    ids: &[Vec<u32>],
    plan: &MaskingPlan,
    mask_token_id: u32,
    vocab_size: usize,
    special_ids: &[u32],
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Vec<u32>>, Vec<Vec<i64>>)> {
    if plan.sequences.len() != ids.len() {
        return Err(Error::Contract("plan and batch differ in sequence count".into()));
    }
    let mut corrupted = ids.to_vec();
    let mut labels: Vec<Vec<i64>> = ids.iter().map(|r| vec![IGNORE_INDEX; r.len()]).collect();
    for (row, seq) in plan.sequences.iter().enumerate() {
        for ((&pos, &action), &orig) in seq.positions.iter().zip(&seq.actions).zip(&seq.originals) {
            if pos >= ids[row].len() || ids[row][pos] != orig {
                return Err(Error::Contract(format!(
                    "plan position ({row}, {pos}) does not match the batch"
                )));
            }
            labels[row][pos] = orig as i64;
            corrupted[row][pos] = match action {
                MaskAction::Mask => mask_token_id,
                MaskAction::Keep => orig,
                MaskAction::Random => random_replacement(orig, vocab_size, special_ids, rng)?,
            };
        }
    }
    Ok((corrupted, labels))
}

fn random_replacement(orig: u32, vocab_size: usize, special_ids: &[u32], rng: &mut ChaCha8Rng) -> Result<u32> {
    let forbidden = |id: u32| id == orig || special_ids.contains(&id);
    let available = (0..vocab_size as u32).filter(|&id| !forbidden(id)).take(1).count();
    if available == 0 {
        return Err(Error::Contract("no token available for random replacement".into()));
    }
    loop {
        let id = rng.gen_range(0..vocab_size as u32);
        if !forbidden(id) {
            return Ok(id);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn nothing_maskable_gives_empty_plan() {
        let ids = vec![vec![2, 3, 0, 0]];
        let maskable = vec![vec![false; 4]];
        let plan = plan_masking(&ids, &maskable, &MaskingConfig::default(), &mut rng(0)).unwrap();
        assert!(plan.is_empty());
        assert_eq!(plan.mean_selected(), 0.0);
    }

    #[test]
    fn default_select_rate_is_thirty_percent() {
        assert_eq!(MaskingConfig::default().select_rate, 0.30);
    }

    #[test]
    fn monte_carlo_rates_match_config() {
        let (n, len) = (10_000usize, 100usize);
        let ids = vec![vec![7u32; len]; n];
        let maskable = vec![vec![true; len]; n];
        let plan = plan_masking(&ids, &maskable, &MaskingConfig::default(), &mut rng(2024)).unwrap();
        let selected = plan.total_selected() as f64;
        assert!((selected / (n * len) as f64 - 0.30).abs() <= 0.01);
        let share = |a: MaskAction| {
            plan.sequences.iter().flat_map(|s| &s.actions).filter(|&&x| x == a).count() as f64 / selected
        };
        assert!((share(MaskAction::Mask) - 0.8).abs() <= 0.02);
        assert!((share(MaskAction::Random) - 0.1).abs() <= 0.02);
        assert!((share(MaskAction::Keep) - 0.1).abs() <= 0.02);
    }

    #[test]
    fn keep_only_plan_leaves_ids_unchanged() {
        let ids = vec![vec![2, 10, 11, 12, 3]];
        let plan = MaskingPlan {
            sequences: vec![SequencePlan {
                positions: vec![1, 3],
                actions: vec![MaskAction::Keep, MaskAction::Keep],
                originals: vec![10, 12],
            }],
        };
        let (out, labels) = apply_masking(&ids, &plan, 4, 50, &[0, 1, 2, 3, 4], &mut rng(1)).unwrap();
        assert_eq!(out, ids);
        assert_eq!(labels[0], vec![IGNORE_INDEX, 10, IGNORE_INDEX, 12, IGNORE_INDEX]);
    }

    #[test]
    fn labels_record_pre_corruption_ids() {
        let ids: Vec<Vec<u32>> = (0..20).map(|r| (0..30).map(|p| 5 + ((r * 7 + p) % 40) as u32).collect()).collect();
        let maskable = vec![vec![true; 30]; 20];
        let mut r = rng(3);
        let plan = plan_masking(&ids, &maskable, &MaskingConfig::default(), &mut r).unwrap();
        let (out, labels) = apply_masking(&ids, &plan, 4, 45, &[0, 1, 2, 3, 4], &mut r).unwrap();
        for (row, seq) in plan.sequences.iter().enumerate() {
            for (&pos, &action) in seq.positions.iter().zip(&seq.actions) {
                assert_eq!(labels[row][pos], ids[row][pos] as i64);
                match action {
                    MaskAction::Mask => assert_eq!(out[row][pos], 4),
                    MaskAction::Keep => assert_eq!(out[row][pos], ids[row][pos]),
                    MaskAction::Random => assert_ne!(out[row][pos], ids[row][pos]),
                }
            }
        }
    }

    #[test]
    fn random_replacement_never_returns_original_or_special() {
        let specials = [0, 1, 2, 3, 4];
        let mut r = rng(9);
        for i in 0..10_000u32 {
            let orig = 5 + i % 5;
            let id = random_replacement(orig, 10, &specials, &mut r).unwrap();
            assert_ne!(id, orig);
            assert!(!specials.contains(&id));
        }
    }

    #[test]
    fn impossible_replacement_is_an_error() {
        assert!(random_replacement(5, 6, &[0, 1, 2, 3, 4], &mut rng(0)).is_err());
    }

    #[test]
    fn invalid_fractions_rejected() {
        let cfg = MaskingConfig {
            keep_fraction: 0.2,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
