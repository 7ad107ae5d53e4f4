use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, DatasetSplit, LabeledExample, Sentiment, SplitName, Topic};
use crate::error::{Error, Result};

/// Train / validation / test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            validation: 0.1,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.validation, self.test];
        if all.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::config("ratios", "every ratio must be positive"));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config("ratios", format!("ratios sum to {sum}, expected 1.0")));
        }
        Ok(())
    }

    /// Per-split counts for a stratum of `n` examples.
    ///
    /// Largest-remainder allocation, ties broken train, test, validation.
    /// Strata smaller than three fill train, then test, then validation.
    pub(crate) fn allocate(&self, n: usize) -> [usize; 3] {
        // [train, validation, test]
        if n < 3 {
            return match n {
                0 => [0, 0, 0],
                1 => [1, 0, 0],
                _ => [1, 0, 1],
            };
        }
        let shares = [self.train, self.validation, self.test].map(|r| r * n as f64);
        let mut counts = shares.map(|s| s.floor() as usize);
        let mut left = n - counts.iter().sum::<usize>();
        // priority among equal remainders: train (0), test (2), validation (1)
        let mut order = [0usize, 2, 1];
        order.sort_by(|&a, &b| {
            let ra = shares[a] - shares[a].floor();
            let rb = shares[b] - shares[b].floor();
            rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal)
        });
        for &k in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[k] += 1;
            left -= 1;
        }
        counts
    }
}

/// Re-splits `examples` stratified on the (sentiment, topic) pair.
///
/// Output splits keep the input order; only membership is randomized.
pub fn stratified_split(examples: &[LabeledExample], ratios: SplitRatios, seed: u64) -> Result<Corpus> {
    ratios.validate()?;
    let mut strata: BTreeMap<(Sentiment, Topic), Vec<usize>> = BTreeMap::new();
    for (idx, ex) in examples.iter().enumerate() {
        strata.entry((ex.sentiment, ex.topic)).or_default().push(idx);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![SplitName::Train; examples.len()];
    for members in strata.values_mut() {
        members.shuffle(&mut rng);
        let [n_train, n_val, _] = ratios.allocate(members.len());
        for (rank, &idx) in members.iter().enumerate() {
            assignment[idx] = if rank < n_train {
                SplitName::Train
            } else if rank < n_train + n_val {
                SplitName::Validation
            } else {
                SplitName::Test
            };
        }
    }
    let mut parts: [Vec<LabeledExample>; 3] = Default::default();
    for (ex, split) in examples.iter().zip(assignment) {
        parts[split as usize].push(ex.clone());
    }
    let [train, validation, test] = parts;
    Ok(Corpus {
        train: DatasetSplit::new(SplitName::Train, train),
        validation: DatasetSplit::new(SplitName::Validation, validation),
        test: DatasetSplit::new(SplitName::Test, test),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(n: usize) -> Vec<LabeledExample> {
        (0..n)
            .map(|i| LabeledExample::new(format!("e{i}"), "x", Sentiment::Neutral, Topic::Other))
            .collect()
    }

    #[test]
    fn single_stratum_of_ten_divides_exactly() {
        let c = stratified_split(&uniform(10), SplitRatios::default(), 3).unwrap();
        assert_eq!((c.train.len(), c.validation.len(), c.test.len()), (7, 1, 2));
    }

    #[test]
    fn tiny_strata_follow_fallback_order() {
        let r = SplitRatios::default();
        assert_eq!(r.allocate(1), [1, 0, 0]);
        assert_eq!(r.allocate(2), [1, 0, 1]);
        assert_eq!(r.allocate(3), [2, 0, 1]);
    }

    #[test]
    fn invalid_ratios_rejected() {
        let bad = SplitRatios {
            train: 0.7,
            validation: 0.2,
            test: 0.2,
        };
        assert!(stratified_split(&uniform(4), bad, 0).is_err());
        let neg = SplitRatios {
            train: 1.1,
            validation: -0.1,
            test: 0.0,
        };
        assert!(neg.validate().is_err());
    }
}
