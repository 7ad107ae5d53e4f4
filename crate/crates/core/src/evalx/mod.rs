//! Accuracy, macro/weighted F1, confusion matrices and report rendering.

mod report;

use serde::{Deserialize, Serialize};

use crate::corpus::Task;
use crate::error::{Error, Result};

pub use report::{render_report, ReportRow, RenderedReport};

/// Gold labels and aligned predictions for one task.
///
/// A `None` prediction is an abstention (for example an unparseable LLM
/// reply). It is scored as wrong: a false negative for the gold class and a
/// false positive for no class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub task: String,
    pub gold: Vec<usize>,
    pub predicted: Vec<Option<usize>>,
}

impl PredictionSet {
    pub fn new(task: impl Into<String>, gold: Vec<usize>, predicted: Vec<usize>) -> Self {
        Self {
            task: task.into(),
            gold,
            predicted: predicted.into_iter().map(Some).collect(),
        }
    }

    pub fn with_abstentions(task: impl Into<String>, gold: Vec<usize>, predicted: Vec<Option<usize>>) -> Self {
        Self {
            task: task.into(),
            gold,
            predicted,
        }
    }

    pub fn len(&self) -> usize {
        self.gold.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gold.is_empty()
    }

    fn check(&self, num_classes: usize) -> Result<()> {
        if self.gold.is_empty() {
            return Err(Error::Contract("empty prediction set".into()));
        }
        if self.gold.len() != self.predicted.len() {
            return Err(Error::Contract(format!(
                "{} gold labels but {} predictions",
                self.gold.len(),
                self.predicted.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::Contract("num_classes must be positive".into()));
        }
        let bad = self
            .gold
            .iter()
            .copied()
            .chain(self.predicted.iter().flatten().copied())
            .find(|&c| c >= num_classes);
        if let Some(c) = bad {
            return Err(Error::Contract(format!("label {c} outside [0, {num_classes})")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub total: usize,
    #[serde(default)]
    pub abstentions: usize,
}

/// Rows are gold classes, columns predicted classes. Abstentions are kept
/// per gold class outside the grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub task: String,
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    pub abstentions: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    /// Gold support of each class (grid row plus abstentions).
    pub fn supports(&self) -> Vec<u64> {
        self.counts
            .iter()
            .zip(&self.abstentions)
            .map(|(row, a)| row.iter().sum::<u64>() + a)
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.supports().iter().sum()
    }

    /// Each row divided by its gold support (rows with no support stay 0).
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .zip(self.supports())
            .map(|(row, s)| {
                row.iter()
                    .map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 })
                    .collect()
            })
            .collect()
    }
}

fn class_names(task: &str, num_classes: usize) -> Vec<String> {
    match Task::parse(task) {
        Some(t) if t.num_classes() == num_classes => t.label_names().iter().map(|s| s.to_string()).collect(),
        _ => (0..num_classes).map(|c| c.to_string()).collect(),
    }
}

pub fn confusion_matrix(set: &PredictionSet, num_classes: usize) -> Result<ConfusionMatrix> {
    set.check(num_classes)?;
    let mut counts = vec![vec![0u64; num_classes]; num_classes];
    let mut abstentions = vec![0u64; num_classes];
    for (&g, p) in set.gold.iter().zip(&set.predicted) {
        match p {
            Some(p) => counts[g][*p] += 1,
            None => abstentions[g] += 1,
        }
    }
    Ok(ConfusionMatrix {
        task: set.task.clone(),
        labels: class_names(&set.task, num_classes),
        counts,
        abstentions,
    })
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy, per-class precision/recall/F1, macro-F1 (every class counts,
/// 0/0 is 0) and support-weighted F1.
pub fn compute_metrics(set: &PredictionSet, num_classes: usize) -> Result<MetricsReport> {
    let cm = confusion_matrix(set, num_classes)?;
    let supports = cm.supports();
    let mut per_class = Vec::with_capacity(num_classes);
    let mut correct = 0u64;
    for c in 0..num_classes {
        let tp = cm.counts[c][c];
        correct += tp;
        let predicted: u64 = cm.counts.iter().map(|row| row[c]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, supports[c]);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassMetrics {
            precision,
            recall,
            f1,
            support: supports[c] as usize,
        });
    }
    let total = set.len();
    let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / num_classes as f64;
    let weighted_f1 = per_class.iter().map(|m| m.f1 * m.support as f64).sum::<f64>() / total as f64;
    Ok(MetricsReport {
        task: set.task.clone(),
        accuracy: correct as f64 / total as f64,
        macro_f1,
        weighted_f1,
        per_class,
        total,
        abstentions: cm.abstentions.iter().sum::<u64>() as usize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Pairwise counting straight from the definitions, no confusion matrix.
    fn oracle(gold: &[usize], pred: &[Option<usize>], k: usize) -> (f64, f64, f64) {
        let n = gold.len() as f64;
        let acc = gold.iter().zip(pred).filter(|(g, p)| Some(**g) == **p).count() as f64 / n;
        let mut f1s = Vec::new();
        let mut weighted = 0.0;
        for c in 0..k {
            let tp = gold.iter().zip(pred).filter(|(g, p)| **g == c && **p == Some(c)).count() as f64;
            let fp = gold.iter().zip(pred).filter(|(g, p)| **g != c && **p == Some(c)).count() as f64;
            let fn_ = gold.iter().zip(pred).filter(|(g, p)| **g == c && **p != Some(c)).count() as f64;
            // F1 = 2TP / (2TP + FP + FN), zero when undefined
            let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
            f1s.push(f1);
            weighted += f1 * gold.iter().filter(|&&g| g == c).count() as f64;
        }
        (acc, f1s.iter().sum::<f64>() / k as f64, weighted / n)
    }

    #[test]
    fn perfect_predictions_score_one() {
        let gold = vec![0, 1, 2, 3, 1, 1];
        let r = compute_metrics(&PredictionSet::new("sentiment", gold.clone(), gold.clone()), 4).unwrap();
        assert_eq!((r.accuracy, r.macro_f1, r.weighted_f1), (1.0, 1.0, 1.0));
        let cm = confusion_matrix(&PredictionSet::new("sentiment", gold.clone(), gold), 4).unwrap();
        assert_eq!(cm.counts[1][1], 3);
        assert_eq!(cm.counts.iter().flatten().sum::<u64>(), 6);
        assert_eq!(cm.labels[0], "Neutral");
    }

    #[test]
    fn single_off_diagonal_cell() {
        let cm = confusion_matrix(&PredictionSet::new("t", vec![2], vec![3]), 4).unwrap();
        assert_eq!(cm.counts[2][3], 1);
        assert_eq!(cm.total(), 1);
    }

    #[test]
    fn majority_predictor_closed_form() {
        // class proportions of the published sentiment labels
        let counts = [22_773usize, 4_148, 5_250, 845];
        let gold: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
        let pred = vec![0; gold.len()];
        let r = compute_metrics(&PredictionSet::new("sentiment", gold.clone(), pred), 4).unwrap();
        let p = counts[0] as f64 / gold.len() as f64;
        assert!((r.accuracy - p).abs() < 1e-12);
        let f1 = 2.0 * p / (1.0 + p);
        assert!((r.macro_f1 - f1 / 4.0).abs() < 1e-12);
        assert!((r.macro_f1 - 0.204).abs() < 0.002);
    }

    #[test]
    fn abstentions_are_wrong_and_not_false_positives() {
        let set = PredictionSet::with_abstentions("t", vec![0, 0, 1], vec![Some(0), None, Some(1)]);
        let r = compute_metrics(&set, 2).unwrap();
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.per_class[0].precision, 1.0);
        assert_eq!(r.per_class[0].recall, 0.5);
        assert_eq!(r.abstentions, 1);
        let (a, m, w) = oracle(&set.gold, &set.predicted, 2);
        assert!((a - r.accuracy).abs() < 1e-12 && (m - r.macro_f1).abs() < 1e-12 && (w - r.weighted_f1).abs() < 1e-12);
        let cm = confusion_matrix(&set, 2).unwrap();
        assert_eq!(cm.supports(), vec![2, 1]);
    }

    #[test]
    fn contract_errors() {
        assert!(compute_metrics(&PredictionSet::new("t", vec![0, 1], vec![0]), 2).is_err());
        assert!(compute_metrics(&PredictionSet::new("t", vec![0, 2], vec![0, 1]), 2).is_err());
        assert!(compute_metrics(&PredictionSet::new("t", vec![], vec![]), 2).is_err());
    }

    #[test]
    fn random_sets_match_definition_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in [2usize, 4, 10] {
            for _ in 0..200 {
                let n = rng.gen_range(1..200);
                let gold: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
                let pred: Vec<Option<usize>> = (0..n)
                    .map(|_| if rng.gen_bool(0.05) { None } else { Some(rng.gen_range(0..k)) })
                    .collect();
                let set = PredictionSet::with_abstentions("t", gold.clone(), pred.clone());
                let r = compute_metrics(&set, k).unwrap();
                let (a, m, w) = oracle(&gold, &pred, k);
                assert!((r.accuracy - a).abs() < 1e-9);
                assert!((r.macro_f1 - m).abs() < 1e-9);
                assert!((r.weighted_f1 - w).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn row_normalized_rows_sum_to_one_without_abstentions() {
        let cm = confusion_matrix(&PredictionSet::new("t", vec![0, 0, 1, 1, 1], vec![0, 1, 1, 1, 0]), 3).unwrap();
        let rn = cm.row_normalized();
        assert!((rn[0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((rn[1][1] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(rn[2], vec![0.0; 3]);
    }

    proptest! {
        #[test]
        fn metrics_bounded_and_aggregates_hold(pairs in proptest::collection::vec((0usize..5, 0usize..5), 1..80)) {
            let gold: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let pred: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let r = compute_metrics(&PredictionSet::new("t", gold, pred), 5).unwrap();
            for v in [r.accuracy, r.macro_f1, r.weighted_f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let macro_ = r.per_class.iter().map(|c| c.f1).sum::<f64>() / 5.0;
            let supp: usize = r.per_class.iter().map(|c| c.support).sum();
            let weighted = r.per_class.iter().map(|c| c.f1 * c.support as f64).sum::<f64>() / supp as f64;
            prop_assert_eq!(r.macro_f1, macro_);
            prop_assert_eq!(r.weighted_f1, weighted);
        }

        #[test]
        fn joint_permutation_leaves_metrics_unchanged(
            pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..60),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mk = |v: &[(usize, usize)]| PredictionSet::new("t", v.iter().map(|p| p.0).collect(), v.iter().map(|p| p.1).collect());
            let a = compute_metrics(&mk(&pairs), 4).unwrap();
            let b = compute_metrics(&mk(&shuffled), 4).unwrap();
            prop_assert!((a.accuracy - b.accuracy).abs() < 1e-12);
            prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
            prop_assert!((a.weighted_f1 - b.weighted_f1).abs() < 1e-12);
        }
    }
}
