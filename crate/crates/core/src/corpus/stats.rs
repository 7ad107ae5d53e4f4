use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{vocabulary_tokens, Corpus, DatasetSplit, LabeledExample, Task};
use crate::error::{Error, Result};

/// Word-count cut points of the length table: ≤10, 11–20, 21–50, >50.
pub const DEFAULT_LENGTH_BOUNDARIES: [usize; 3] = [10, 20, 50];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStat {
    pub code: usize,
    pub name: String,
    pub count: usize,
    /// Fraction of the total, in [0, 1].
    pub percentage: f64,
    /// Mean whitespace-word count.
    pub mean_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub task: Task,
    pub total: usize,
    /// One row per label that occurs, in code order.
    pub rows: Vec<LabelStat>,
}

impl CorpusStats {
    pub fn row(&self, code: usize) -> Option<&LabelStat> {
        self.rows.iter().find(|r| r.code == code)
    }

    pub fn count(&self, code: usize) -> usize {
        self.row(code).map_or(0, |r| r.count)
    }
}

pub fn compute_label_stats(examples: &[LabeledExample], task: Task) -> Result<CorpusStats> {
    if examples.is_empty() {
        return Err(Error::Contract(
            "label statistics need at least one example".into(),
        ));
    }
    // code -> (count, total words)
    let mut acc: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for ex in examples {
        let e = acc.entry(task.label_of(ex)).or_default();
        e.0 += 1;
        e.1 += ex.word_count();
    }
    let total = examples.len();
    let rows = acc
        .into_iter()
        .map(|(code, (count, words))| LabelStat {
            code,
            name: task.label_name(code).unwrap_or("?").to_owned(),
            count,
            percentage: count as f64 / total as f64,
            mean_length: words as f64 / count as f64,
        })
        .collect();
    Ok(CorpusStats { task, total, rows })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthHistogram {
    pub boundaries: Vec<usize>,
    /// `boundaries.len() + 1` buckets: `(.., b0]`, `(b0, b1]`, ..., `(b_last, ..)`.
    pub bucket_counts: Vec<usize>,
}

impl LengthHistogram {
    pub fn bucket_labels(&self) -> Vec<String> {
        let mut labels = Vec::with_capacity(self.bucket_counts.len());
        let mut lo = 1;
        for &b in &self.boundaries {
            labels.push(format!("{lo}-{b} words"));
            lo = b + 1;
        }
        labels.push(format!("{}+ words", lo - 1));
        labels
    }

    pub fn total(&self) -> usize {
        self.bucket_counts.iter().sum()
    }
}

/// Buckets examples by word count; a count equal to a boundary falls in
/// the bucket the boundary closes.
pub fn compute_length_histogram(examples: &[LabeledExample], boundaries: &[usize]) -> Result<LengthHistogram> {
    if boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Contract(format!(
            "histogram boundaries must be strictly ascending, got {boundaries:?}"
        )));
    }
    let mut bucket_counts = vec![0; boundaries.len() + 1];
    for ex in examples {
        let n = ex.word_count();
        let bucket = boundaries.partition_point(|&b| b < n);
        bucket_counts[bucket] += 1;
    }
    Ok(LengthHistogram {
        boundaries: boundaries.to_vec(),
        bucket_counts,
    })
}

pub fn compute_vocabulary_size(examples: &[LabeledExample]) -> usize {
    let mut vocab = HashSet::new();
    for ex in examples {
        vocab.extend(vocabulary_tokens(&ex.text));
    }
    vocab.len()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStat {
    pub name: String,
    pub count: usize,
    pub ratio: f64,
    pub mean_length: f64,
}

pub fn compute_split_stats(corpus: &Corpus) -> Vec<SplitStat> {
    let total = corpus.len().max(1) as f64;
    let stat = |s: &DatasetSplit| SplitStat {
        name: s.name.to_string(),
        count: s.len(),
        ratio: s.len() as f64 / total,
        mean_length: mean_words(&s.examples),
    };
    // table order: train, test, validation
    vec![stat(&corpus.train), stat(&corpus.test), stat(&corpus.validation)]
}

fn mean_words(examples: &[LabeledExample]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    examples.iter().map(|e| e.word_count()).sum::<usize>() as f64 / examples.len() as f64
}

/// Every corpus-level table, computed over all splits concatenated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub total_samples: usize,
    pub sentiment: CorpusStats,
    pub topic: CorpusStats,
    pub splits: Vec<SplitStat>,
    pub avg_words_per_sample: f64,
    pub vocabulary_size: usize,
    pub length_histogram: LengthHistogram,
}

impl CorpusReport {
    pub fn compute(corpus: &Corpus) -> Result<Self> {
        let all = corpus.all_examples();
        Ok(Self {
            total_samples: all.len(),
            sentiment: compute_label_stats(&all, Task::Sentiment)?,
            topic: compute_label_stats(&all, Task::Topic)?,
            splits: compute_split_stats(corpus),
            avg_words_per_sample: mean_words(&all),
            vocabulary_size: compute_vocabulary_size(&all),
            length_histogram: compute_length_histogram(&all, &DEFAULT_LENGTH_BOUNDARIES)?,
        })
    }

    /// Plain-text aligned tables.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for (title, stats) in [
            ("Sentiment label statistics", &self.sentiment),
            ("Topic label statistics", &self.topic),
        ] {
            let _ = writeln!(out, "{title}");
            let _ = writeln!(
                out,
                "{:<6} {:<20} {:>8} {:>11} {:>12}",
                "Label", "Name", "Count", "Percentage", "Mean Length"
            );
            for r in &stats.rows {
                let _ = writeln!(
                    out,
                    "{:<6} {:<20} {:>8} {:>10.2}% {:>12.2}",
                    r.code,
                    r.name,
                    group_thousands(r.count),
                    r.percentage * 100.0,
                    r.mean_length
                );
            }
            let _ = writeln!(out);
        }
        let _ = writeln!(out, "Dataset split");
        let _ = writeln!(
            out,
            "{:<12} {:>18} {:>13} {:>12}",
            "Subset", "Number of Samples", "Actual Ratio", "Mean Length"
        );
        for s in &self.splits {
            let _ = writeln!(
                out,
                "{:<12} {:>18} {:>13.3} {:>12.2}",
                s.name,
                group_thousands(s.count),
                s.ratio,
                s.mean_length
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "Corpus summary");
        let _ = writeln!(out, "{:<20} {:>10}", "Total samples", group_thousands(self.total_samples));
        let _ = writeln!(out, "{:<20} {:>10.2}", "Avg. words/sample", self.avg_words_per_sample);
        for (label, count) in self
            .length_histogram
            .bucket_labels()
            .iter()
            .zip(&self.length_histogram.bucket_counts)
        {
            let _ = writeln!(out, "{:<20} {:>10}", label, group_thousands(*count));
        }
        let _ = writeln!(out, "{:<20} {:>10}", "Vocabulary size", group_thousands(self.vocabulary_size));
        out
    }
}

pub(crate) fn group_thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}
