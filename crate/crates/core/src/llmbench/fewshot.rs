use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Label, LabeledExample, Sentiment, Topic};
use crate::error::{Error, Result};

/// Ten training demonstrations, one per topic, jointly covering every sentiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotSet {
    pub examples: Vec<LabeledExample>,
}

impl FewShotSet {
    /// Recounts label coverage.
    pub fn validate(&self) -> Result<()> {
        if self.examples.len() != Topic::COUNT {
            return Err(Error::Coverage(format!("expected {} examples, got {}", Topic::COUNT, self.examples.len())));
        }
        let topics: BTreeSet<Topic> = self.examples.iter().map(|e| e.topic).collect();
        if let Some(t) = Topic::all().iter().find(|t| !topics.contains(t)) {
            return Err(Error::Coverage(format!("topic `{}` not covered", t.name())));
        }
        let sentiments: BTreeSet<Sentiment> = self.examples.iter().map(|e| e.sentiment).collect();
        if let Some(s) = Sentiment::all().iter().find(|s| !sentiments.contains(s)) {
            return Err(Error::Coverage(format!("sentiment `{}` not covered", s.name())));
        }
        Ok(())
    }
}

/// Picks one example per topic such that all sentiments appear.
///
/// Sentiments are matched to distinct topics by augmenting paths over the
/// (topic, sentiment) pairs present in `train`; the seed only permutes
/// candidate order, so the result is deterministic per seed.
pub fn select_fewshot(train: &[LabeledExample], seed: u64) -> Result<FewShotSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pools: Vec<Vec<Vec<&LabeledExample>>> = vec![vec![Vec::new(); Sentiment::COUNT]; Topic::COUNT];
    for e in train {
        pools[e.topic.code()][e.sentiment.code()].push(e);
    }
    for t in Topic::all() {
        if pools[t.code()].iter().all(Vec::is_empty) {
            return Err(Error::Coverage(format!("topic `{}` is absent from the training split", t.name())));
        }
    }
    for s in Sentiment::all() {
        if pools.iter().all(|p| p[s.code()].is_empty()) {
            return Err(Error::Coverage(format!("sentiment `{}` is absent from the training split", s.name())));
        }
    }

    let mut topic_order: Vec<usize> = (0..Topic::COUNT).collect();
    topic_order.shuffle(&mut rng);
    let mut owner: Vec<Option<usize>> = vec![None; Topic::COUNT];
    for s in 0..Sentiment::COUNT {
        let mut seen = vec![false; Topic::COUNT];
        if !augment(s, &pools, &topic_order, &mut owner, &mut seen) {
            let name = Sentiment::all()[s].name();
            return Err(Error::Coverage(format!(
                "cannot cover sentiment `{name}` with one example per topic"
            )));
        }
    }

    let mut examples = Vec::with_capacity(Topic::COUNT);
    for t in 0..Topic::COUNT {
        let candidates: Vec<&LabeledExample> = match owner[t] {
            Some(s) => pools[t][s].clone(),
            None => pools[t].iter().flatten().copied().collect(),
        };
        let pick = candidates.choose(&mut rng).expect("non-empty pool");
        examples.push((*pick).clone());
    }
    let set = FewShotSet { examples };
    set.validate()?;
    Ok(set)
}

fn augment(
    s: usize,
    pools: &[Vec<Vec<&LabeledExample>>],
    order: &[usize],
    owner: &mut [Option<usize>],
    seen: &mut [bool],
) -> bool {
    for &t in order {
        if seen[t] || pools[t][s].is_empty() {
            continue;
        }
        seen[t] = true;
        if owner[t].is_none_or(|other| augment(other, pools, order, owner, seen)) {
            owner[t] = Some(s);
            return true;
        }
    }
    false
}
