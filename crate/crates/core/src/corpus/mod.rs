//! Dataset types, loading, splitting, and corpus statistics.
//!
//! A corpus is three [`DatasetSplit`]s of [`LabeledExample`]s, each carrying
//! one sentiment label and one topic label.

mod load;
mod split;
mod stats;
pub mod surrogate;

use std::fmt;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;
use unicode_properties::{GeneralCategoryGroup, UnicodeGeneralCategory};

pub use load::{load_corpus, parse_jsonl, write_jsonl, DatasetSource};
pub use split::{stratified_split, SplitRatios};
pub use stats::{
    compute_label_stats, compute_length_histogram, compute_split_stats, compute_vocabulary_size,
    CorpusReport, CorpusStats, LabelStat, LengthHistogram, SplitStat, DEFAULT_LENGTH_BOUNDARIES,
};

/// A closed label vocabulary with stable integer codes.
pub trait Label: Copy + Eq + Ord + std::hash::Hash + fmt::Debug + 'static {
    const COUNT: usize;
    fn all() -> &'static [Self];
    fn code(self) -> usize;
    fn name(self) -> &'static str;

    fn from_code(code: usize) -> Option<Self> {
        Self::all().get(code).copied()
    }

    /// Case-insensitive lookup by display name.
    fn from_name(name: &str) -> Option<Self> {
        let needle = name.trim();
        Self::all()
            .iter()
            .copied()
            .find(|l| l.name().eq_ignore_ascii_case(needle))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sentiment {
    Neutral = 0,
    Positive = 1,
    Negative = 2,
    Toxic = 3,
}

impl Label for Sentiment {
    const COUNT: usize = 4;

    fn all() -> &'static [Self] {
        use Sentiment::*;
        &[Neutral, Positive, Negative, Toxic]
    }

    fn code(self) -> usize {
        self as usize
    }

    fn name(self) -> &'static str {
        match self {
            Sentiment::Neutral => "Neutral",
            Sentiment::Positive => "Positive",
            Sentiment::Negative => "Negative",
            Sentiment::Toxic => "Toxic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Topic {
    Spam = 0,
    News = 1,
    Academic = 2,
    Other = 3,
    Service = 4,
    JobsRecruitment = 5,
    PersonalAffairs = 6,
    SocialAffairs = 7,
    HelpShare = 8,
    ClubEvents = 9,
}

impl Label for Topic {
    const COUNT: usize = 10;

    fn all() -> &'static [Self] {
        use Topic::*;
        &[
            Spam,
            News,
            Academic,
            Other,
            Service,
            JobsRecruitment,
            PersonalAffairs,
            SocialAffairs,
            HelpShare,
            ClubEvents,
        ]
    }

    fn code(self) -> usize {
        self as usize
    }

    fn name(self) -> &'static str {
        match self {
            Topic::Spam => "Spam",
            Topic::News => "News",
            Topic::Academic => "Academic",
            Topic::Other => "Other",
            Topic::Service => "Service",
            Topic::JobsRecruitment => "Jobs & Recruitment",
            Topic::PersonalAffairs => "Personal Affairs",
            Topic::SocialAffairs => "Social Affairs",
            Topic::HelpShare => "Help & Share",
            Topic::ClubEvents => "Club & Events",
        }
    }
}

/// The two classification tasks of the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Sentiment,
    Topic,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Sentiment, Task::Topic];

    pub fn num_classes(self) -> usize {
        match self {
            Task::Sentiment => Sentiment::COUNT,
            Task::Topic => Topic::COUNT,
        }
    }

    pub fn label_names(self) -> Vec<&'static str> {
        match self {
            Task::Sentiment => Sentiment::all().iter().map(|l| l.name()).collect(),
            Task::Topic => Topic::all().iter().map(|l| l.name()).collect(),
        }
    }

    pub fn label_name(self, code: usize) -> Option<&'static str> {
        match self {
            Task::Sentiment => Sentiment::from_code(code).map(Label::name),
            Task::Topic => Topic::from_code(code).map(Label::name),
        }
    }

    /// Gold label code of `example` for this task.
    pub fn label_of(self, example: &LabeledExample) -> usize {
        match self {
            Task::Sentiment => example.sentiment.code(),
            Task::Topic => example.topic.code(),
        }
    }

    /// Head name used by the model for this task.
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Sentiment => "sentiment",
            Task::Topic => "topic",
        }
    }

    pub fn parse(name: &str) -> Option<Task> {
        match name.trim().to_ascii_lowercase().as_str() {
            "sentiment" => Some(Task::Sentiment),
            "topic" => Some(Task::Topic),
            _ => None,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub text: String,
    pub sentiment: Sentiment,
    pub topic: Topic,
}

impl LabeledExample {
    pub fn new(id: impl Into<String>, text: impl Into<String>, sentiment: Sentiment, topic: Topic) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            sentiment,
            topic,
        }
    }

    pub fn word_count(&self) -> usize {
        word_count(&self.text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Validation, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<SplitName> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" | "training" => Some(SplitName::Train),
            "validation" | "valid" | "val" | "dev" => Some(SplitName::Validation),
            "test" | "testing" => Some(SplitName::Test),
            _ => None,
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub examples: Vec<LabeledExample>,
}

impl DatasetSplit {
    pub fn new(name: SplitName, examples: Vec<LabeledExample>) -> Self {
        Self { name, examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// The train / validation / test partitions of one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub train: DatasetSplit,
    pub validation: DatasetSplit,
    pub test: DatasetSplit,
}

impl Corpus {
    pub fn split(&self, name: SplitName) -> &DatasetSplit {
        match name {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }

    pub fn splits(&self) -> [&DatasetSplit; 3] {
        [&self.train, &self.validation, &self.test]
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All examples, train then validation then test.
    pub fn all_examples(&self) -> Vec<LabeledExample> {
        self.splits()
            .iter()
            .flat_map(|s| s.examples.iter().cloned())
            .collect()
    }
}

/// Number of whitespace-separated words after NFC normalization.
pub fn word_count(text: &str) -> usize {
    let normalized: String = text.nfc().collect();
    normalized.split_whitespace().count()
}

/// Vocabulary tokens of `text`: NFC, lowercased, whitespace-split, with
/// leading and trailing punctuation stripped. Empty tokens are dropped.
pub fn vocabulary_tokens(text: &str) -> Vec<String> {
    let normalized: String = text.nfc().collect::<String>().to_lowercase();
    normalized
        .split_whitespace()
        .map(|tok| tok.trim_matches(is_punctuation))
        .filter(|tok| !tok.is_empty())
        .map(str::to_owned)
        .collect()
}

pub(crate) fn is_punctuation(c: char) -> bool {
    c.general_category_group() == GeneralCategoryGroup::Punctuation
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_codes_match_table_columns() {
        assert_eq!(Sentiment::Toxic.code(), 3);
        assert_eq!(Topic::Academic.code(), 2);
        assert_eq!(Topic::ClubEvents.code(), 9);
        assert_eq!(Topic::from_code(5), Some(Topic::JobsRecruitment));
        assert_eq!(Sentiment::from_code(4), None);
        assert_eq!(Topic::from_name("help & share"), Some(Topic::HelpShare));
    }

    #[test]
    fn word_count_uses_whitespace_runs() {
        assert_eq!(word_count("  học   qtkd\tkhó \n không "), 4);
        assert_eq!(word_count(""), 0);
    }

    #[test]
    fn vocabulary_tokens_strip_edge_punctuation() {
        assert_eq!(
            vocabulary_tokens("Học, QTKD? (khó) ... a-b"),
            vec!["học", "qtkd", "khó", "a-b"]
        );
    }
}
