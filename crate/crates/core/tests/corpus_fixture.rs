use std::path::PathBuf;

use esc_core::corpus::{load_corpus, CorpusReport, DatasetSource};

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/corpus10.jsonl")
}

#[test]
fn fixture_tables_match_hand_counts() {
    let corpus = load_corpus(&DatasetSource::Path(fixture())).unwrap();
    let r = CorpusReport::compute(&corpus).unwrap();
    assert_eq!(r.total_samples, 10);
    let split_counts: Vec<usize> = r.splits.iter().map(|s| s.count).collect();
    assert_eq!(split_counts, [6, 2, 2]);

    let sentiment: Vec<usize> = (0..4).map(|c| r.sentiment.count(c)).collect();
    assert_eq!(sentiment, [5, 2, 2, 1]);
    let means: Vec<f64> = (0..4).map(|c| r.sentiment.row(c).unwrap().mean_length).collect();
    assert_eq!(means, [8.6, 6.5, 5.5, 2.0]);

    let topic: Vec<usize> = (0..10).map(|c| r.topic.count(c)).collect();
    assert_eq!(topic, [1, 1, 1, 2, 1, 1, 1, 0, 1, 1]);
    assert!(r.topic.row(7).is_none());

    assert_eq!(r.length_histogram.bucket_counts, [7, 3, 0, 0]);
    assert!((r.avg_words_per_sample - 6.9).abs() < 1e-12);
    assert_eq!(r.vocabulary_size, 62);
}
