//! Synthetic corpus with the label mix and length profile of the published
//! dataset, for smoke runs where the real data is not on disk.
//!
//! Texts are bags of Vietnamese filler syllables with label-specific cue
//! words mixed in, so a small model has a learnable signal.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;

use super::{stratified_split, Corpus, Label, LabeledExample, Sentiment, SplitRatios, Topic};
use crate::error::Result;

/// Published per-label counts, used as sampling weights.
pub const SENTIMENT_WEIGHTS: [f64; 4] = [22_773.0, 4_148.0, 5_250.0, 845.0];
pub const TOPIC_WEIGHTS: [f64; 10] = [
    405.0, 902.0, 10_512.0, 14_402.0, 2_358.0, 808.0, 1_478.0, 769.0, 670.0, 662.0,
];
const TOPIC_MEAN_WORDS: [f64; 10] = [
    22.71, 59.55, 29.62, 11.40, 30.94, 55.14, 33.17, 67.11, 37.03, 68.82,
];

const FILLER: &[&str] = &[
    "mình", "bạn", "các", "cho", "hỏi", "với", "là", "có", "không", "được", "này", "đó", "thì",
    "mà", "nhé", "ạ", "ơi", "rồi", "cũng", "đã", "sẽ", "đang", "về", "trong", "ngoài", "năm",
    "ngày", "tuần", "tháng", "trường", "lớp", "khoa", "bài", "người", "ai", "gì", "sao", "thế",
    "nào", "khi", "nếu", "vì", "nên", "còn", "vẫn", "lại", "đi", "đến", "làm", "xem", "biết",
    "nghĩ", "thấy", "muốn", "cần", "phải", "nhiều", "ít", "hơn", "nhất", "rất", "quá", "lắm",
    "thôi", "vậy", "luôn", "chưa", "mới", "cũ", "sáng", "chiều", "tối", "nay", "mai", "hôm",
];

fn topic_cues(t: Topic) -> &'static [&'static str] {
    match t {
        Topic::Spam => &["inbox", "link", "sale", "giảm_giá", "follow"],
        Topic::News => &["thông_báo", "tin", "báo", "chính_thức", "cập_nhật"],
        Topic::Academic => &["môn", "thi", "điểm", "học_phần", "giảng_viên", "tín_chỉ"],
        Topic::Other => &["haha", "ừ", "ok", "thật", "chắc"],
        Topic::Service => &["thư_viện", "ký_túc_xá", "học_phí", "phòng_đào_tạo", "thủ_tục"],
        Topic::JobsRecruitment => &["tuyển_dụng", "thực_tập", "lương", "ứng_tuyển", "cv"],
        Topic::PersonalAffairs => &["crush", "tâm_sự", "buồn", "gia_đình", "tình_cảm"],
        Topic::SocialAffairs => &["xã_hội", "chính_sách", "giá", "dịch", "cộng_đồng"],
        Topic::HelpShare => &["chia_sẻ", "tài_liệu", "giúp", "xin", "pass_lại"],
        Topic::ClubEvents => &["clb", "sự_kiện", "đăng_ký", "tình_nguyện", "workshop"],
    }
}

fn sentiment_cues(s: Sentiment) -> &'static [&'static str] {
    match s {
        Sentiment::Neutral => &[],
        Sentiment::Positive => &["tuyệt", "thích", "cảm_ơn", "hay", "vui", "xịn"],
        Sentiment::Negative => &["tệ", "chán", "bực", "thất_vọng", "mệt", "khó_chịu"],
        Sentiment::Toxic => &["ngu", "vl", "đm", "khốn", "óc_chó", "câm"],
    }
}

/// Draws `n` examples with the published label mix.
pub fn generate_examples(n: usize, seed: u64) -> Vec<LabeledExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sent_dist = WeightedIndex::new(SENTIMENT_WEIGHTS).expect("positive weights");
    let topic_dist = WeightedIndex::new(TOPIC_WEIGHTS).expect("positive weights");
    (0..n)
        .map(|i| {
            let sentiment = Sentiment::all()[sent_dist.sample(&mut rng)];
            let topic = Topic::all()[topic_dist.sample(&mut rng)];
            let mean = TOPIC_MEAN_WORDS[topic.code()];
            let len = Poisson::new(mean)
                .map(|p| p.sample(&mut rng) as usize)
                .unwrap_or(mean as usize)
                .max(3);
            let mut words: Vec<&str> = (0..len)
                .map(|_| *FILLER.choose(&mut rng).expect("non-empty"))
                .collect();
            let mut plant = |cues: &[&'static str], k: usize, rng: &mut ChaCha8Rng| {
                for _ in 0..k {
                    if let Some(cue) = cues.choose(rng) {
                        let at = rng.gen_range(0..words.len());
                        words[at] = cue;
                    }
                }
            };
            plant(topic_cues(topic), 1 + len / 12, &mut rng);
            plant(sentiment_cues(sentiment), 1 + len / 15, &mut rng);
            LabeledExample::new(format!("syn-{seed}-{i:06}"), words.join(" "), sentiment, topic)
        })
        .collect()
}

/// A full surrogate corpus split 7:1:2 on the (sentiment, topic) pair.
pub fn generate_corpus(n: usize, seed: u64) -> Result<Corpus> {
    stratified_split(&generate_examples(n, seed), SplitRatios::default(), seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate_examples(50, 7), generate_examples(50, 7));
        assert_ne!(generate_examples(50, 7), generate_examples(50, 8));
    }

    #[test]
    fn every_text_is_non_empty() {
        for ex in generate_examples(200, 1) {
            assert!(ex.word_count() >= 3);
        }
    }
}
