use std::collections::HashMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::Task;
use crate::objectives::{cross_entropy, MaskAction, SequencePlan};

const VOCAB: usize = 1000;

fn special() -> SpecialTokens {
    SpecialTokens {
        pad: 0,
        unk: 1,
        cls: 2,
        sep: 3,
        mask: 4,
    }
}

fn config(mlm: bool) -> MultitaskModelConfig {
    MultitaskModelConfig::tiny(VOCAB, &[Task::Sentiment, Task::Topic], mlm)
}

fn model(mlm: bool) -> MultitaskModel {
    MultitaskModel::build(&config(mlm), &Device::Cpu, 7).unwrap()
}

fn random_seqs(n: usize, rng: &mut ChaCha8Rng, max_len: usize) -> Vec<Vec<u32>> {
    (0..n)
        .map(|_| {
            let len = rng.gen_range(1..=max_len);
            let mut s = vec![2];
            s.extend((0..len).map(|_| rng.gen_range(5..VOCAB as u32)));
            s.push(3);
            s
        })
        .collect()
}

fn batch(seqs: &[Vec<u32>]) -> Batch {
    Batch::from_sequences(seqs, special(), &Device::Cpu, DType::F64).unwrap()
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    t.to_vec2::<f64>().unwrap()
}

#[test]
fn builds_two_heads_with_expected_output_maps() {
    let m = model(false);
    assert_eq!(m.params().get("heads.sentiment.out.weight").unwrap().dims(), &[4, 32]);
    assert_eq!(m.params().get("heads.topic.out.weight").unwrap().dims(), &[10, 32]);
    assert!(m.params().get("heads.mlm.decoder.weight").is_none());
    assert!(m.num_parameters() > 0);
    assert!(m.params().all_finite().unwrap());
}

#[test]
fn mlm_head_adds_a_vocab_wide_map() {
    let m = model(true);
    assert_eq!(m.params().get("heads.mlm.decoder.weight").unwrap().dims(), &[VOCAB, 32]);
    assert_eq!(m.head_names().count(), 3);
}

#[test]
fn duplicate_task_name_fails() {
    let mut cfg = config(false);
    cfg.heads.push(HeadSpec::linear(Task::Topic));
    assert!(MultitaskModel::build(&cfg, &Device::Cpu, 0).is_err());
    let mut cfg = config(true);
    cfg.heads[1] = HeadSpec::mlm(VOCAB);
    cfg.heads[1].task_name = "mlm2".into();
    assert!(MultitaskModel::build(&cfg, &Device::Cpu, 0).is_err());
}

#[test]
fn wrong_class_count_fails() {
    let mut cfg = config(false);
    cfg.heads[0].num_classes = 3;
    assert!(MultitaskModel::build(&cfg, &Device::Cpu, 0).is_err());
}

#[test]
fn classification_shape_and_finiteness() {
    let m = model(false);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let b = batch(&random_seqs(8, &mut rng, 12));
    let logits = m.forward_classification(&b, "sentiment", &mut Mode::Eval).unwrap();
    assert_eq!(logits.dims(), &[8, 4]);
    assert!(rows(&logits).iter().flatten().all(|v| v.is_finite()));
    assert!(matches!(
        m.forward_classification(&b, "nope", &mut Mode::Eval),
        Err(Error::UnknownTask(_))
    ));
}

#[test]
fn duplicated_inputs_give_identical_rows() {
    let m = model(false);
    let s = vec![2, 10, 11, 12, 3];
    let logits = m.forward_classification(&batch(&[s.clone(), s]), "topic", &mut Mode::Eval).unwrap();
    let r = rows(&logits);
    assert_eq!(r[0], r[1]);
}

#[test]
fn permuted_batch_permutes_logits() {
    let m = model(false);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let seqs = random_seqs(6, &mut rng, 9);
    let b = batch(&seqs);
    let base = rows(&m.forward_classification(&b, "topic", &mut Mode::Eval).unwrap());
    let order = [4, 0, 5, 2, 1, 3];
    let permuted = rows(&m.forward_classification(&b.select(&order).unwrap(), "topic", &mut Mode::Eval).unwrap());
    for (i, &o) in order.iter().enumerate() {
        for (a, b) in permuted[i].iter().zip(&base[o]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn inference_is_deterministic_and_training_mode_is_not() {
    let m = model(false);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let b = batch(&random_seqs(4, &mut rng, 10));
    let a = rows(&m.forward_classification(&b, "sentiment", &mut Mode::Eval).unwrap());
    let c = rows(&m.forward_classification(&b, "sentiment", &mut Mode::Eval).unwrap());
    assert_eq!(a, c);
    let t1 = rows(&m.forward_classification(&b, "sentiment", &mut Mode::train(1)).unwrap());
    let t2 = rows(&m.forward_classification(&b, "sentiment", &mut Mode::train(1)).unwrap());
    let t3 = rows(&m.forward_classification(&b, "sentiment", &mut Mode::train(2)).unwrap());
    assert_eq!(t1, t2);
    assert_ne!(t1, t3);
}

#[test]
fn id_path_equals_embedding_path_bitwise() {
    let m = model(false);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let b = batch(&random_seqs(5, &mut rng, 15));
    let direct = rows(&m.forward_classification(&b, "topic", &mut Mode::Eval).unwrap());
    let emb = m.embed_inputs(&b, &mut Mode::Eval).unwrap();
    assert_eq!(emb.dims(), &[5, b.width(), 32]);
    let via = rows(&m.forward_from_embeddings(&emb, &b.attention_mask, "topic", &mut Mode::Eval).unwrap());
    assert_eq!(direct, via);
}

#[test]
fn shared_trunk_feeds_every_head_once() {
    let m = model(false);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let b = batch(&random_seqs(3, &mut rng, 6));
    let emb = m.embed_inputs(&b, &mut Mode::Eval).unwrap();
    let before = m.trunk_calls();
    let out = m.forward_tasks(&emb, &b.attention_mask, &["sentiment", "topic"], &mut Mode::Eval).unwrap();
    assert_eq!(m.trunk_calls(), before + 1);
    let trunk = m.trunk_from_embeddings(&emb, &b.attention_mask, &mut Mode::Eval).unwrap();
    for task in ["sentiment", "topic"] {
        let direct = m.head_logits(task, &trunk, &b.attention_mask, &mut Mode::Eval).unwrap();
        assert_eq!(rows(&out[task]), rows(&direct));
    }
}

#[test]
fn head_gradients_are_isolated() {
    let m = model(true);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let b = batch(&random_seqs(4, &mut rng, 8));
    let logits = m.forward_classification(&b, "sentiment", &mut Mode::Eval).unwrap();
    let loss = cross_entropy(&logits, &[0, 1, 2, 3]).unwrap();
    let grads = loss.backward().unwrap();
    for other in ["topic", "mlm"] {
        for name in m.head_parameter_names(other) {
            let var = m.params().get(&name).unwrap();
            if let Some(g) = grads.get(var.as_tensor()) {
                assert!(crate::ops::to_f64_vec(g).unwrap().iter().all(|&v| v == 0.0), "{name}");
            }
        }
    }
    let own = m.params().get("heads.sentiment.out.weight").unwrap();
    let g = crate::ops::to_f64_vec(grads.get(own.as_tensor()).unwrap()).unwrap();
    assert!(g.iter().any(|&v| v != 0.0));
}

#[test]
fn embedding_gradient_matches_finite_difference() {
    let m = model(false);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let b = batch(&random_seqs(3, &mut rng, 7));
    let labels = [1i64, 7, 3];
    let emb = m.embed_inputs(&b, &mut Mode::Eval).unwrap().detach();
    let loss_at = |x: &Tensor| -> f64 {
        let l = m.forward_from_embeddings(x, &b.attention_mask, "topic", &mut Mode::Eval).unwrap();
        crate::ops::scalar_f64(&cross_entropy(&l, &labels).unwrap()).unwrap()
    };
    let var = Var::from_tensor(&emb).unwrap();
    let l = m.forward_from_embeddings(var.as_tensor(), &b.attention_mask, "topic", &mut Mode::Eval).unwrap();
    let grads = cross_entropy(&l, &labels).unwrap().backward().unwrap();
    let g = crate::ops::to_f64_vec(grads.get(var.as_tensor()).unwrap()).unwrap();
    assert!(g.iter().all(|v| v.is_finite()));
    assert!(g.iter().any(|&v| v != 0.0));
    // probe the [CLS] coordinate with the largest gradient
    let idx = (0..32).max_by(|&a, &b| g[a].abs().total_cmp(&g[b].abs())).unwrap();
    let h = 1e-5;
    let mut flat = crate::ops::to_f64_vec(&emb).unwrap();
    flat[idx] += h;
    let plus = loss_at(&Tensor::from_vec(flat.clone(), emb.shape(), &Device::Cpu).unwrap());
    flat[idx] -= 2.0 * h;
    let minus = loss_at(&Tensor::from_vec(flat, emb.shape(), &Device::Cpu).unwrap());
    let fd = (plus - minus) / (2.0 * h);
    assert!((fd - g[idx]).abs() <= 1e-4 * g[idx].abs().max(1e-8), "fd {fd} vs analytic {}", g[idx]);
}

fn cnn_model() -> MultitaskModel {
    let mut cfg = config(false);
    cfg.heads[1] = HeadSpec::cnn(Task::Topic);
    MultitaskModel::build(&cfg, &Device::Cpu, 11).unwrap()
}

#[test]
fn cnn_feature_width_is_filters_times_windows() {
    let m = cnn_model();
    let Head::Cnn(h) = m.head("topic").unwrap() else { panic!("not cnn") };
    assert_eq!(h.pooled_width(), 384);
    assert_eq!(m.params().get("heads.topic.out.weight").unwrap().dims(), &[10, 384]);
    assert!(m.forward_cnn_head(&batch(&[vec![2, 9, 3]]), "sentiment", &mut Mode::Eval).is_err());
}

#[test]
fn cnn_handles_inputs_shorter_than_the_widest_window() {
    let m = cnn_model();
    let b = batch(&[vec![2]]);
    let logits = m.forward_cnn_head(&b, "topic", &mut Mode::Eval).unwrap();
    assert_eq!(logits.dims(), &[1, 10]);
    assert!(rows(&logits)[0].iter().all(|v| v.is_finite()));
}

#[test]
fn cnn_pooling_ignores_appended_padding() {
    let m = cnn_model();
    for seq in [vec![2u32, 17, 3], vec![2, 40, 41, 42, 43, 44, 3]] {
        let short = batch(std::slice::from_ref(&seq));
        let mut with_long = vec![seq.clone(), seq.clone()];
        with_long[1].extend(std::iter::repeat_n(50u32, 6));
        let padded = batch(&with_long);
        let a = rows(&m.forward_cnn_head(&short, "topic", &mut Mode::Eval).unwrap());
        let b = rows(&m.forward_cnn_head(&padded, "topic", &mut Mode::Eval).unwrap());
        assert_eq!(padded.width(), seq.len() + 6);
        for (x, y) in a[0].iter().zip(&b[0]) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }
}

fn plan_at(positions: &[usize], seq: &[u32], action: MaskAction) -> MaskingPlan {
    MaskingPlan {
        sequences: vec![SequencePlan {
            positions: positions.to_vec(),
            actions: vec![action; positions.len()],
            originals: positions.iter().map(|&p| seq[p]).collect(),
        }],
    }
}

#[test]
fn mlm_logits_only_at_selected_positions() {
    let m = model(true);
    let mut seq = vec![2u32];
    seq.extend(10..28);
    seq.push(3);
    assert_eq!(seq.len(), 20);
    let b = batch(std::slice::from_ref(&seq));
    let plan = plan_at(&[1, 5, 9], &seq, MaskAction::Keep);
    let out = m.forward_mlm(&b, Some(&plan), &mut Mode::Eval).unwrap();
    assert_eq!(out.logits.as_ref().unwrap().dims(), &[3, VOCAB]);
    let dense = out.dense_labels();
    assert_eq!(dense[0].iter().filter(|&&l| l != crate::objectives::IGNORE_INDEX).count(), 3);
    assert_eq!(dense[0][5], seq[5] as i64);

    let empty = m.forward_mlm(&b, Some(&plan_at(&[], &seq, MaskAction::Mask)), &mut Mode::Eval).unwrap();
    assert!(empty.logits.is_none() && empty.labels.is_empty());
    assert!(matches!(m.forward_mlm(&b, None, &mut Mode::Eval), Err(Error::Contract(_))));
    assert!(model(false).forward_mlm(&b, Some(&plan), &mut Mode::Eval).is_err());
}

#[test]
fn parameters_round_trip_bitwise() {
    let m = model(true);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.safetensors");
    m.save_parameters(&path).unwrap();
    let other = MultitaskModel::build(&config(true), &Device::Cpu, 99).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let b = batch(&random_seqs(4, &mut rng, 9));
    let before = rows(&other.forward_classification(&b, "topic", &mut Mode::Eval).unwrap());
    other.load_parameters(&path).unwrap();
    let after = rows(&other.forward_classification(&b, "topic", &mut Mode::Eval).unwrap());
    let want = rows(&m.forward_classification(&b, "topic", &mut Mode::Eval).unwrap());
    assert_ne!(before, want);
    assert_eq!(after, want);

    let dup = m.duplicate().unwrap();
    assert_eq!(rows(&dup.forward_classification(&b, "topic", &mut Mode::Eval).unwrap()), want);
}

#[test]
fn mismatched_head_shape_names_the_layer() {
    let m = model(false);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.safetensors");
    m.save_parameters(&path).unwrap();
    let mut cfg = config(false);
    cfg.heads[1] = HeadSpec::cnn(Task::Topic);
    let other = MultitaskModel::build(&cfg, &Device::Cpu, 0).unwrap();
    match other.load_parameters(&path) {
        Err(Error::Build { layer, .. }) => assert!(layer.starts_with("heads.topic")),
        other => panic!("expected build error, got {other:?}"),
    }
}

#[test]
fn pretrained_encoder_names_are_remapped() {
    let donor = model(false);
    let dir = tempfile::tempdir().unwrap();
    let mut archive: HashMap<String, Tensor> = HashMap::new();
    for (name, var) in donor.params().iter() {
        let Some(rest) = name.strip_prefix("bert.") else { continue };
        let mut renamed = format!("roberta.{rest}");
        if renamed.ends_with("LayerNorm.weight") {
            renamed = renamed.replace("LayerNorm.weight", "LayerNorm.gamma");
        }
        archive.insert(renamed, var.as_tensor().to_dtype(DType::F32).unwrap());
    }
    archive.insert("lm_head.bias".into(), Tensor::zeros(VOCAB, DType::F32, &Device::Cpu).unwrap());
    candle_core::safetensors::save(&archive, dir.path().join("model.safetensors")).unwrap();

    let mut cfg = config(false);
    cfg.encoder.checkpoint = Some(dir.path().to_path_buf());
    let loaded = MultitaskModel::build(&cfg, &Device::Cpu, 123).unwrap();
    let w = |m: &MultitaskModel, n: &str| crate::ops::to_f64_vec(m.params().get(n).unwrap().as_tensor()).unwrap();
    let name = "bert.encoder.layer.1.attention.output.LayerNorm.weight";
    let a = w(&donor, name);
    let b = w(&loaded, name);
    assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-6));
    assert_ne!(w(&donor, "heads.topic.out.weight"), w(&loaded, "heads.topic.out.weight"));

    archive.retain(|k, _| !k.contains("layer.1.output.dense"));
    candle_core::safetensors::save(&archive, dir.path().join("model.safetensors")).unwrap();
    match MultitaskModel::build(&cfg, &Device::Cpu, 0) {
        Err(Error::Build { layer, .. }) => assert!(layer.contains("layer.1.output.dense")),
        other => panic!("expected build error, got {other:?}"),
    }
    cfg.encoder.checkpoint = Some(dir.path().join("missing"));
    assert!(MultitaskModel::build(&cfg, &Device::Cpu, 0).is_err());
}
