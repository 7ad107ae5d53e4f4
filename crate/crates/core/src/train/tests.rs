use candle_core::{Device, Tensor};

use super::*;
use crate::corpus::{surrogate::generate_corpus, Corpus, Task};
use crate::model::{Mode, MultitaskModel, TextTokenizer};
use crate::objectives::{ProximalMode, SmartConfig};
use crate::Error;

fn corpus(n: usize) -> Corpus {
    generate_corpus(n, 17).unwrap()
}

fn base_config() -> TrainerConfig {
    TrainerConfig {
        epochs: 2,
        batch_size: 8,
        eval_batch_size: 32,
        learning_rate: 1e-3,
        max_sequence_length: 48,
        seed: 5,
        ..TrainerConfig::default()
    }
}

fn recipe() -> ModelRecipe {
    ModelRecipe {
        tiny_vocab_size: 300,
        ..ModelRecipe::tiny()
    }
}

fn build(c: &Corpus, cfg: &TrainerConfig) -> (MultitaskModel, TextTokenizer) {
    let tasks: Vec<Task> = cfg.tasks.iter().map(|t| Task::parse(t).unwrap()).collect();
    recipe().build(&tasks, cfg.use_mlm, &c.train.examples, &Device::Cpu, cfg.seed).unwrap()
}

fn run(c: &Corpus, cfg: &TrainerConfig) -> TrainOutcome {
    let (m, t) = build(c, cfg);
    train(m, t, &c.train.examples, &c.validation.examples, cfg, None).unwrap()
}

fn params_of(m: &MultitaskModel) -> Vec<(String, Vec<f64>)> {
    m.params()
        .iter()
        .map(|(n, v)| (n.to_owned(), crate::ops::to_f64_vec(v.as_tensor()).unwrap()))
        .collect()
}

fn logits(m: &MultitaskModel, t: &TextTokenizer, c: &Corpus) -> Vec<Vec<f64>> {
    let texts: Vec<&str> = c.test.examples.iter().take(6).map(|e| e.text.as_str()).collect();
    let b = t.batch(&texts, 48, m.device(), m.dtype()).unwrap();
    let l: Tensor = m.forward_classification(&b, "topic", &mut Mode::Eval).unwrap();
    l.to_vec2::<f64>().unwrap()
}

#[test]
fn zero_epochs_returns_initial_model() {
    let c = corpus(60);
    let cfg = TrainerConfig {
        epochs: 0,
        ..base_config()
    };
    let (m, t) = build(&c, &cfg);
    let before = params_of(&m);
    let out = train(m, t, &c.train.examples, &c.validation.examples, &cfg, None).unwrap();
    assert_eq!(params_of(&out.model), before);
    assert_eq!(out.log.records.len(), 0);
}

#[test]
fn fixed_seed_replays_identically() {
    let c = corpus(60);
    let cfg = base_config();
    let a = run(&c, &cfg);
    let b = run(&c, &cfg);
    assert_eq!(a.log.loss_sequence(), b.log.loss_sequence());
    assert_eq!(params_of(&a.model), params_of(&b.model));
    let other = run(&c, &TrainerConfig { seed: 6, ..cfg });
    assert_ne!(a.log.loss_sequence(), other.log.loss_sequence());
}

#[test]
fn step_accounting_per_strategy() {
    let mut c = corpus(200);
    c.train.examples.truncate(100);
    let cfg = TrainerConfig {
        epochs: 1,
        batch_size: 10,
        ..base_config()
    };
    let joint = run(&c, &cfg);
    assert_eq!(joint.log.steps().count(), 10);
    let rr = run(
        &c,
        &TrainerConfig {
            strategy: Strategy::RoundRobin,
            ..cfg.clone()
        },
    );
    assert_eq!(rr.log.steps().count(), 20);
    let tasks: Vec<&str> = rr.log.steps().take(4).map(|s| s.tasks[0].as_str()).collect();
    assert_eq!(tasks, ["sentiment", "topic", "sentiment", "topic"]);
    assert!(rr.log.steps().all(|s| s.tasks.len() == 1 && s.loss.task_losses.len() == 1));
    let steps: Vec<u64> = rr.log.steps().map(|s| s.step).collect();
    assert!(steps.windows(2).all(|w| w[1] == w[0] + 1));
}

#[test]
fn joint_sum_with_mlm_logs_three_components_and_sigma() {
    let c = corpus(40);
    let cfg = TrainerConfig {
        use_mlm: true,
        epochs: 1,
        ..base_config()
    };
    let out = run(&c, &cfg);
    for s in out.log.steps() {
        assert_eq!(s.loss.component_count(), 3);
        assert!(s.loss.sigma.unwrap() > 0.0);
        assert!((s.loss.recompose() - s.loss.total).abs() < 1e-9);
    }
}

#[test]
fn zero_lambda_matches_unregularized_bitwise() {
    let c = corpus(50);
    let plain = run(&c, &base_config());
    let zero = run(
        &c,
        &TrainerConfig {
            smart: Some(SmartConfig {
                lambda_s: 0.0,
                ..SmartConfig::default()
            }),
            ..base_config()
        },
    );
    assert_eq!(plain.log.loss_sequence(), zero.log.loss_sequence());
    assert_eq!(params_of(&plain.model), params_of(&zero.model));
    assert!(zero.log.steps().all(|s| s.loss.smart_terms.len() == 2));
}

#[test]
fn positive_lambda_changes_only_smart_bearing_terms_at_first_step() {
    let c = corpus(50);
    let plain = run(&c, &base_config());
    let smart = run(
        &c,
        &TrainerConfig {
            smart: Some(SmartConfig {
                epsilon: 1e-2,
                init_noise_scale: 1e-2,
                ..SmartConfig::default()
            }),
            ..base_config()
        },
    );
    let (a, b) = (plain.log.steps().next().unwrap(), smart.log.steps().next().unwrap());
    assert_eq!(a.loss.task_losses, b.loss.task_losses);
    assert!(b.loss.smart_terms.values().all(|&r| r > 0.0));
    assert_ne!(a.loss.total, b.loss.total);
    assert_ne!(plain.log.loss_sequence(), smart.log.loss_sequence());
}

fn proximal(mode: ProximalMode, beta: f64) -> TrainerConfig {
    TrainerConfig {
        epochs: 1,
        smart: Some(SmartConfig {
            proximal_mode: mode,
            momentum_beta: beta,
            ..SmartConfig::default()
        }),
        ..base_config()
    }
}

#[test]
fn proximal_term_starts_at_zero_and_momentum_zero_equals_vanilla() {
    let c = corpus(30);
    let vanilla = run(&c, &proximal(ProximalMode::Vanilla, 0.0));
    let momentum = run(&c, &proximal(ProximalMode::Momentum, 0.0));
    let first = vanilla.log.steps().next().unwrap();
    assert_eq!(first.loss.proximal, Some(0.0));
    let v: Vec<_> = vanilla.log.steps().take(3).map(|s| s.loss.clone()).collect();
    let m: Vec<_> = momentum.log.steps().take(3).map(|s| s.loss.clone()).collect();
    assert_eq!(v.len(), 3);
    assert_eq!(v, m);
    assert!(v[1].proximal.unwrap() > 0.0);
    assert!(v[2].proximal.unwrap() > 0.0);
    let slow = run(&c, &proximal(ProximalMode::Momentum, 0.9));
    assert_ne!(slow.log.steps().nth(2).unwrap().loss.proximal, v[2].proximal);
}

#[test]
fn nan_loss_aborts_with_diagnostic_record() {
    let c = corpus(40);
    let cfg = TrainerConfig {
        inject_nan_at_step: Some(2),
        ..base_config()
    };
    let dir = tempfile::tempdir().unwrap();
    let (m, t) = build(&c, &cfg);
    let err = train(m, t, &c.train.examples, &c.validation.examples, &cfg, Some(dir.path())).err().unwrap();
    assert!(matches!(err, Error::NonFiniteLoss { step: 2, .. }), "{err}");
    let records = read_log(&dir.path().join(LOG_FILE)).unwrap();
    assert!(matches!(records.last(), Some(LogRecord::Abort(a)) if a.step == 2));
    assert_eq!(records.iter().filter(|r| matches!(r, LogRecord::Step(_))).count(), 2);
}

#[test]
fn config_errors() {
    let c = corpus(30);
    let cfg = TrainerConfig {
        strategy: Strategy::SingleTask,
        ..base_config()
    };
    assert!(cfg.validate().is_err());
    let (m, t) = build(&c, &base_config());
    let mlm = TrainerConfig {
        use_mlm: true,
        ..base_config()
    };
    assert!(matches!(
        train(m, t, &c.train.examples, &c.validation.examples, &mlm, None),
        Err(Error::Config { .. })
    ));
    let (m, t) = build(&c, &base_config());
    assert!(train(m, t, &[], &c.validation.examples, &base_config(), None).is_err());
    let (m, t) = build(&c, &base_config());
    assert!(train_single_task(m, t, &c.train.examples, &c.validation.examples, &base_config(), None).is_err());
}

#[test]
fn checkpoint_round_trip_and_integrity() {
    let c = corpus(40);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainerConfig {
        epochs: 1,
        ..base_config()
    };
    let out = {
        let (m, t) = build(&c, &cfg);
        train(m, t, &c.train.examples, &c.validation.examples, &cfg, Some(dir.path())).unwrap()
    };
    let best = out.best_dir.clone().unwrap();
    let loaded = load_checkpoint(&best, &Device::Cpu).unwrap();
    assert_eq!(logits(&loaded.model, &loaded.tokenizer, &c), logits(&out.model, &out.tokenizer, &c));
    assert_eq!(loaded.trainer.as_ref().unwrap().seed, cfg.seed);
    assert!(loaded.optimizer.is_some());

    let params = best.join("params.safetensors");
    let mut bytes = std::fs::read(&params).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x5a;
    std::fs::write(&params, bytes).unwrap();
    match load_checkpoint(&best, &Device::Cpu) {
        Err(Error::Integrity { path, .. }) => assert!(path.ends_with("params.safetensors")),
        Err(e) => panic!("expected integrity error, got {e}"),
        Ok(_) => panic!("expected integrity error"),
    }
}

#[test]
fn checkpoint_with_other_head_config_fails_with_shape_error() {
    let c = corpus(30);
    let (m, t) = build(&c, &base_config());
    let dir = tempfile::tempdir().unwrap();
    let state = TrainingState::default();
    save_checkpoint(
        dir.path(),
        &CheckpointRecord {
            model: &m,
            tokenizer: &t,
            trainer: None,
            optimizer: None,
            reference: None,
            state: &state,
        },
    )
    .unwrap();
    let mut cfg = m.config().clone();
    cfg.heads[1].kind = crate::model::HeadKind::Cnn;
    let other = MultitaskModel::build(&cfg, &Device::Cpu, 0).unwrap();
    assert!(matches!(
        other.load_parameters(&dir.path().join("params.safetensors")),
        Err(Error::Build { .. })
    ));
}

#[test]
fn interrupted_and_resumed_run_matches_continuous_run() {
    let c = corpus(50);
    let cfg = TrainerConfig {
        epochs: 2,
        use_mlm: true,
        smart: Some(SmartConfig {
            proximal_mode: ProximalMode::Momentum,
            ..SmartConfig::default()
        }),
        ..base_config()
    };
    let full_dir = tempfile::tempdir().unwrap();
    let full = {
        let (m, t) = build(&c, &cfg);
        train(m, t, &c.train.examples, &c.validation.examples, &cfg, Some(full_dir.path())).unwrap()
    };
    let steps = full.log.steps().count() as u64;
    let dir = tempfile::tempdir().unwrap();
    let stop = TrainerConfig {
        stop_after_steps: Some(steps / 2 + 1),
        ..cfg.clone()
    };
    let (m, t) = build(&c, &stop);
    let first = train(m, t, &c.train.examples, &c.validation.examples, &stop, Some(dir.path())).unwrap();
    assert!(first.interrupted);
    assert_eq!(first.log.steps().count() as u64, steps / 2 + 1);
    let resumed = resume(dir.path(), &c.train.examples, &c.validation.examples, None).unwrap();
    assert!(!resumed.interrupted);
    assert_eq!(resumed.log.loss_sequence(), full.log.loss_sequence());
    assert_eq!(params_of(&resumed.model), params_of(&full.model));
    let on_disk: Vec<f64> = read_log(&dir.path().join(LOG_FILE))
        .unwrap()
        .into_iter()
        .filter_map(|r| match r {
            LogRecord::Step(s) => Some(s.loss.total),
            _ => None,
        })
        .collect();
    assert_eq!(on_disk, full.log.loss_sequence());
}

#[test]
fn matrix_runs_every_cell_and_isolates_failures() {
    let c = corpus(40);
    let trainer = TrainerConfig {
        epochs: 1,
        ..base_config()
    };
    let mut spec = MatrixSpec::four_strategies(trainer, recipe());
    let result = run_experiment_matrix(&spec, &c, None).unwrap();
    assert_eq!(result.rows.len(), 4);
    assert_eq!(result.failures(), 0);
    for row in &result.rows {
        assert_eq!(row.metrics.len(), 2, "{}", row.strategy);
    }
    spec.cells[1].inject_nan_at_step = Some(0);
    let result = run_experiment_matrix(&spec, &c, None).unwrap();
    assert_eq!(result.failures(), 1);
    assert!(result.rows[1].failure.as_ref().unwrap().contains("non-finite"));
    assert_eq!(result.rows.iter().filter(|r| r.metrics.len() == 2).count(), 3);
}
