use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use candle_core::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{load_checkpoint, save_checkpoint, CheckpointRecord, TrainingState};
use super::config::{Strategy, TrainerConfig};
use super::data::{encode_examples, evaluate, make_batch, parse_task, EncodedExample};
use super::log::{AbortRecord, EpochRecord, LogRecord, StepRecord, TrainingLog};
use super::optim::{clip_scale, grad_norm, AdamW, AdamWConfig, LinearSchedule};
use crate::corpus::{LabeledExample, Task};
use crate::error::{Error, Result};
use crate::model::{HeadKind, Mode, MultitaskModel, TextTokenizer};
use crate::objectives::{
    apply_masking, bregman_proximal_term, cross_entropy, plan_masking, smart_perturb, smart_regularizer, total_loss,
    LossTerms, ProximalMode, ProximalReference,
};

const DROPOUT_STREAM: u64 = 1;
const SMART_STREAM: u64 = 2;
const MASKING_STREAM: u64 = 3;
const SHUFFLE_STREAM: u64 = 4;

pub const LOG_FILE: &str = "train_log.jsonl";
pub const BEST_DIR: &str = "best";
pub const LAST_DIR: &str = "last";

/// Independent stream for one purpose and counter value.
pub(crate) fn rng_for(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 56) ^ index);
    rng
}

pub struct TrainOutcome {
    /// The model with the best validation parameters restored (or the
    /// current parameters when the run was interrupted).
    pub model: MultitaskModel,
    pub tokenizer: TextTokenizer,
    pub log: TrainingLog,
    pub state: TrainingState,
    pub best_dir: Option<PathBuf>,
    pub interrupted: bool,
}

struct Run<'a> {
    model: MultitaskModel,
    tokenizer: TextTokenizer,
    config: TrainerConfig,
    tasks: Vec<Task>,
    train: Vec<EncodedExample>,
    validation: Vec<EncodedExample>,
    optimizer: AdamW,
    reference: Option<ProximalReference>,
    schedule: LinearSchedule,
    state: TrainingState,
    log: TrainingLog,
    output: Option<&'a Path>,
    best_params: Option<HashMap<String, Tensor>>,
}

fn steps_per_epoch(config: &TrainerConfig, n: usize) -> u64 {
    let per_task = n.div_ceil(config.batch_size) as u64;
    match config.strategy {
        Strategy::RoundRobin => per_task * config.tasks.len() as u64,
        _ => per_task,
    }
}

fn check_model(model: &MultitaskModel, config: &TrainerConfig) -> Result<Vec<Task>> {
    config.validate()?;
    let mut tasks = Vec::with_capacity(config.tasks.len());
    for name in &config.tasks {
        let task = parse_task(name)?;
        match model.head(name)?.kind() {
            HeadKind::Mlm => return Err(Error::config("tasks", format!("`{name}` is an mlm head"))),
            _ => tasks.push(task),
        }
    }
    if config.use_mlm && model.config().mlm_head().is_none() {
        return Err(Error::config("use_mlm", "the model has no mlm head"));
    }
    Ok(tasks)
}

/// Fine-tunes `model` on `train`, selecting the epoch with the best mean
/// validation accuracy. With `output`, writes the JSONL log plus `best/`
/// and `last/` checkpoints there.
pub fn train(
    model: MultitaskModel,
    tokenizer: TextTokenizer,
    train: &[LabeledExample],
    validation: &[LabeledExample],
    config: &TrainerConfig,
    output: Option<&Path>,
) -> Result<TrainOutcome> {
    let tasks = check_model(&model, config)?;
    if train.is_empty() {
        return Err(Error::Contract("training split is empty".into()));
    }
    let train_enc = encode_examples(&tokenizer, train, config.max_sequence_length)?;
    let val_enc = encode_examples(&tokenizer, validation, config.max_sequence_length)?;
    let log = match output {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(LOG_FILE);
            if path.exists() {
                std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
            }
            TrainingLog::open(&path)?
        }
        None => TrainingLog::in_memory(),
    };
    let reference = match &config.smart {
        Some(s) if s.proximal_mode != ProximalMode::None => Some(ProximalReference::new(&model, s.proximal_mode, s.momentum_beta)?),
        _ => None,
    };
    let total = steps_per_epoch(config, train_enc.len()) * config.epochs as u64;
    let run = Run {
        schedule: LinearSchedule::new(config.learning_rate, config.warmup_fraction, total),
        optimizer: AdamW::new(AdamWConfig {
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        }),
        model,
        tokenizer,
        config: config.clone(),
        tasks,
        train: train_enc,
        validation: val_enc,
        reference,
        state: TrainingState::default(),
        log,
        output,
        best_params: None,
    };
    run.execute()
}

pub fn train_single_task(
    model: MultitaskModel,
    tokenizer: TextTokenizer,
    train_split: &[LabeledExample],
    validation: &[LabeledExample],
    config: &TrainerConfig,
    output: Option<&Path>,
) -> Result<TrainOutcome> {
    if config.strategy != Strategy::SingleTask {
        return Err(Error::config("strategy", "train_single_task needs strategy = single_task"));
    }
    train(model, tokenizer, train_split, validation, config, output)
}

pub fn train_multitask(
    model: MultitaskModel,
    tokenizer: TextTokenizer,
    train_split: &[LabeledExample],
    validation: &[LabeledExample],
    config: &TrainerConfig,
    output: Option<&Path>,
) -> Result<TrainOutcome> {
    if config.strategy == Strategy::SingleTask {
        return Err(Error::config("strategy", "train_multitask needs joint_sum or round_robin"));
    }
    train(model, tokenizer, train_split, validation, config, output)
}

/// Continues the run saved in `output/last`, appending to its log.
/// `stop_after_steps` may be changed (or cleared) for the continuation.
pub fn resume(
    output: &Path,
    train_split: &[LabeledExample],
    validation: &[LabeledExample],
    stop_after_steps: Option<u64>,
) -> Result<TrainOutcome> {
    let last = output.join(LAST_DIR);
    let loaded = load_checkpoint(&last, &candle_core::Device::Cpu)?;
    let mut config = loaded
        .trainer
        .clone()
        .ok_or_else(|| Error::config("trainer", "checkpoint has no trainer config; cannot resume"))?;
    config.stop_after_steps = stop_after_steps;
    let device = crate::model::parse_device(&config.device)?;
    let loaded = if device.same_device(&candle_core::Device::Cpu) {
        loaded
    } else {
        load_checkpoint(&last, &device)?
    };
    let tasks = check_model(&loaded.model, &config)?;
    let train_enc = encode_examples(&loaded.tokenizer, train_split, config.max_sequence_length)?;
    let val_enc = encode_examples(&loaded.tokenizer, validation, config.max_sequence_length)?;
    let mut log = TrainingLog::open(&output.join(LOG_FILE))?;
    log.truncate_after(loaded.state.global_step);
    log.rewrite()?;
    let reference = match (&config.smart, loaded.reference) {
        (Some(s), Some(r)) if s.proximal_mode != ProximalMode::None => {
            Some(ProximalReference::from_model(r, s.proximal_mode, s.momentum_beta))
        }
        (Some(s), None) if s.proximal_mode != ProximalMode::None => {
            return Err(Error::Integrity {
                path: last,
                message: "proximal reference parameters missing".into(),
            })
        }
        _ => None,
    };
    let best_params = match load_checkpoint(&output.join(BEST_DIR), &device) {
        Ok(b) => Some(b.model.params().snapshot()?),
        Err(_) => None,
    };
    let total = steps_per_epoch(&config, train_enc.len()) * config.epochs as u64;
    let run = Run {
        schedule: LinearSchedule::new(config.learning_rate, config.warmup_fraction, total),
        optimizer: loaded.optimizer.unwrap_or_else(|| AdamW::new(AdamWConfig {
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        })),
        model: loaded.model,
        tokenizer: loaded.tokenizer,
        config,
        tasks,
        train: train_enc,
        validation: val_enc,
        reference,
        state: loaded.state,
        log,
        output: Some(output),
        best_params,
    };
    run.execute()
}

impl Run<'_> {
    fn epoch_schedule(&self, epoch: usize) -> Vec<(Vec<String>, Vec<usize>)> {
        let n = self.train.len();
        let bs = self.config.batch_size;
        let shuffled = |k: u64| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng_for(self.config.seed, SHUFFLE_STREAM, (epoch as u64) << 8 | k));
            order
        };
        match self.config.strategy {
            Strategy::SingleTask | Strategy::JointSum => shuffled(0)
                .chunks(bs)
                .map(|c| (self.config.tasks.clone(), c.to_vec()))
                .collect(),
            Strategy::RoundRobin => {
                let per_task: Vec<Vec<Vec<usize>>> = (0..self.config.tasks.len())
                    .map(|k| shuffled(k as u64).chunks(bs).map(<[usize]>::to_vec).collect())
                    .collect();
                let mut out = Vec::new();
                for i in 0..per_task[0].len() {
                    for (k, task) in self.config.tasks.iter().enumerate() {
                        out.push((vec![task.clone()], per_task[k][i].clone()));
                    }
                }
                out
            }
        }
    }

    fn execute(mut self) -> Result<TrainOutcome> {
        while self.state.epoch < self.config.epochs {
            let epoch = self.state.epoch;
            let schedule = self.epoch_schedule(epoch);
            for (tasks, idx) in schedule.iter().skip(self.state.step_in_epoch as usize) {
                if self.config.stop_after_steps.is_some_and(|s| self.state.global_step >= s) {
                    self.save_last()?;
                    return self.finish(true);
                }
                let record = self.step(epoch, tasks, idx)?;
                self.state.epoch_loss_sum += record.loss.total;
                self.state.step_in_epoch += 1;
                self.log.push(LogRecord::Step(record))?;
            }
            self.end_epoch(epoch, schedule.len() as u64)?;
        }
        if self.output.is_some() {
            self.save_last()?;
        }
        self.finish(false)
    }

    fn finish(self, interrupted: bool) -> Result<TrainOutcome> {
        if !interrupted {
            if let Some(best) = &self.best_params {
                self.model.params().assign(best, true)?;
            }
        }
        let best_dir = self
            .output
            .map(|o| o.join(BEST_DIR))
            .filter(|p| p.join("state.json").is_file());
        Ok(TrainOutcome {
            model: self.model,
            tokenizer: self.tokenizer,
            log: self.log,
            state: self.state,
            best_dir,
            interrupted,
        })
    }

    fn checkpoint_record(&self) -> CheckpointRecord<'_> {
        CheckpointRecord {
            model: &self.model,
            tokenizer: &self.tokenizer,
            trainer: Some(&self.config),
            optimizer: Some(&self.optimizer),
            reference: self.reference.as_ref().map(ProximalReference::model),
            state: &self.state,
        }
    }

    fn save_last(&self) -> Result<()> {
        match self.output {
            Some(o) => save_checkpoint(&o.join(LAST_DIR), &self.checkpoint_record()),
            None => Ok(()),
        }
    }

    fn end_epoch(&mut self, epoch: usize, steps: u64) -> Result<()> {
        let eval_data = if self.validation.is_empty() {
            log::warn!("empty validation split; selecting on the training split");
            &self.train
        } else {
            &self.validation
        };
        let validation = evaluate(&self.model, &self.tokenizer, eval_data, &self.tasks, self.config.eval_batch_size)?;
        let metric = validation.values().map(|m| m.accuracy).sum::<f64>() / validation.len() as f64;
        let is_best = self.state.best_metric.is_none_or(|b| metric > b);
        let mean_train_loss = self.state.epoch_loss_sum / steps.max(1) as f64;
        self.state.epoch = epoch + 1;
        self.state.step_in_epoch = 0;
        self.state.epoch_loss_sum = 0.0;
        self.state.validation = validation.clone();
        if is_best {
            self.state.best_metric = Some(metric);
            self.state.best_epoch = Some(epoch);
            self.best_params = Some(self.model.params().snapshot()?);
            if let Some(o) = self.output {
                save_checkpoint(&o.join(BEST_DIR), &self.checkpoint_record())?;
            }
        }
        log::info!("epoch {epoch}: train loss {mean_train_loss:.4}, validation accuracy {metric:.4}");
        self.log.push(LogRecord::Epoch(EpochRecord {
            epoch,
            steps,
            mean_train_loss,
            validation,
            selection_metric: metric,
            is_best,
        }))?;
        if self.output.is_some() {
            self.save_last()?;
        }
        Ok(())
    }

    fn abort(&mut self, epoch: usize, reason: String, loss: Option<crate::objectives::LossBreakdown>) -> Result<Error> {
        let step = self.state.global_step;
        self.log.push(LogRecord::Abort(AbortRecord {
            epoch,
            step,
            reason: reason.clone(),
            loss: loss.map(|l| serde_json::to_value(l)).transpose()?,
        }))?;
        Ok(Error::NonFiniteLoss { step, detail: reason })
    }

    fn step(&mut self, epoch: usize, tasks: &[String], idx: &[usize]) -> Result<StepRecord> {
        let step = self.state.global_step;
        let seed = self.config.seed;
        let batch = make_batch(&self.model, &self.tokenizer, &self.train, idx)?;
        let names: Vec<&str> = tasks.iter().map(String::as_str).collect();
        let start_mode = Mode::Train(rng_for(seed, DROPOUT_STREAM, step));
        let mut mode = start_mode.clone();
        let x = self.model.embed_inputs(&batch, &mut mode)?;
        let after_embed = mode.clone();
        let logits = self.model.forward_tasks(&x, &batch.attention_mask, &names, &mut mode)?;

        let mut terms = LossTerms::default();
        for name in &names {
            let task = parse_task(name)?;
            let labels: Vec<i64> = idx.iter().map(|&i| self.train[i].label(task) as i64).collect();
            let mut l = cross_entropy(&logits[*name], &labels)?;
            if self.config.inject_nan_at_step == Some(step) {
                l = (l * f64::NAN)?;
            }
            terms.task_losses.insert(name.to_string(), l);
        }

        let mut smart_aborts = 0;
        if let Some(sc) = &self.config.smart {
            terms.lambda_s = sc.lambda_s;
            let clean: Vec<Tensor> = names.iter().map(|n| logits[*n].clone()).collect();
            let forward = |xt: &Tensor| -> Result<Vec<Tensor>> {
                let out = self.model.forward_tasks(xt, &batch.attention_mask, &names, &mut after_embed.clone())?;
                Ok(names.iter().map(|n| out[*n].clone()).collect())
            };
            let mut srng = rng_for(seed, SMART_STREAM, step);
            let p = smart_perturb(&x, &batch.attention_mask, &clean, &forward, sc, &mut srng)?;
            smart_aborts += usize::from(p.aborted);
            let adv = forward(&p.apply(&x)?)?;
            for (name, r) in names.iter().zip(smart_regularizer(&adv, &clean)?) {
                terms.smart_terms.insert(name.to_string(), r);
            }
        }

        if self.config.use_mlm {
            let mut mrng = rng_for(seed, MASKING_STREAM, step);
            let plan = plan_masking(&batch.token_ids, &batch.maskable, &self.config.masking, &mut mrng)?;
            let special = batch.special.all();
            let enc = &self.model.config().encoder;
            let (corrupted, _) = apply_masking(&batch.token_ids, &plan, enc.mask_token_id, enc.vocab_size, &special, &mut mrng)?;
            let corrupted = batch.with_ids(corrupted)?;
            let out = self.model.forward_mlm(&corrupted, Some(&plan), &mut mode)?;
            let loss = match &out.logits {
                Some(l) => cross_entropy(l, &out.labels)?,
                None => Tensor::new(0.0, self.model.device())?.to_dtype(self.model.dtype())?,
            };
            let tokens = batch.lengths.iter().sum::<usize>() as f64 / batch.size() as f64;
            let sigma = self.config.sigma_mode.sigma(plan.mean_selected(), tokens);
            terms.mlm = Some((loss, sigma));
        }

        if let (Some(reference), Some(sc)) = (&self.reference, &self.config.smart) {
            let r = reference.model();
            let mut rmode = start_mode.clone();
            let rx = r.embed_inputs(&batch, &mut rmode)?;
            let rlogits = r.forward_tasks(&rx, &batch.attention_mask, &names, &mut rmode)?;
            let current: Vec<Tensor> = names.iter().map(|n| logits[*n].clone()).collect();
            let refs: Vec<Tensor> = names.iter().map(|n| rlogits[*n].clone()).collect();
            terms.proximal = Some(bregman_proximal_term(&current, &refs, sc.mu)?);
        }

        let (total, breakdown) = total_loss(&terms)?;
        if !breakdown.is_finite() {
            return Err(self.abort(epoch, "non-finite loss".into(), Some(breakdown))?);
        }
        let grads = total.backward()?;
        let gnorm = grad_norm(self.model.params(), &grads)?;
        if !gnorm.is_finite() {
            return Err(self.abort(epoch, format!("non-finite gradient norm {gnorm}"), Some(breakdown))?);
        }
        if let Some(r) = &self.reference {
            r.update(&self.model)?;
        }
        let lr = self.schedule.lr(step);
        self.optimizer
            .step(self.model.params(), &grads, lr, clip_scale(gnorm, self.config.gradient_clip_norm))?;
        self.state.global_step += 1;
        Ok(StepRecord {
            epoch,
            step,
            tasks: tasks.to_vec(),
            loss: breakdown,
            learning_rate: lr,
            grad_norm: gnorm,
            smart_aborts,
        })
    }
}

/// Per-task metrics of `model` on `examples`.
pub fn evaluate_examples(
    model: &MultitaskModel,
    tokenizer: &TextTokenizer,
    examples: &[LabeledExample],
    tasks: &[Task],
    batch_size: usize,
    max_len: usize,
) -> Result<BTreeMap<String, crate::evalx::MetricsReport>> {
    let enc = encode_examples(tokenizer, examples, max_len)?;
    evaluate(model, tokenizer, &enc, tasks, batch_size)
}
