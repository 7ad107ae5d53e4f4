use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use esc_core::corpus::{
    stratified_split, surrogate::generate_corpus, write_jsonl, Corpus, CorpusReport, DatasetSplit, SplitName,
    SplitRatios, Task,
};
use esc_core::evalx::{compute_metrics, confusion_matrix, render_report, ConfusionMatrix, MetricsReport, ReportRow};
use esc_core::llmbench::{
    run_benchmark, select_fewshot, write_verdict_log, BenchmarkOptions, ChatModel, ConstantModel, OracleModel, Provider,
};
use esc_core::model::parse_device;
use esc_core::normalize::{normalize_pipeline, AcronymLexicon, NormalizationConfig};
use esc_core::train::{
    encode_examples, load_checkpoint, parse_task, predict, resume, run_experiment_matrix, train, TrainOutcome,
    TrainerConfig, BEST_DIR, LAST_DIR, LOG_FILE,
};
use serde::Serialize;

use crate::configs::{data_inputs, load_config, load_data, require_exists, usage, BenchFile, MatrixFile, TrainFile};
use crate::run::{digest_path, read_manifest, RunDir};
use crate::{Cli, Command, Common, ModeArg, SplitArg, TaskArg};

pub fn dispatch(cli: Cli, argv: Vec<String>) -> Result<()> {
    let Cli { common, command } = cli;
    let name = command.name();
    match command {
        Command::Stats { data } => {
            let inputs = data_inputs(&data)?;
            with_run(&common, name, argv, &serde_json::json!({ "data": data }), &inputs, |run| stats(run, &data))
        }
        Command::Normalize { input, lexicon, config } => {
            require_exists(&input, "input")?;
            let cfg: NormalizationConfig = match &config {
                Some(p) => load_config(p)?,
                None => NormalizationConfig::default(),
            };
            cfg.validate()?;
            let lex = match &lexicon {
                Some(p) => {
                    require_exists(p, "lexicon")?;
                    AcronymLexicon::load(p)?
                }
                None => AcronymLexicon::builtin(),
            };
            let mut inputs = vec![input.clone()];
            inputs.extend(lexicon.iter().cloned());
            let snapshot = serde_json::json!({ "input": input, "lexicon": lexicon, "normalization": cfg });
            with_run(&common, name, argv, &snapshot, &inputs, |run| normalize(run, &input, &lex, &cfg))
        }
        Command::Split { data, ratios } => {
            let ratios = parse_ratios(&ratios)?;
            let seed = common.seed.unwrap_or(0);
            let inputs = data_inputs(&data)?;
            let snapshot = serde_json::json!({ "data": data, "ratios": ratios, "seed": seed });
            with_run(&common, name, argv, &snapshot, &inputs, |run| split(run, &data, ratios, seed))
        }
        Command::Synth { n } => {
            let seed = common.seed.unwrap_or(0);
            let snapshot = serde_json::json!({ "n": n, "seed": seed });
            with_run(&common, name, argv, &snapshot, &[], |run| {
                let corpus = generate_corpus(n, seed)?;
                write_jsonl(&corpus, &run.output("corpus.jsonl"))?;
                Ok(())
            })
        }
        Command::Train { config, resume } => {
            let mut file: TrainFile = load_config(&config)?;
            apply_overrides(&mut file.trainer, &common);
            file.trainer.validate()?;
            if resume && common.output.is_none() {
                return Err(usage("--resume needs --output pointing at the interrupted run"));
            }
            let mut inputs = data_inputs(&file.data)?;
            inputs.push(config.clone());
            let snapshot = serde_json::to_value(&file)?;
            with_run(&common, name, argv, &snapshot, &inputs, |run| train_cmd(run, &file, resume))
        }
        Command::Eval { checkpoint, data, split } => {
            require_exists(&checkpoint, "checkpoint")?;
            let mut inputs = data_inputs(&data)?;
            inputs.push(checkpoint.clone());
            let split = split_name(split);
            let device = common.device.clone().unwrap_or_else(|| "cpu".into());
            let snapshot = serde_json::json!({ "checkpoint": checkpoint, "data": data, "split": split.as_str(), "device": device });
            with_run(&common, name, argv, &snapshot, &inputs, |run| eval_cmd(run, &checkpoint, &data, split, &device))
        }
        Command::Matrix { config } => {
            let mut file: MatrixFile = load_config(&config)?;
            apply_overrides(&mut file.trainer, &common);
            let spec = file.spec();
            spec.validate()?;
            spec.trainer.validate()?;
            let mut inputs = data_inputs(&file.data)?;
            inputs.push(config.clone());
            let snapshot = serde_json::to_value(&file)?;
            with_run(&common, name, argv, &snapshot, &inputs, |run| {
                let corpus = load_data(&file.data, file.max_train_examples)?;
                let result = run_experiment_matrix(&spec, &corpus, Some(&run.output("cells")))?;
                write_json(&run.output("matrix.json"), &result)?;
                write_rows(run, &result.rows, &[])?;
                if result.failures() > 0 {
                    anyhow::bail!("{} of {} matrix cells failed", result.failures(), result.rows.len());
                }
                Ok(())
            })
        }
        Command::LlmBench { config, task, mode, provider } => {
            let mut file: BenchFile = load_config(&config)?;
            if let Some(seed) = common.seed {
                file.fewshot_seed = seed;
            }
            file.provider.validate()?;
            let choice = ProviderChoice::parse(&provider)?;
            let mut inputs = data_inputs(&file.data)?;
            inputs.push(config.clone());
            let mut snapshot = serde_json::to_value(&file)?;
            snapshot["provider_choice"] = serde_json::Value::String(provider.clone());
            with_run(&common, name, argv, &snapshot, &inputs, |run| bench_cmd(run, &file, task, mode, &choice))
        }
        Command::Report { from } => {
            for dir in &from {
                require_exists(&dir.join("rows.json"), "result rows")?;
            }
            let inputs: Vec<PathBuf> = from.iter().map(|d| d.join("rows.json")).collect();
            let snapshot = serde_json::json!({ "from": from });
            with_run(&common, name, argv, &snapshot, &inputs, |run| report_cmd(run, &from))
        }
        Command::Rerun { manifest } => rerun(&manifest, &common),
    }
}

fn with_run(
    common: &Common,
    command: &str,
    argv: Vec<String>,
    config: &serde_json::Value,
    inputs: &[PathBuf],
    body: impl FnOnce(&mut RunDir) -> Result<()>,
) -> Result<()> {
    let out = common.output.clone().unwrap_or_else(|| {
        PathBuf::from("runs").join(format!("{command}-{}", chrono::Utc::now().format("%Y%m%d-%H%M%S")))
    });
    let mut run = RunDir::open(&out, command, argv, config.clone(), inputs)?;
    log::info!("run directory {}", out.display());
    let result = body(&mut run);
    run.finish(result.as_ref().err())?;
    result
}

fn apply_overrides(trainer: &mut TrainerConfig, common: &Common) {
    if let Some(seed) = common.seed {
        trainer.seed = seed;
    }
    if let Some(device) = &common.device {
        trainer.device = device.clone();
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn write_rows(run: &mut RunDir, rows: &[ReportRow], matrices: &[ConfusionMatrix]) -> Result<()> {
    write_json(&run.output("rows.json"), &rows)?;
    if !matrices.is_empty() {
        write_json(&run.output("confusion.json"), &matrices)?;
    }
    let rendered = render_report(rows, matrices, &run.path)?;
    run.output("report.txt");
    run.output("report.json");
    println!("{}", rendered.text);
    Ok(())
}

fn parse_ratios(raw: &str) -> Result<SplitRatios> {
    let parts: Vec<f64> = raw
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| usage(format!("--ratios: {e}")))?;
    let [train, validation, test] = parts[..] else {
        return Err(usage("--ratios needs three comma-separated numbers"));
    };
    let ratios = SplitRatios { train, validation, test };
    ratios.validate()?;
    Ok(ratios)
}

fn split_name(s: SplitArg) -> SplitName {
    match s {
        SplitArg::Train => SplitName::Train,
        SplitArg::Validation => SplitName::Validation,
        SplitArg::Test => SplitName::Test,
    }
}

fn task_of(t: TaskArg) -> Task {
    match t {
        TaskArg::Sentiment => Task::Sentiment,
        TaskArg::Topic => Task::Topic,
    }
}

fn stats(run: &mut RunDir, data: &str) -> Result<()> {
    let corpus = load_data(data, None)?;
    let report = CorpusReport::compute(&corpus)?;
    write_json(&run.output("stats.json"), &report)?;
    let text = report.render_text();
    fs::write(run.output("stats.txt"), &text)?;
    println!("{text}");
    Ok(())
}

fn normalize(run: &mut RunDir, input: &Path, lex: &AcronymLexicon, cfg: &NormalizationConfig) -> Result<()> {
    if input.extension().is_some_and(|e| e == "txt") {
        let raw = fs::read_to_string(input)?;
        let mut out: String = raw.lines().map(|l| normalize_pipeline(l, lex, cfg) + "\n").collect();
        if raw.is_empty() {
            out.clear();
        }
        fs::write(run.output("normalized.txt"), out)?;
        return Ok(());
    }
    let corpus = load_data(&input.to_string_lossy(), None)?;
    let map = |s: &DatasetSplit| {
        let mut s = s.clone();
        for e in &mut s.examples {
            e.text = normalize_pipeline(&e.text, lex, cfg);
        }
        s
    };
    let normalized = Corpus {
        train: map(&corpus.train),
        validation: map(&corpus.validation),
        test: map(&corpus.test),
    };
    write_jsonl(&normalized, &run.output("normalized.jsonl"))?;
    Ok(())
}

fn split(run: &mut RunDir, data: &str, ratios: SplitRatios, seed: u64) -> Result<()> {
    let corpus = load_data(data, None)?;
    let resplit = stratified_split(&corpus.all_examples(), ratios, seed)?;
    write_jsonl(&resplit, &run.output("splits.jsonl"))?;
    write_json(&run.output("split_stats.json"), &esc_core::corpus::compute_split_stats(&resplit))?;
    Ok(())
}

fn train_cmd(run: &mut RunDir, file: &TrainFile, resume_run: bool) -> Result<()> {
    let corpus = load_data(&file.data, file.max_train_examples)?;
    let cfg = &file.trainer;
    let outcome: TrainOutcome = if resume_run {
        resume(&run.path, &corpus.train.examples, &corpus.validation.examples, None)?
    } else {
        let tasks = cfg.tasks.iter().map(|t| parse_task(t)).collect::<esc_core::Result<Vec<_>>>()?;
        let device = parse_device(&cfg.device)?;
        let (model, tokenizer) = file.model.build(&tasks, cfg.use_mlm, &corpus.train.examples, &device, cfg.seed)?;
        train(model, tokenizer, &corpus.train.examples, &corpus.validation.examples, cfg, Some(&run.path))?
    };
    for name in [LOG_FILE, BEST_DIR, LAST_DIR] {
        if run.path.join(name).exists() {
            run.output(name);
        }
    }
    if outcome.interrupted {
        log::warn!("training stopped early; continue with `esc train --resume --output {}`", run.path.display());
        return Ok(());
    }
    let tasks = cfg.tasks.iter().map(|t| parse_task(t)).collect::<esc_core::Result<Vec<_>>>()?;
    let (metrics, matrices) = score(&outcome.model, &outcome.tokenizer, &corpus, SplitName::Test, &tasks, cfg)?;
    write_json(&run.output("metrics.json"), &metrics)?;
    let row = ReportRow {
        model: file.model.label(),
        strategy: strategy_label(cfg),
        metrics,
        failure: None,
    };
    write_rows(run, &[row], &matrices)
}

fn strategy_label(cfg: &TrainerConfig) -> String {
    let mut s = cfg.strategy.to_string();
    if cfg.use_mlm {
        s.push_str("+mlm");
    }
    if cfg.smart.is_some() {
        s.push_str("+smart");
    }
    s
}

type Scored = (BTreeMap<String, MetricsReport>, Vec<ConfusionMatrix>);

fn score(
    model: &esc_core::model::MultitaskModel,
    tokenizer: &esc_core::model::TextTokenizer,
    corpus: &Corpus,
    split: SplitName,
    tasks: &[Task],
    cfg: &TrainerConfig,
) -> Result<Scored> {
    let enc = encode_examples(tokenizer, &corpus.split(split).examples, cfg.max_sequence_length)?;
    let sets = predict(model, tokenizer, &enc, tasks, cfg.eval_batch_size)?;
    let mut metrics = BTreeMap::new();
    let mut matrices = Vec::new();
    for (name, set) in sets {
        let n = parse_task(&name)?.num_classes();
        metrics.insert(name.clone(), compute_metrics(&set, n)?);
        matrices.push(confusion_matrix(&set, n)?);
    }
    Ok((metrics, matrices))
}

fn eval_cmd(run: &mut RunDir, checkpoint: &Path, data: &str, split: SplitName, device: &str) -> Result<()> {
    let loaded = load_checkpoint(checkpoint, &parse_device(device)?)?;
    let corpus = load_data(data, None)?;
    let cfg = loaded.trainer.clone().unwrap_or_default();
    let tasks: Vec<Task> = loaded.model.head_names().filter_map(Task::parse).collect();
    if tasks.is_empty() {
        return Err(usage(format!("checkpoint {} has no classification heads", checkpoint.display())));
    }
    let (metrics, matrices) = score(&loaded.model, &loaded.tokenizer, &corpus, split, &tasks, &cfg)?;
    write_json(&run.output("metrics.json"), &metrics)?;
    let row = ReportRow {
        model: loaded.model.config().encoder.name.clone(),
        strategy: format!("{} ({})", strategy_label(&cfg), split.as_str()),
        metrics,
        failure: None,
    };
    write_rows(run, &[row], &matrices)
}

enum ProviderChoice {
    Remote,
    Oracle,
    Constant(String),
}

impl ProviderChoice {
    fn parse(raw: &str) -> Result<Self> {
        match raw {
            "remote" => Ok(Self::Remote),
            "mock-oracle" => Ok(Self::Oracle),
            _ => match raw.strip_prefix("mock-constant=") {
                Some(label) if !label.is_empty() => Ok(Self::Constant(label.into())),
                _ => Err(usage(format!(
                    "--provider must be `remote`, `mock-oracle` or `mock-constant=<label>`, got `{raw}`"
                ))),
            },
        }
    }
}

fn bench_cmd(run: &mut RunDir, file: &BenchFile, task: TaskArg, mode: ModeArg, choice: &ProviderChoice) -> Result<()> {
    let task = task_of(task);
    let mut corpus = load_data(&file.data, None)?;
    if let Some(n) = file.max_test_examples {
        corpus.test.examples.truncate(n);
    }
    let fewshot = match mode {
        ModeArg::Zero => None,
        ModeArg::Few => {
            let set = select_fewshot(&corpus.train.examples, file.fewshot_seed)?;
            write_json(&run.output("fewshot.json"), &set)?;
            Some(set)
        }
    };
    let test = &corpus.test.examples;
    let model: Box<dyn ChatModel> = match choice {
        ProviderChoice::Remote => Box::new(Provider::new(file.provider.clone())?),
        ProviderChoice::Oracle => Box::new(OracleModel::new(task, test, file.template.clone())),
        ProviderChoice::Constant(label) => Box::new(ConstantModel { answer: label.clone() }),
    };
    let options = BenchmarkOptions {
        template: file.template.clone(),
        concurrency: file.concurrency,
    };
    let result = run_benchmark(test, task, fewshot.as_ref(), model.as_ref(), &options)?;
    log::info!(
        "{} {}-shot {}: accuracy {:.4}, {} network calls",
        result.model,
        result.mode.as_str(),
        task,
        result.metrics.accuracy,
        result.network_calls
    );
    write_verdict_log(&run.output("verdicts.jsonl"), &result.verdicts)?;
    write_json(&run.output("metrics.json"), &result.metrics)?;
    let gold: Vec<usize> = test.iter().map(|e| task.label_of(e)).collect();
    let labels = task.label_names();
    let predicted = result
        .verdicts
        .iter()
        .map(|v| v.parsed_label.as_ref().and_then(|l| labels.iter().position(|n| n == l)))
        .collect();
    let set = esc_core::evalx::PredictionSet::with_abstentions(task.as_str(), gold, predicted);
    let matrix = confusion_matrix(&set, task.num_classes())?;
    let row = ReportRow {
        model: result.model.clone(),
        strategy: format!("{}-shot", result.mode.as_str()),
        metrics: BTreeMap::from([(task.as_str().to_owned(), result.metrics.clone())]),
        failure: None,
    };
    write_rows(run, &[row], &[matrix])
}

fn report_cmd(run: &mut RunDir, from: &[PathBuf]) -> Result<()> {
    let mut rows: Vec<ReportRow> = Vec::new();
    let mut matrices: Vec<ConfusionMatrix> = Vec::new();
    for dir in from {
        let raw = fs::read_to_string(dir.join("rows.json"))?;
        rows.extend(serde_json::from_str::<Vec<ReportRow>>(&raw).map_err(|e| usage(format!("{}: {e}", dir.display())))?);
        let cm = dir.join("confusion.json");
        if cm.is_file() {
            matrices.extend(serde_json::from_str::<Vec<ConfusionMatrix>>(&fs::read_to_string(cm)?)?);
        }
    }
    write_rows(run, &rows, &matrices)
}

/// Replays a manifest's command line into a new run directory. Config
/// files are replaced by the resolved snapshot stored in the manifest.
fn rerun(manifest_path: &Path, common: &Common) -> Result<()> {
    require_exists(manifest_path, "manifest")?;
    let manifest = read_manifest(manifest_path)?;
    for (path, digest) in &manifest.input_digests {
        match digest_path(Path::new(path)) {
            Ok(d) if &d == digest => {}
            Ok(_) => log::warn!("input {path} changed since the original run"),
            Err(_) => log::warn!("input {path} is no longer readable"),
        }
    }
    let original_out = manifest_dir(manifest_path);
    let out = common.output.clone().unwrap_or_else(|| {
        let name = original_out.file_name().map_or("run".into(), |n| n.to_string_lossy().into_owned());
        original_out.with_file_name(format!("{name}-rerun"))
    });
    let mut argv = strip_flag(&manifest.argv, "--output");
    if argv.iter().any(|a| a == "--config" || a.starts_with("--config=")) {
        fs::create_dir_all(&out)?;
        let snapshot = out.join("config.snapshot.json");
        let mut cfg = manifest.config.clone();
        if let Some(obj) = cfg.as_object_mut() {
            obj.remove("provider_choice");
        }
        write_json(&snapshot, &cfg)?;
        argv = strip_flag(&argv, "--config");
        argv.push("--config".into());
        argv.push(snapshot.to_string_lossy().into_owned());
    }
    argv.push("--output".into());
    argv.push(out.to_string_lossy().into_owned());
    let cli = <Cli as clap::Parser>::try_parse_from(std::iter::once("esc".to_owned()).chain(argv.iter().cloned()))
        .map_err(|e| usage(format!("manifest command line no longer parses: {e}")))?;
    if matches!(cli.command, Command::Rerun { .. }) {
        return Err(usage("a rerun manifest cannot point at another rerun"));
    }
    log::info!("rerunning `{}` into {}", manifest.command, out.display());
    dispatch(cli, argv)
}

fn manifest_dir(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    }
}

fn strip_flag(argv: &[String], flag: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(argv.len());
    let mut skip = false;
    for a in argv {
        if skip {
            skip = false;
            continue;
        }
        if a == flag {
            skip = true;
            continue;
        }
        if a.starts_with(&format!("{flag}=")) {
            continue;
        }
        out.push(a.clone());
    }
    out
}
