use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use dsan::checkpoint::load_checkpoint;
use dsan::data::{load_embeddings, parse_nli_jsonl, tokenize, NliExample, ParsedCorpus, Vocabulary};
use dsan::introspect::{capture, export, ExportFormat};
use dsan::nli::NUM_CLASSES;
use dsan::train::{class_counts, evaluate, evaluate_by_length, length_buckets, train_loop, write_length_table, EvalReport, Trainer};
use dsan::{DsanModel, ModelConfig, TrainConfig};
use serde::Serialize;

use crate::error::CliError;
use crate::settings::{Effective, Paths};

pub const EVAL_FILE: &str = "eval.json";
pub const TEST_EVAL_FILE: &str = "test_eval.json";
pub const LENGTH_TABLE_FILE: &str = "length_buckets.csv";

/// Returns the path or a usage error naming the flag.
pub fn require<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    path.as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing required path --{flag} (flag or [paths] {flag} in the config file)")))
}

/// Fails unless every given input path names a readable file.
fn inputs_exist(paths: &[Option<&Path>]) -> Result<(), CliError> {
    for p in paths.iter().flatten() {
        fs::File::open(p).map_err(|e| CliError::io(p, e))?;
    }
    Ok(())
}

fn load_corpus(path: &Path, role: &str) -> Result<ParsedCorpus, CliError> {
    let c = parse_nli_jsonl(path)?;
    log::info!(
        "{role}: {} pairs kept of {} records ({} without gold label, {} with an empty sentence)",
        c.retained(),
        c.records,
        c.dropped_no_consensus,
        c.dropped_empty
    );
    Ok(c)
}

fn load_model(path: &Path, alpha: Option<f64>) -> Result<DsanModel, CliError> {
    let mut model = load_checkpoint(path)?;
    if let Some(a) = alpha {
        if a != model.config.alpha {
            log::info!("distance-mask weight {} replaced by {a}", model.config.alpha);
        }
        model.set_alpha(a).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(model)
}

#[derive(Serialize)]
struct EvalJson<'a> {
    accuracy: Option<f64>,
    correct: usize,
    total: usize,
    labels: [&'a str; NUM_CLASSES],
    /// `confusion[gold][predicted]`
    confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
}

fn write_eval(path: &Path, report: &EvalReport) -> Result<(), CliError> {
    let json = EvalJson {
        accuracy: report.accuracy(),
        correct: report.correct,
        total: report.total,
        labels: dsan::data::Label::ALL.map(|l| l.as_str()),
        confusion: report.confusion,
    };
    let text = serde_json::to_string_pretty(&json).map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn log_eval(name: &str, report: &EvalReport) {
    match report.accuracy() {
        Some(a) => log::info!("{name}: accuracy {a:.4} ({}/{})", report.correct, report.total),
        None => log::warn!("{name}: no examples"),
    }
    for (label, row) in dsan::data::Label::ALL.iter().zip(&report.confusion) {
        log::info!("  gold {:<13} predicted {:?}", label.as_str(), row);
    }
}

pub struct TrainRun {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub paths: Paths,
    pub parallel_eval: bool,
}

pub fn train(run: TrainRun) -> Result<(), CliError> {
    let TrainRun {
        model: model_cfg,
        train: train_cfg,
        paths,
        parallel_eval,
    } = run;
    model_cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    train_cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let embeddings = require(&paths.embeddings, "embeddings")?;
    let train_path = require(&paths.train, "train")?;
    let out = require(&paths.out, "out")?;
    inputs_exist(&[Some(embeddings), Some(train_path), paths.valid.as_deref(), paths.test.as_deref()])?;

    let train_corpus = load_corpus(train_path, "train")?;
    let valid_corpus = paths.valid.as_deref().map(|p| load_corpus(p, "valid")).transpose()?;
    let vocab = Vocabulary::from_tokens(
        train_corpus
            .tokens()
            .chain(valid_corpus.iter().flat_map(|c| c.tokens())),
    );
    let table = load_embeddings(embeddings, &vocab)?;
    log::info!("vocabulary {} tokens, {} with a pretrained vector", vocab.len(), table.found());
    let model = DsanModel::new(model_cfg.clone(), vocab, table, train_cfg.seed).map_err(|e| CliError::Data(e.to_string()))?;
    log::info!("{} trainable parameters", model.parameter_count());
    let train_ex = train_corpus.examples(&model.vocab);
    let valid_ex = valid_corpus.map(|c| c.examples(&model.vocab)).unwrap_or_default();
    log::info!("train class counts {:?}", class_counts(&train_ex));

    let echo = Effective {
        command: "train",
        sentence: None,
        bucket_edges: None,
        model: &model_cfg,
        train: Some(&train_cfg),
        paths: &paths,
    }
    .write(out)?;
    log::info!("settings written to {}", echo.display());

    let batch_size = train_cfg.batch_size;
    let mut trainer = Trainer::new(model, train_cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    let summary = train_loop(&mut trainer, &train_ex, &valid_ex, Some(out))?;
    match (summary.best_epoch, summary.best_valid_acc) {
        (Some(e), Some(a)) => log::info!("best validation accuracy {a:.4} at epoch {e}"),
        (Some(e), None) => log::info!("no validation set; kept the model after epoch {e}"),
        _ => {}
    }

    if let Some(test) = paths.test.as_deref() {
        let best = summary.best_checkpoint.as_deref().unwrap_or(out);
        let model = load_checkpoint(best)?;
        let ex = load_corpus(test, "test")?.examples(&model.vocab);
        let report = evaluate(&model, &ex, batch_size, parallel_eval)?;
        log_eval("test", &report);
        write_eval(&out.join(TEST_EVAL_FILE), &report)?;
    }
    Ok(())
}

pub struct EvalRun {
    pub paths: Paths,
    pub alpha: Option<f64>,
    pub batch_size: usize,
    pub parallel: bool,
}

fn examples_for(model: &DsanModel, paths: &Paths) -> Result<Vec<NliExample>, CliError> {
    let data = require(&paths.data, "data")?;
    Ok(load_corpus(data, "data")?.examples(&model.vocab))
}

pub fn eval(run: EvalRun) -> Result<(), CliError> {
    let ckpt = require(&run.paths.checkpoint, "checkpoint")?;
    let data = require(&run.paths.data, "data")?;
    inputs_exist(&[Some(ckpt), Some(data)])?;
    let model = load_model(ckpt, run.alpha)?;
    let ex = examples_for(&model, &run.paths)?;
    let report = evaluate(&model, &ex, run.batch_size, run.parallel)?;
    log_eval("eval", &report);
    if let Some(out) = run.paths.out.as_deref() {
        Effective {
            command: "eval",
            sentence: None,
            bucket_edges: None,
            model: &model.config,
            train: None,
            paths: &run.paths,
        }
        .write(out)?;
        write_eval(&out.join(EVAL_FILE), &report)?;
    }
    Ok(())
}

pub fn eval_by_length(run: EvalRun, edges: &[f64]) -> Result<(), CliError> {
    let ckpt = require(&run.paths.checkpoint, "checkpoint")?;
    let data = require(&run.paths.data, "data")?;
    let out = require(&run.paths.out, "out")?;
    length_buckets(edges).map_err(|e| CliError::Usage(e.to_string()))?;
    inputs_exist(&[Some(ckpt), Some(data)])?;
    let model = load_model(ckpt, run.alpha)?;
    let ex = examples_for(&model, &run.paths)?;
    let buckets = evaluate_by_length(&model, &ex, edges, run.batch_size, run.parallel)?;
    Effective {
        command: "eval-by-length",
        sentence: None,
        bucket_edges: Some(edges),
        model: &model.config,
        train: None,
        paths: &run.paths,
    }
    .write(out)?;
    let path = out.join(LENGTH_TABLE_FILE);
    let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
    write_length_table(BufWriter::new(file), &buckets).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    for b in &buckets {
        let upper = b.upper.map_or("inf".to_string(), |u| u.to_string());
        let acc = b.accuracy().map_or("-".to_string(), |a| format!("{a:.4}"));
        log::info!("[{}, {upper}): {} pairs, accuracy {acc}", b.lower, b.count);
    }
    log::info!("length table written to {}", path.display());
    Ok(())
}

pub fn encode(paths: &Paths, alpha: Option<f64>, batch_size: usize) -> Result<(), CliError> {
    let ckpt = require(&paths.checkpoint, "checkpoint")?;
    let input = require(&paths.sentences, "sentences")?;
    let out = require(&paths.out, "out")?;
    inputs_exist(&[Some(ckpt), Some(input)])?;
    let model = load_model(ckpt, alpha)?;

    let file = File::open(input).map_err(|e| CliError::io(input, e))?;
    let mut sentences = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(input, e))?;
        match tokenize(&line) {
            Ok(tokens) => sentences.push(model.vocab.encode(&tokens)),
            Err(_) => log::warn!("{}:{}: empty sentence skipped", input.display(), i + 1),
        }
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let file = File::create(out).map_err(|e| CliError::io(out, e))?;
    let mut w = BufWriter::new(file);
    for chunk in sentences.chunks(batch_size.max(1)) {
        let vectors = model.encode_sentences(chunk)?;
        for r in 0..vectors.rows() {
            let line: Vec<String> = vectors.row(r).iter().map(f64::to_string).collect();
            writeln!(w, "{}", line.join("\t")).map_err(|e| CliError::io(out, e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(out, e))?;
    log::info!(
        "{} vectors of width {} written to {}",
        sentences.len(),
        model.config.sentence_dim(),
        out.display()
    );
    Ok(())
}

pub fn inspect(paths: &Paths, alpha: Option<f64>, sentence: &str, formats: &[ExportFormat]) -> Result<(), CliError> {
    let ckpt = require(&paths.checkpoint, "checkpoint")?;
    let out = require(&paths.out, "out")?;
    let model = load_model(ckpt, alpha)?;
    let report = capture(&model, sentence)?;
    for v in report.violations() {
        log::warn!("report invariant violated: {v}");
    }
    Effective {
        command: "inspect",
        sentence: Some(sentence),
        bucket_edges: None,
        model: &model.config,
        train: None,
        paths,
    }
    .write(out)?;
    let written = export(&report, out, formats)?;
    log::info!("{} tokens; {} files written under {}", report.len(), written.len(), out.display());
    Ok(())
}
