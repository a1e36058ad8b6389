use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::dataset::read_text;
use super::{
    generate_synthetic_intents, ingest_corpus, to_tsv, IntentDataset, Record, Result, RunConfig, RunError, Split,
    SyntheticSpec,
};
use crate::embed::{tokenize, train_skipgram, EmbeddingFile};
use crate::geometry::check::{run_all, SuiteOptions, SuiteReport};
use crate::geometry::InverseProjection;
use crate::hypformer::{evaluate, train_classifier, Classifier, ModelBundle, TokenTable};
use crate::GeometryTag;

/// The report written by `train-classifier` and `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    /// Held-out accuracy (all rows for `evaluate`).
    pub accuracy: f64,
    pub cross_entropy: f64,
    pub epochs: usize,
    pub geometry: String,
    pub dims: usize,
    pub seed: u64,
    pub train_accuracy: Option<f64>,
    pub train_cross_entropy: Option<f64>,
    pub train_size: usize,
    pub eval_size: usize,
    /// Mean training loss per epoch.
    pub train_loss: Vec<f64>,
}

impl Metrics {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

#[derive(Debug, Clone)]
pub struct EmbeddingRun {
    pub file: EmbeddingFile,
    pub epoch_losses: Vec<f64>,
}

fn log_config(command: &str, cfg: &RunConfig) {
    log::info!("{command}: resolved config");
    for line in cfg.lines() {
        log::info!("  {line}");
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let f = File::create(path).map_err(|e| RunError::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(bytes).and_then(|_| w.flush()).map_err(|e| RunError::io(path, e))
}

fn read_embeddings(path: &Path) -> Result<EmbeddingFile> {
    let f = File::open(path).map_err(|e| RunError::io(path, e))?;
    EmbeddingFile::read_from(BufReader::new(f))
        .map_err(|source| RunError::Embedding { path: path.display().to_string(), source })
}

fn required<'a>(p: &'a Option<PathBuf>, name: &'static str) -> Result<&'a Path> {
    p.as_deref().ok_or(RunError::Missing(name))
}

/// Writes a generated intent dataset as TSV to `out`.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<Vec<Record>> {
    log_config("gen-data", cfg);
    let synth = SyntheticSpec {
        classes: cfg.classes,
        composites: cfg.composites,
        per_class: cfg.per_class,
        rows: cfg.rows,
        vocab_size: cfg.vocab_size,
        max_noise: cfg.max_noise,
        seed: cfg.seed,
    };
    let records = generate_synthetic_intents(&synth)?;
    write_file(required(&cfg.out, "out")?, to_tsv(&records).as_bytes())?;
    log::info!("wrote {} rows", records.len());
    Ok(records)
}

/// Trains skip-gram embeddings on `corpus`, or on the training split of
/// `dataset` when no corpus is given, and writes them to `out` if set.
/// `poincare` trains on the hyperboloid and converts the result.
pub fn cmd_train_embeddings(cfg: &RunConfig) -> Result<EmbeddingRun> {
    log_config("train-embeddings", cfg);
    let tokens: Vec<String> = match (&cfg.corpus, &cfg.dataset) {
        (Some(corpus), _) => ingest_corpus(corpus, cfg.keep_whitespace)?,
        (None, Some(ds)) => {
            let data = IntentDataset::load(ds, cfg.holdout, cfg.seed)?;
            data.indices(Split::Train)
                .iter()
                .flat_map(|&i| tokenize(&data.records[i].utterance, cfg.keep_whitespace))
                .collect()
        }
        (None, None) => return Err(RunError::Missing("corpus")),
    };
    let mut sg = cfg.skipgram();
    if sg.geometry == GeometryTag::Poincare {
        sg.geometry = GeometryTag::Hyperboloid;
    }
    let out = train_skipgram(&tokens, &sg, |_, _| {})?;
    let mut file = EmbeddingFile::from_training(&out);
    if cfg.geometry == GeometryTag::Poincare {
        file = file.convert(GeometryTag::Poincare)?;
    }
    if let Some(path) = &cfg.out {
        write_file(path, file.to_text().as_bytes())?;
    }
    Ok(EmbeddingRun { file, epoch_losses: out.epoch_losses })
}

/// Embedding rows in the geometry the classifier runs in.
fn table_for(file: &EmbeddingFile, model: GeometryTag) -> Result<TokenTable> {
    let rows = match (file.geometry, model) {
        (GeometryTag::Euclidean, GeometryTag::Euclidean) | (GeometryTag::Poincare, GeometryTag::Poincare) => {
            file.rows.clone()
        }
        (GeometryTag::Hyperboloid, GeometryTag::Poincare) => file.convert(GeometryTag::Poincare)?.rows,
        (embeddings, model) => return Err(RunError::GeometryMismatch { embeddings, model }),
    };
    Ok(TokenTable::new(file.tokens.clone(), rows)?)
}

fn metrics_path(cfg: &RunConfig) -> Option<PathBuf> {
    cfg.metrics.clone().or_else(|| {
        cfg.out.as_ref().map(|o| {
            let mut s = o.clone().into_os_string();
            s.push(".metrics.json");
            PathBuf::from(s)
        })
    })
}

/// Trains the classifier on the training split, evaluates on the held-out
/// split, writes the model bundle to `out` and the metrics report next to it
/// (or to `metrics`).
pub fn cmd_train_classifier(cfg: &RunConfig) -> Result<Metrics> {
    log_config("train-classifier", cfg);
    let data = IntentDataset::load(required(&cfg.dataset, "dataset")?, cfg.holdout, cfg.seed)?;
    let emb = read_embeddings(required(&cfg.embeddings, "embeddings")?)?;
    let mut tcfg = cfg.transformer(data.labels.len());
    if emb.dim != tcfg.model_dim {
        log::warn!("embedding dimension {} overrides dim={}", emb.dim, tcfg.model_dim);
        tcfg.model_dim = emb.dim;
    }
    let table = table_for(&emb, tcfg.geometry)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Classifier::new(tcfg, table, &mut rng)?;

    let (train_idx, held_idx) = (data.indices(Split::Train), data.indices(Split::Holdout));
    let encode = |idx: &[usize]| data.encode(idx, &model.table, &data.labels, cfg.max_seq_len, cfg.keep_whitespace);
    let train = encode(&train_idx)?;
    let held = encode(&held_idx)?;
    let unknown = train.sequences.iter().flatten().filter(|s| **s == crate::hypformer::Slot::Unknown).count();
    if unknown > 0 {
        log::info!("{unknown} training positions map to UNK");
    }
    let tc = cfg.training();
    let report = train_classifier(&mut model, &train, &tc, |_| {})?;
    let train_eval = evaluate(&model, &train, cfg.batch_size)?;
    let eval = if held.is_empty() { train_eval.clone() } else { evaluate(&model, &held, cfg.batch_size)? };
    let metrics = Metrics {
        accuracy: eval.accuracy,
        cross_entropy: eval.cross_entropy,
        epochs: cfg.epochs,
        geometry: model.config.geometry.to_string(),
        dims: model.config.model_dim,
        seed: cfg.seed,
        train_accuracy: Some(train_eval.accuracy),
        train_cross_entropy: Some(train_eval.cross_entropy),
        train_size: train.len(),
        eval_size: if held.is_empty() { train.len() } else { held.len() },
        train_loss: report.epochs.iter().map(|e| e.loss).collect(),
    };
    log::info!(
        "held-out accuracy {:.4} cross-entropy {:.4}; train accuracy {:.4}",
        metrics.accuracy,
        metrics.cross_entropy,
        train_eval.accuracy
    );
    if let Some(out) = &cfg.out {
        let bundle = ModelBundle {
            classifier: model,
            labels: data.labels.clone(),
            optimizer: Some(report.optimizer.state),
            meta: [
                ("seed".to_string(), cfg.seed.to_string()),
                ("epochs".to_string(), cfg.epochs.to_string()),
                ("keep_whitespace".to_string(), cfg.keep_whitespace.to_string()),
            ]
            .into(),
        };
        write_file(out, &bundle.to_bytes())?;
    }
    if let Some(path) = metrics_path(cfg) {
        write_file(&path, metrics.to_json()?.as_bytes())?;
    }
    Ok(metrics)
}

/// Scores a saved model on every row of `dataset`.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Metrics> {
    log_config("evaluate", cfg);
    let path = required(&cfg.model, "model")?;
    let f = File::open(path).map_err(|e| RunError::io(path, e))?;
    let bundle = ModelBundle::read_from(BufReader::new(f))?;
    let ds_path = required(&cfg.dataset, "dataset")?;
    let records = super::parse_tsv(&read_text(ds_path)?, &ds_path.display().to_string())?;
    let data = IntentDataset::new(records, 0.0, 0)?;
    let keep_ws = bundle.meta.get("keep_whitespace").is_some_and(|v| v == "true");
    let all: Vec<usize> = (0..data.records.len()).collect();
    let model = &bundle.classifier;
    let batch = data.encode(&all, &model.table, &bundle.labels, model.config.max_seq_len, keep_ws)?;
    let eval = evaluate(model, &batch, cfg.batch_size)?;
    let meta_num = |k: &str| bundle.meta.get(k).and_then(|v| v.parse().ok());
    let metrics = Metrics {
        accuracy: eval.accuracy,
        cross_entropy: eval.cross_entropy,
        epochs: meta_num("epochs").unwrap_or(0) as usize,
        geometry: model.config.geometry.to_string(),
        dims: model.config.model_dim,
        seed: meta_num("seed").unwrap_or(0),
        train_accuracy: None,
        train_cross_entropy: None,
        train_size: 0,
        eval_size: batch.len(),
        train_loss: Vec::new(),
    };
    if let Some(out) = &cfg.out {
        write_file(out, metrics.to_json()?.as_bytes())?;
    }
    Ok(metrics)
}

/// Converts `embeddings` to `geometry` (hyperboloid ↔ poincare), writing
/// the result to `out`.
pub fn cmd_convert(cfg: &RunConfig) -> Result<EmbeddingFile> {
    log_config("convert", cfg);
    let input = read_embeddings(required(&cfg.embeddings, "embeddings")?)?;
    let converted = input.convert(cfg.geometry)?;
    write_file(required(&cfg.out, "out")?, converted.to_text().as_bytes())?;
    Ok(converted)
}

/// Runs every geometry invariant suite. `fault` swaps in the linear
/// ball-to-hyperboloid denominator, which the isometry suite must catch.
pub fn cmd_geometry_check(seed: u64, fault: bool) -> Vec<SuiteReport> {
    let opts = SuiteOptions {
        seed,
        inverse: if fault { InverseProjection::Linear } else { InverseProjection::Squared },
        ..SuiteOptions::default()
    };
    run_all(&opts)
}
