use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Classifier, HypformerError, Result, SequenceBatch};
use crate::diffcore::Tensor;
use crate::optim::{begin_epoch, Optimizer, OptimizerConfig, RestartSchedule};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub schedule: RestartSchedule,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        Self {
            epochs,
            batch_size: 16,
            optimizer: OptimizerConfig::default(),
            schedule: RestartSchedule::midpoint(epochs),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training cross-entropy over the epoch's batches.
    pub loss: f64,
    /// Accuracy of the training passes themselves (dropout active).
    pub running_accuracy: f64,
    pub lr_scale: f64,
    pub restarted: bool,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub optimizer: Optimizer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub cross_entropy: f64,
    pub predictions: Vec<usize>,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Mini-batch training with RMSProp / Riemannian SGD and the restart
/// schedule. `on_epoch` sees each epoch's statistics as they complete.
pub fn train_classifier(
    model: &mut Classifier,
    data: &SequenceBatch,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(HypformerError::EmptyBatch);
    }
    if cfg.batch_size == 0 {
        return Err(HypformerError::Config("batch_size must be positive".into()));
    }
    cfg.schedule.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let restarted = begin_epoch(&cfg.schedule, epoch, &mut opt.state);
        if restarted {
            log::info!("restart at epoch {epoch}: lr reset, accumulators cleared");
        }
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.subset(chunk);
            let drop_rng: Option<&mut dyn rand::RngCore> =
                if model.config.dropout > 0.0 { Some(&mut rng) } else { None };
            let (tape, loss, logits) = model.loss_tape(&batch, drop_rng)?;
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                let node = tape.first_non_finite().unwrap_or(loss.index());
                return Err(HypformerError::Diverged {
                    epoch,
                    source: crate::diffcore::DiffError::NonFinite { node },
                });
            }
            let grads = tape.backward(loss).map_err(|source| HypformerError::Diverged { epoch, source })?;
            let named: BTreeMap<String, Tensor> =
                grads.named().filter_map(|(n, g)| g.map(|g| (n.to_string(), g.clone()))).collect();
            opt.step(&mut model.params, &named)?;
            loss_sum += lv * chunk.len() as f64;
            let lg = tape.value(logits);
            correct += (0..lg.rows()).filter(|&r| argmax(lg.row_slice(r)) == batch.labels[r]).count();
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / data.len() as f64,
            running_accuracy: correct as f64 / data.len() as f64,
            lr_scale: opt.state.lr_scale,
            restarted,
        };
        log::info!(
            "epoch {epoch} loss {} acc {:.4} lr {:.6e}",
            stats.loss,
            stats.running_accuracy,
            opt.euclidean_lr()
        );
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(TrainReport { epochs: history, optimizer: opt })
}

/// Accuracy and mean cross-entropy in evaluation mode.
pub fn evaluate(model: &Classifier, data: &SequenceBatch, batch_size: usize) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(HypformerError::EmptyBatch);
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let (mut ce, mut correct) = (0.0, 0usize);
    let mut predictions = Vec::with_capacity(data.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let batch = data.subset(chunk);
        let probs = model.classifier_forward(&batch)?;
        for (r, &y) in batch.labels.iter().enumerate() {
            let row = probs.row_slice(r);
            let pred = argmax(row);
            predictions.push(pred);
            correct += usize::from(pred == y);
            ce -= row[y].max(f64::MIN_POSITIVE).ln();
        }
    }
    let n = data.len() as f64;
    Ok(Evaluation { accuracy: correct as f64 / n, cross_entropy: ce / n, predictions })
}
