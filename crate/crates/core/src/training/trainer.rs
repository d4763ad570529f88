use rand::seq::SliceRandom;

use crate::backbones::Phase;
use crate::data::{GuardedDataset, ModalitySet, MultimodalBatch, MultimodalDataset};
use crate::error::{Error, Result};
use crate::fusion::{argmax_rows, FusionModel, ModelConfig};
use crate::metrics::{tally, ConfusionMatrix};
use crate::optim::Adam;
use crate::rng::child_rng;
use crate::tensor::Graph;

const EVAL_BATCH: usize = 128;

/// Anything that can assemble labelled mini-batches by sample index.
pub trait BatchSource: Sync {
    fn batch(&self, indices: &[usize], mods: &ModalitySet) -> Result<MultimodalBatch>;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl BatchSource for MultimodalDataset {
    fn batch(&self, indices: &[usize], mods: &ModalitySet) -> Result<MultimodalBatch> {
        MultimodalDataset::batch(self, indices, mods)
    }
    fn len(&self) -> usize {
        MultimodalDataset::len(self)
    }
}

impl BatchSource for GuardedDataset<'_> {
    fn batch(&self, indices: &[usize], mods: &ModalitySet) -> Result<MultimodalBatch> {
        GuardedDataset::batch(self, indices, mods)
    }
    fn len(&self) -> usize {
        GuardedDataset::len(self)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: FusionModel,
    /// Sample-weighted mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch Adam on cross-entropy for `config.epochs` epochs. The sample
/// order is reshuffled every epoch from the config seed's `shuffle` stream;
/// dropout masks come from its `dropout` stream.
pub fn train_one<D: BatchSource + ?Sized>(config: &ModelConfig, data: &D, indices: &[usize]) -> Result<TrainOutcome> {
    if indices.is_empty() {
        return Err(Error::Data("no training samples".into()));
    }
    let mut model = FusionModel::build(config)?;
    let mut opt = Adam::new(model.params(), config.learning_rate);
    let mut shuffle_rng = child_rng(config.seed, "shuffle");
    let mut dropout_rng = child_rng(config.seed, "dropout");
    let mut order = indices.to_vec();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = data.batch(chunk, &config.modalities)?;
            let mut g = Graph::new();
            let vars = model.params().bind(&mut g);
            let logits = model.forward(&mut g, &vars, &batch, &mut Phase::Train(&mut dropout_rng))?;
            let loss = g.cross_entropy(logits, &batch.labels)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, loss: value });
            }
            g.backward(loss)?;
            opt.step(model.params_mut(), &g, &vars)?;
            total += value * chunk.len() as f64;
        }
        let mean = total / order.len() as f64;
        log::debug!("epoch {epoch}/{}: loss {mean:.5}", config.epochs);
        epoch_losses.push(mean);
    }
    Ok(TrainOutcome { model, epoch_losses })
}

/// Eval-mode predictions and mean cross-entropy over `indices`.
pub fn predict_indices<D: BatchSource + ?Sized>(
    model: &FusionModel,
    data: &D,
    indices: &[usize],
) -> Result<(Vec<usize>, Vec<usize>, f64)> {
    let mods = &model.config().modalities;
    let mut truths = Vec::with_capacity(indices.len());
    let mut preds = Vec::with_capacity(indices.len());
    let mut loss = 0.0;
    for chunk in indices.chunks(EVAL_BATCH) {
        let batch = data.batch(chunk, mods)?;
        let mut g = Graph::new();
        let vars = model.params().bind_frozen(&mut g);
        let logits = model.forward(&mut g, &vars, &batch, &mut Phase::Eval)?;
        preds.extend(argmax_rows(g.value(logits)));
        let ce = g.cross_entropy(logits, &batch.labels)?;
        loss += g.value(ce).item() * chunk.len() as f64;
        truths.extend_from_slice(&batch.labels);
    }
    let n = indices.len().max(1) as f64;
    Ok((truths, preds, loss / n))
}

pub fn evaluate<D: BatchSource + ?Sized>(model: &FusionModel, data: &D, indices: &[usize]) -> Result<ConfusionMatrix> {
    let (truths, preds, _) = predict_indices(model, data, indices)?;
    tally(&truths, &preds)
}
