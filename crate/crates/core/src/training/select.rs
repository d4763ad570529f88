use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{FusionModel, ModelConfig};
use crate::metrics::tally;

use super::pool::run_indexed;
use super::trainer::{predict_indices, train_one, BatchSource};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedScore {
    pub seed: u64,
    pub train_accuracy: f64,
    pub train_loss: f64,
}

#[derive(Clone, Debug)]
pub struct Selection {
    pub best_seed: u64,
    pub model: FusionModel,
    /// One entry per candidate seed, in the order given.
    pub scores: Vec<SeedScore>,
    /// Every trained model, aligned with `scores`.
    pub models: Vec<FusionModel>,
}

/// Higher training accuracy first, then lower training loss, then lower seed.
pub fn seed_order(a: &SeedScore, b: &SeedScore) -> Ordering {
    b.train_accuracy
        .total_cmp(&a.train_accuracy)
        .then(a.train_loss.total_cmp(&b.train_loss))
        .then(a.seed.cmp(&b.seed))
}

/// Trains `config` once per seed on `indices` (train plus validation) and
/// keeps the model with the best fit to those same samples.
pub fn select_initialization<D: BatchSource + ?Sized>(
    config: &ModelConfig,
    data: &D,
    indices: &[usize],
    seeds: &[u64],
    workers: usize,
) -> Result<Selection> {
    if seeds.is_empty() {
        return Err(Error::Config("no candidate seeds".into()));
    }
    let runs = run_indexed(seeds.len(), workers, |i| {
        let out = train_one(&config.clone().with_seed(seeds[i]), data, indices)?;
        let (truths, preds, loss) = predict_indices(&out.model, data, indices)?;
        let score = SeedScore {
            seed: seeds[i],
            train_accuracy: tally(&truths, &preds)?.accuracy(),
            train_loss: loss,
        };
        log::info!(
            "seed {}: train accuracy {:.4}, loss {:.4}",
            score.seed,
            score.train_accuracy,
            score.train_loss
        );
        Ok((score, out.model))
    })?;
    let (scores, models): (Vec<SeedScore>, Vec<FusionModel>) = runs.into_iter().unzip();
    let best = (0..scores.len())
        .min_by(|&a, &b| seed_order(&scores[a], &scores[b]))
        .expect("nonempty");
    Ok(Selection {
        best_seed: scores[best].seed,
        model: models[best].clone(),
        scores,
        models,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tie_break_order() {
        let s = |seed, acc, loss| SeedScore {
            seed,
            train_accuracy: acc,
            train_loss: loss,
        };
        let mut v = [s(4, 0.9, 0.3), s(2, 0.9, 0.3), s(1, 0.8, 0.1), s(3, 0.9, 0.2)];
        v.sort_by(seed_order);
        assert_eq!(v.iter().map(|x| x.seed).collect::<Vec<_>>(), [3, 2, 4, 1]);
    }
}
