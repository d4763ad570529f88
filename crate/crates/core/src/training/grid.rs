use std::cmp::Ordering;
use std::time::Instant;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::data::GuardedDataset;
use crate::error::{Error, Result};
use crate::fusion::{FusionModel, ModelConfig};
use crate::rng::child_rng;

use super::pool::run_indexed;
use super::split::{SplitPlan, NUM_FOLDS};
use super::trainer::{evaluate, train_one};

/// A dropout grid value: one rate for all three layers, or one per layer.
/// In JSON either `0.3` or `[0.2, 0.3, 0.5]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Dropout {
    Uniform(f64),
    PerLayer([f64; 3]),
}

impl Dropout {
    pub fn rates(self) -> [f64; 3] {
        match self {
            Dropout::Uniform(r) => [r; 3],
            Dropout::PerLayer(r) => r,
        }
    }
}

/// Hyperparameter axes searched by [`grid_search`]. Backbone depth is not an
/// axis: every backbone has three layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub learning_rates: Vec<f64>,
    pub dropouts: Vec<Dropout>,
    pub batch_sizes: Vec<usize>,
    pub epochs: Vec<usize>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            learning_rates: vec![1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
            dropouts: [0.1, 0.2, 0.3, 0.4, 0.5].map(Dropout::Uniform).to_vec(),
            batch_sizes: vec![16, 32, 64, 128],
            epochs: vec![10, 20, 50, 80, 100, 150, 200],
        }
    }
}

impl Grid {
    /// A grid holding only the base config's own values.
    pub fn single(base: &ModelConfig) -> Self {
        Self {
            learning_rates: vec![base.learning_rate],
            dropouts: vec![Dropout::PerLayer(base.dropout)],
            batch_sizes: vec![base.batch_size],
            epochs: vec![base.epochs],
        }
    }

    pub fn len(&self) -> usize {
        self.learning_rates.len() * self.dropouts.len() * self.batch_sizes.len() * self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every grid point applied to `base`, learning rate varying slowest.
    pub fn configs(&self, base: &ModelConfig) -> Vec<ModelConfig> {
        let mut out = Vec::with_capacity(self.len());
        for &lr in &self.learning_rates {
            for &d in &self.dropouts {
                for &b in &self.batch_sizes {
                    for &e in &self.epochs {
                        out.push(ModelConfig {
                            learning_rate: lr,
                            dropout: d.rates(),
                            batch_size: b,
                            epochs: e,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        out
    }

    /// At most `budget` grid points, drawn without replacement from the
    /// seed's `grid` stream and kept in grid order.
    pub fn sample(&self, base: &ModelConfig, budget: Option<usize>, seed: u64) -> Vec<ModelConfig> {
        let all = self.configs(base);
        match budget {
            Some(k) if k < all.len() => {
                let mut picked = sample(&mut child_rng(seed, "grid"), all.len(), k).into_vec();
                picked.sort_unstable();
                picked.into_iter().map(|i| all[i].clone()).collect()
            }
            _ => all,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub config: ModelConfig,
    pub config_hash: String,
    pub param_count: usize,
    pub fold_accuracies: Vec<f64>,
    pub mean_val_accuracy: f64,
    pub seed: u64,
    pub wall_time_secs: f64,
}

#[derive(Clone, Debug)]
pub struct GridOutcome {
    pub best: ModelConfig,
    pub best_index: usize,
    /// In the order the configs were given.
    pub trials: Vec<TrialResult>,
}

/// Cross-validates one config over the plan's folds. Only training indices
/// are ever read.
pub fn run_trial(config: &ModelConfig, plan: &SplitPlan, data: &GuardedDataset<'_>) -> Result<TrialResult> {
    let start = Instant::now();
    let mut fold_accuracies = Vec::with_capacity(NUM_FOLDS);
    for k in 0..NUM_FOLDS {
        let (fit, val) = plan.fold(k);
        let out = train_one(config, data, &fit)?;
        fold_accuracies.push(evaluate(&out.model, data, &val)?.accuracy());
    }
    let mean_val_accuracy = fold_accuracies.iter().sum::<f64>() / fold_accuracies.len() as f64;
    Ok(TrialResult {
        config: config.clone(),
        config_hash: config.config_hash(),
        param_count: FusionModel::build(config)?.param_count(),
        fold_accuracies,
        mean_val_accuracy,
        seed: config.seed,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Higher validation accuracy first, then lower learning rate, fewer
/// parameters, lower config hash.
pub fn trial_order(a: &TrialResult, b: &TrialResult) -> Ordering {
    b.mean_val_accuracy
        .total_cmp(&a.mean_val_accuracy)
        .then(a.config.learning_rate.total_cmp(&b.config.learning_rate))
        .then(a.param_count.cmp(&b.param_count))
        .then_with(|| a.config_hash.cmp(&b.config_hash))
}

/// Exhaustive search over `configs` with cross-validation on the plan's
/// training folds. Trials run on up to `workers` threads; results keep the
/// input order.
pub fn grid_search(
    configs: &[ModelConfig],
    plan: &SplitPlan,
    data: &GuardedDataset<'_>,
    workers: usize,
) -> Result<GridOutcome> {
    if configs.is_empty() {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }
    let trials = run_indexed(configs.len(), workers, |i| {
        let t = run_trial(&configs[i], plan, data)?;
        log::info!(
            "trial {}/{}: lr {} dropout {:?} batch {} epochs {} -> cv accuracy {:.4}",
            i + 1,
            configs.len(),
            t.config.learning_rate,
            t.config.dropout,
            t.config.batch_size,
            t.config.epochs,
            t.mean_val_accuracy
        );
        Ok(t)
    })?;
    let best_index = (0..trials.len())
        .min_by(|&a, &b| trial_order(&trials[a], &trials[b]))
        .expect("nonempty");
    Ok(GridOutcome {
        best: trials[best_index].config.clone(),
        best_index,
        trials,
    })
}

pub fn trials_csv(trials: &[TrialResult]) -> String {
    let mut out = String::from("index,config_hash,learning_rate,dropout,batch_size,epochs,param_count,fold_accuracies,mean_val_accuracy,seed,wall_time_secs\n");
    for (i, t) in trials.iter().enumerate() {
        let folds: Vec<String> = t.fold_accuracies.iter().map(|a| format!("{a:.6}")).collect();
        let dropout: Vec<String> = t.config.dropout.iter().map(f64::to_string).collect();
        out.push_str(&format!(
            "{i},{},{},{},{},{},{},{},{:.6},{},{:.3}\n",
            t.config_hash,
            t.config.learning_rate,
            dropout.join(";"),
            t.config.batch_size,
            t.config.epochs,
            t.param_count,
            folds.join(";"),
            t.mean_val_accuracy,
            t.seed,
            t.wall_time_secs
        ));
    }
    out
}
