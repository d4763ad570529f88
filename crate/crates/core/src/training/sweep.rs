use serde::{Deserialize, Serialize};

use crate::data::{GuardedDataset, ModalitySet, MultimodalDataset};
use crate::error::{Error, Result};
use crate::fusion::{AttentionMode, ModelConfig};
use crate::metrics::{mean, quantile_sorted, sample_std, ConfusionMatrix};

use super::grid::{grid_search, Grid};
use super::pool::run_indexed;
use super::split::SplitPlan;
use super::trainer::{evaluate, train_one, BatchSource};

/// Held-out results of one trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl SeedRun {
    pub fn new(seed: u64, confusion: ConfusionMatrix) -> Self {
        let s = confusion.summary();
        Self {
            seed,
            confusion,
            accuracy: s.accuracy,
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        Self {
            mean: mean(xs),
            std: sample_std(xs),
        }
    }
}

/// Five-number summary with Tukey fences at `Q1 − 1.5·IQR` and
/// `Q3 + 1.5·IQR`. Whiskers end at the most extreme observations inside the
/// fences. Quartiles use linear interpolation between order statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxSummary {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub lower_fence: f64,
    pub upper_fence: f64,
    pub lower_whisker: f64,
    pub upper_whisker: f64,
    pub outliers: Vec<f64>,
}

impl BoxSummary {
    pub fn of(scores: &[f64]) -> Result<Self> {
        if scores.is_empty() || scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Degenerate("box summary needs finite scores".into()));
        }
        let mut s = scores.to_vec();
        s.sort_by(f64::total_cmp);
        let q1 = quantile_sorted(&s, 0.25);
        let q3 = quantile_sorted(&s, 0.75);
        let iqr = q3 - q1;
        let lower_fence = q1 - 1.5 * iqr;
        let upper_fence = q3 + 1.5 * iqr;
        let inside = s.iter().copied().filter(|&x| x >= lower_fence && x <= upper_fence);
        let lower_whisker = inside.clone().fold(f64::INFINITY, f64::min);
        let upper_whisker = inside.fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            n: s.len(),
            min: s[0],
            q1,
            median: quantile_sorted(&s, 0.5),
            q3,
            max: s[s.len() - 1],
            lower_fence,
            upper_fence,
            lower_whisker,
            upper_whisker,
            outliers: s
                .iter()
                .copied()
                .filter(|&x| x < lower_fence || x > upper_fence)
                .collect(),
        })
    }
}

/// One experiment cell: an attention mode on a modality subset, evaluated
/// over several seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub label: String,
    pub mode: AttentionMode,
    pub modalities: ModalitySet,
    /// The config trained for every seed (after re-tuning, when enabled).
    pub config: ModelConfig,
    pub config_hash: String,
    pub runs: Vec<SeedRun>,
    pub accuracy: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
    pub f1_box: BoxSummary,
}

impl CellReport {
    pub fn new(label: impl Into<String>, config: &ModelConfig, runs: Vec<SeedRun>) -> Result<Self> {
        let col = |f: fn(&SeedRun) -> f64| runs.iter().map(f).collect::<Vec<f64>>();
        let f1s = col(|r| r.f1);
        Ok(Self {
            label: label.into(),
            mode: config.mode,
            modalities: config.modalities.clone(),
            config: config.clone(),
            config_hash: config.config_hash(),
            accuracy: MeanStd::of(&col(|r| r.accuracy)),
            precision: MeanStd::of(&col(|r| r.precision)),
            recall: MeanStd::of(&col(|r| r.recall)),
            f1: MeanStd::of(&f1s),
            f1_box: BoxSummary::of(&f1s)?,
            runs,
        })
    }

    pub fn f1_scores(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.f1).collect()
    }
}

/// Trains `config` under each seed on `train` and scores it on `test`.
pub fn evaluate_seeds<D: BatchSource + ?Sized>(
    config: &ModelConfig,
    data: &D,
    train: &[usize],
    test: &[usize],
    seeds: &[u64],
    workers: usize,
) -> Result<Vec<SeedRun>> {
    run_indexed(seeds.len(), workers, |i| seed_run(config, data, train, test, seeds[i]))
}

fn seed_run<D: BatchSource + ?Sized>(
    config: &ModelConfig,
    data: &D,
    train: &[usize],
    test: &[usize],
    seed: u64,
) -> Result<SeedRun> {
    let cfg = config.clone().with_seed(seed);
    let out = train_one(&cfg, data, train)?;
    let run = SeedRun::new(seed, evaluate(&out.model, data, test)?);
    log::info!(
        "{} on {} seed {seed}: test accuracy {:.4}, macro-F1 {:.4}",
        cfg.mode,
        cfg.modalities,
        run.accuracy,
        run.f1
    );
    Ok(run)
}

/// Test macro-F1 distribution of one config across many seeds, with the
/// held-out set fixed by `plan`.
pub fn robustness_sweep(
    config: &ModelConfig,
    data: &MultimodalDataset,
    plan: &SplitPlan,
    seeds: &[u64],
    workers: usize,
) -> Result<CellReport> {
    let runs = evaluate_seeds(config, data, &plan.train, &plan.test, seeds, workers)?;
    CellReport::new(cell_label(config.mode, &config.modalities), config, runs)
}

pub fn cell_label(mode: AttentionMode, mods: &ModalitySet) -> String {
    format!("{mode} [{mods}]")
}

/// Per-cell grid search settings for [`ablation_matrix`].
#[derive(Clone, Debug)]
pub struct Retune {
    pub grid: Grid,
    pub budget: Option<usize>,
}

/// Evaluates every (mode, modality subset) cell over `seeds` on the same
/// split. With `retune`, each cell first gets its own cross-validated grid
/// search on the training portion; the test indices stay guarded until all
/// searches finish.
pub fn ablation_matrix(
    base: &ModelConfig,
    cells: &[(AttentionMode, ModalitySet)],
    data: &MultimodalDataset,
    plan: &SplitPlan,
    seeds: &[u64],
    retune: Option<&Retune>,
    workers: usize,
) -> Result<Vec<CellReport>> {
    if cells.is_empty() || seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one cell and one seed".into()));
    }
    let guard = GuardedDataset::new(data, &plan.test);
    let mut configs = Vec::with_capacity(cells.len());
    for (mode, mods) in cells {
        let cfg = base.clone().with_mode(*mode).with_modalities(mods.clone());
        let cfg = match retune {
            Some(r) => {
                let candidates = r.grid.sample(&cfg, r.budget, base.seed);
                grid_search(&candidates, plan, &guard, workers)?.best
            }
            None => cfg,
        };
        cfg.validate()?;
        configs.push(cfg);
    }
    if guard.premature_reads() > 0 {
        return Err(Error::Data(format!(
            "{} held-out reads during tuning",
            guard.premature_reads()
        )));
    }
    guard.release();

    let n_seeds = seeds.len();
    let runs = run_indexed(cells.len() * n_seeds, workers, |t| {
        seed_run(
            &configs[t / n_seeds],
            &guard,
            &plan.train,
            &plan.test,
            seeds[t % n_seeds],
        )
    })?;
    let mut out = Vec::with_capacity(cells.len());
    for (c, chunk) in runs.chunks(n_seeds).enumerate() {
        let (mode, mods) = &cells[c];
        out.push(CellReport::new(cell_label(*mode, mods), &configs[c], chunk.to_vec())?);
    }
    Ok(out)
}
