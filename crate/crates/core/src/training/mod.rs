//! The experimental protocol: stratified split, cross-validated grid search,
//! seed selection, robustness sweeps and ablation matrices.

mod grid;
mod pool;
mod report;
mod select;
mod split;
mod sweep;
mod trainer;

pub use grid::{grid_search, run_trial, trial_order, trials_csv, Dropout, Grid, GridOutcome, TrialResult};
pub use pool::{run_indexed, worker_count, WORKERS_ENV};
pub use report::{Comparison, RunReport, REPORT_FORMAT};
pub use select::{seed_order, select_initialization, SeedScore, Selection};
pub use split::{stratified_split, SplitPlan, NUM_FOLDS};
pub use sweep::{
    ablation_matrix, cell_label, evaluate_seeds, robustness_sweep, BoxSummary, CellReport, MeanStd, Retune, SeedRun,
};
pub use trainer::{evaluate, predict_indices, train_one, BatchSource, TrainOutcome};
