use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::rng::child_rng;

pub const NUM_FOLDS: usize = 3;

/// Held-out test set plus a 3-fold assignment of the remaining samples.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    /// Sorted ascending.
    pub train: Vec<usize>,
    /// Sorted ascending.
    pub test: Vec<usize>,
    /// `folds[i]` is the fold of `train[i]`.
    pub folds: Vec<usize>,
}

impl SplitPlan {
    /// `(fit, validate)` index lists for cross-validation round `k`.
    pub fn fold(&self, k: usize) -> (Vec<usize>, Vec<usize>) {
        let mut fit = Vec::new();
        let mut val = Vec::new();
        for (&i, &f) in self.train.iter().zip(&self.folds) {
            if f == k {
                val.push(i);
            } else {
                fit.push(i);
            }
        }
        (fit, val)
    }
}

/// Per-class proportional split. Each class contributes
/// `max(1, round(n_c · test_frac))` test samples; the rest are dealt into
/// folds round-robin so per-class fold counts differ by at most one.
pub fn stratified_split(labels: &[usize], test_frac: f64, seed: u64) -> Result<SplitPlan> {
    if !(0.0..1.0).contains(&test_frac) {
        return Err(Error::Config(format!("test fraction {test_frac} outside [0, 1)")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, &y) in labels.iter().enumerate() {
        if y >= NUM_CLASSES {
            return Err(Error::Data(format!("label {y} at index {i} out of range")));
        }
        by_class[y].push(i);
    }
    if let Some(c) = by_class.iter().position(|v| v.is_empty()) {
        return Err(Error::Data(format!("class {c} has no samples")));
    }
    let mut rng = child_rng(seed, "split");
    let mut test = Vec::new();
    let mut assigned: Vec<(usize, usize)> = Vec::new();
    let mut next_fold = 0;
    for members in by_class.iter_mut() {
        members.shuffle(&mut rng);
        let n = members.len();
        let k = ((n as f64 * test_frac).round() as usize)
            .max(1)
            .min(n.saturating_sub(1));
        test.extend_from_slice(&members[..k]);
        for &i in &members[k..] {
            assigned.push((i, next_fold));
            next_fold = (next_fold + 1) % NUM_FOLDS;
        }
    }
    test.sort_unstable();
    assigned.sort_unstable();
    Ok(SplitPlan {
        seed,
        train: assigned.iter().map(|&(i, _)| i).collect(),
        test,
        folds: assigned.iter().map(|&(_, f)| f).collect(),
    })
}
