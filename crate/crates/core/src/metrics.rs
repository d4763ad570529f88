//! Confusion matrices, one-vs-rest per-class metrics, macro averages, and the
//! two-sample Z-test.
//!
//! Precision, recall and F1 are 0 whenever their denominator is 0.
//! The normal tail is `erfc(|z|/√2)` from `libm` (the musl implementation,
//! within about one ulp).

use serde::{Deserialize, Serialize};

use crate::data::NUM_CLASSES;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// `counts[truth][pred]`.
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Macro-averaged summary of one confusion matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn tally(truths: &[usize], preds: &[usize]) -> Result<ConfusionMatrix> {
    if truths.len() != preds.len() {
        return Err(Error::Data(format!(
            "{} truths vs {} predictions",
            truths.len(),
            preds.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in truths.iter().zip(preds) {
        if t >= NUM_CLASSES || p >= NUM_CLASSES {
            return Err(Error::Data(format!("class pair ({t}, {p}) out of range")));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    /// Micro accuracy, `trace / total` (0 for an empty matrix).
    pub fn accuracy(&self) -> f64 {
        ratio(self.trace(), self.total())
    }

    /// One-vs-rest `(TP, TN, FP, FN)` for class `c`.
    pub fn one_vs_rest(&self, c: usize) -> (u64, u64, u64, u64) {
        let tp = self.counts[c][c];
        let fp: u64 = (0..NUM_CLASSES).filter(|&t| t != c).map(|t| self.counts[t][c]).sum();
        let fn_: u64 = (0..NUM_CLASSES).filter(|&p| p != c).map(|p| self.counts[c][p]).sum();
        let tn = self.total() - tp - fp - fn_;
        (tp, tn, fp, fn_)
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for t in 0..NUM_CLASSES {
            for p in 0..NUM_CLASSES {
                self.counts[t][p] += other.counts[t][p];
            }
        }
    }

    pub fn summary(&self) -> Summary {
        let per: Vec<ClassMetrics> = (0..NUM_CLASSES).map(|c| class_metrics(self, c)).collect();
        let k = NUM_CLASSES as f64;
        Summary {
            accuracy: self.accuracy(),
            precision: per.iter().map(|m| m.precision).sum::<f64>() / k,
            recall: per.iter().map(|m| m.recall).sum::<f64>() / k,
            f1: per.iter().map(|m| m.f1).sum::<f64>() / k,
        }
    }
}

pub fn class_metrics(cm: &ConfusionMatrix, c: usize) -> ClassMetrics {
    let (tp, tn, fp, fn_) = cm.one_vs_rest(c);
    ClassMetrics {
        accuracy: ratio(tp + tn, tp + tn + fp + fn_),
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        f1: ratio(2 * tp, 2 * tp + fp + fn_),
    }
}

pub fn macro_f1(cm: &ConfusionMatrix) -> f64 {
    (0..NUM_CLASSES).map(|c| class_metrics(cm, c).f1).sum::<f64>() / NUM_CLASSES as f64
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (`n − 1` denominator).
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        0.0
    } else {
        sample_variance(xs).sqrt()
    }
}

/// Two-sided standard normal tail probability `P(|Z| ≥ |z|)`.
pub fn normal_two_sided_p(z: f64) -> f64 {
    libm::erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Returns `(z, p)`. Identical inputs give `(0, 1)` even when both are
/// constant.
pub fn two_sample_z(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Degenerate(format!(
            "two-sample Z-test needs at least 2 scores per side, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let diff = mean(a) - mean(b);
    let se2 = sample_variance(a) / a.len() as f64 + sample_variance(b) / b.len() as f64;
    if se2 == 0.0 {
        if a == b {
            return Ok((0.0, 1.0));
        }
        return Err(Error::Degenerate("zero pooled variance".into()));
    }
    let z = diff / se2.sqrt();
    Ok((z, normal_two_sided_p(z)))
}

/// Quantile with linear interpolation between order statistics
/// (`h = (n − 1)·q`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_tally() {
        let cm = tally(&[0, 0, 1], &[0, 1, 1]).unwrap();
        assert_eq!(cm.counts, [[1, 1, 0], [0, 1, 0], [0, 0, 0]]);
        assert_eq!(tally(&[], &[]).unwrap(), ConfusionMatrix::default());
        assert!(tally(&[0], &[]).is_err());
        assert!(tally(&[3], &[0]).is_err());
    }

    #[test]
    fn all_class_zero_predictions() {
        let cm = tally(&[0, 1, 2], &[0, 0, 0]).unwrap();
        let m0 = class_metrics(&cm, 0);
        assert!((m0.precision - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m0.recall, 1.0);
        assert_eq!(m0.f1, 0.5);
        assert!((macro_f1(&cm) - 0.1667).abs() < 1e-4);
    }

    #[test]
    fn absent_class_policy() {
        let cm = tally(&[0, 1], &[0, 1]).unwrap();
        let m2 = class_metrics(&cm, 2);
        assert_eq!((m2.precision, m2.recall, m2.f1, m2.accuracy), (0.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn z_identical_and_antisymmetric() {
        let a = [0.2, 0.4, 0.5];
        assert_eq!(two_sample_z(&a, &a).unwrap(), (0.0, 1.0));
        let b = [0.1, 0.3, 0.2, 0.25];
        let (z1, p1) = two_sample_z(&a, &b).unwrap();
        let (z2, p2) = two_sample_z(&b, &a).unwrap();
        assert_eq!(z1, -z2);
        assert_eq!(p1, p2);
        assert!(matches!(
            two_sample_z(&[1.0, 1.0], &[2.0, 2.0]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn linear_quantiles() {
        let xs: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        assert!((quantile_sorted(&xs, 0.25) - 0.325).abs() < 1e-12);
        assert!((quantile_sorted(&xs, 0.5) - 0.55).abs() < 1e-12);
        assert!((quantile_sorted(&xs, 0.75) - 0.775).abs() < 1e-12);
    }
}
