//! OOD-detection and calibration metrics.
//!
//! Scores follow the higher-is-ID convention; thresholds decide "ID" when
//! `score ≥ μ`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{domain, shape, Result};
use crate::numerics::Scalar;

/// Detector scores on ID (positive) and OOD (negative) samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct ScoreSample<T> {
    pub id_scores: Vec<T>,
    pub ood_scores: Vec<T>,
}

impl<T: Scalar> ScoreSample<T> {
    pub fn new(id_scores: Vec<T>, ood_scores: Vec<T>) -> Result<Self> {
        let s = Self {
            id_scores,
            ood_scores,
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if self.id_scores.is_empty() || self.ood_scores.is_empty() {
            return Err(domain("score sample needs non-empty ID and OOD score lists"));
        }
        if self.id_scores.iter().chain(&self.ood_scores).any(|s| !s.is_finite()) {
            return Err(domain("scores must be finite"));
        }
        Ok(())
    }
}

fn cmp<T: Scalar>(a: &T, b: &T) -> Ordering {
    a.partial_cmp(b).expect("finite scores")
}

/// Twice the Mann–Whitney U statistic of ID over OOD, computed from midranks.
///
/// Returned doubled so that the value is an exact integer.
fn doubled_u<T: Scalar>(s: &ScoreSample<T>) -> u128 {
    let mut all: Vec<(T, bool)> = s
        .id_scores
        .iter()
        .map(|&v| (v, true))
        .chain(s.ood_scores.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| cmp(&a.0, &b.0));
    // Sum over ID samples of 2 × (1-based midrank).
    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j, midrank (i+1+j)/2
        let doubled_mid = (i + 1 + j) as u128;
        let n_id_in_group = all[i..j].iter().filter(|e| e.1).count() as u128;
        doubled_rank_sum += doubled_mid * n_id_in_group;
        i = j;
    }
    let n_id = s.id_scores.len() as u128;
    doubled_rank_sum - n_id * (n_id + 1)
}

/// Probability that a random ID score exceeds a random OOD score, ties
/// counting one half. `O(n log n)` via ranks.
pub fn auroc<T: Scalar>(s: &ScoreSample<T>) -> Result<f64> {
    s.validate()?;
    let denom = 2 * s.id_scores.len() as u128 * s.ood_scores.len() as u128;
    Ok(doubled_u(s) as f64 / denom as f64)
}

/// Smallest number of ID samples `c` with `c / n ≥ target`.
fn required_hits(n: usize, target: f64) -> usize {
    let mut c = ((target * n as f64).ceil() as usize).min(n);
    while c > 0 && (c - 1) as f64 / n as f64 >= target {
        c -= 1;
    }
    while c < n && (c as f64 / n as f64) < target {
        c += 1;
    }
    c
}

/// The largest threshold `μ*` whose true-positive rate `|{id ≥ μ}|/n_id`
/// reaches `tpr_target`, among all observed scores and `−∞`.
pub fn threshold_at_tpr<T: Scalar>(s: &ScoreSample<T>, tpr_target: f64) -> Result<T> {
    s.validate()?;
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(domain(format!("TPR target must lie in (0, 1], got {tpr_target}")));
    }
    let mut id = s.id_scores.clone();
    id.sort_by(|a, b| cmp(b, a));
    let c = required_hits(id.len(), tpr_target);
    Ok(id[c.max(1) - 1])
}

/// False-positive rate `|{ood ≥ μ*}|/n_ood` at the threshold from
/// [`threshold_at_tpr`]. No interpolation.
pub fn fpr_at_tpr<T: Scalar>(s: &ScoreSample<T>, tpr_target: f64) -> Result<f64> {
    let mu = threshold_at_tpr(s, tpr_target)?;
    let false_pos = s.ood_scores.iter().filter(|&&v| v >= mu).count();
    Ok(false_pos as f64 / s.ood_scores.len() as f64)
}

/// FPR at 95% TPR.
pub fn fpr95<T: Scalar>(s: &ScoreSample<T>) -> Result<f64> {
    fpr_at_tpr(s, 0.95)
}

/// Fraction of positions where `predictions` equals `labels`.
pub fn id_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(shape("id_accuracy", labels.len(), predictions.len()));
    }
    if labels.is_empty() {
        return Err(domain("id_accuracy of an empty sample"));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Confidences, correctness flags and the bin count for ECE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub confidences: Vec<f64>,
    pub correct: Vec<bool>,
    pub n_bins: usize,
}

/// Bin of `conf` among `n_bins` right-inclusive intervals `((b−1)/n, b/n]`;
/// zero goes to the first bin.
fn bin_of(conf: f64, n_bins: usize) -> usize {
    (0..n_bins)
        .find(|&b| conf <= (b + 1) as f64 / n_bins as f64)
        .unwrap_or(n_bins - 1)
}

/// Expected calibration error `Σ_b |B_b|/n · |acc(B_b) − conf(B_b)|`.
pub fn ece(c: &CalibrationSample) -> Result<f64> {
    if c.confidences.len() != c.correct.len() {
        return Err(shape("ece", c.confidences.len(), c.correct.len()));
    }
    if c.confidences.is_empty() {
        return Err(domain("ece of an empty sample"));
    }
    if c.n_bins == 0 {
        return Err(domain("ece needs at least one bin"));
    }
    if c.confidences.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(domain("confidences must lie in [0, 1]"));
    }
    let mut count = vec![0usize; c.n_bins];
    let mut conf_sum = vec![0.0; c.n_bins];
    let mut hit_sum = vec![0usize; c.n_bins];
    for (&p, &ok) in c.confidences.iter().zip(&c.correct) {
        let b = bin_of(p, c.n_bins);
        count[b] += 1;
        conf_sum[b] += p;
        hit_sum[b] += usize::from(ok);
    }
    let n = c.confidences.len() as f64;
    Ok((0..c.n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let k = count[b] as f64;
            (k / n) * (hit_sum[b] as f64 / k - conf_sum[b] / k).abs()
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sample(id: &[f64], ood: &[f64]) -> ScoreSample<f64> {
        ScoreSample::new(id.to_vec(), ood.to_vec()).unwrap()
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&sample(&[3.0, 2.0], &[1.0])).unwrap(), 1.0);
        assert_eq!(auroc(&sample(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0])).unwrap(), 0.5);
        assert_eq!(auroc(&sample(&[2.0, 1.0], &[2.0, 1.0])).unwrap(), 0.5);
        assert!(ScoreSample::new(vec![], vec![1.0]).is_err());
    }

    #[test]
    fn fpr_examples() {
        let s = sample(&[0.9, 0.8, 0.7, 0.6, 0.5], &[0.55, 0.4, 0.3]);
        assert_eq!(threshold_at_tpr(&s, 0.95).unwrap(), 0.5);
        assert_abs_diff_eq!(fpr_at_tpr(&s, 0.95).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
        let disjoint = sample(&[5.0, 6.0, 7.0], &[1.0, 2.0]);
        for t in [0.1, 0.5, 0.95, 1.0] {
            assert_eq!(fpr_at_tpr(&disjoint, t).unwrap(), 0.0);
        }
        assert!(fpr_at_tpr(&s, 0.0).is_err());
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(id_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(id_accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(id_accuracy(&[1, 2, 3, 4], &[1, 2, 3, 0]).unwrap(), 0.75);
        assert!(id_accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn ece_examples() {
        let perfect = CalibrationSample {
            confidences: vec![1.0; 5],
            correct: vec![true; 5],
            n_bins: 15,
        };
        assert_eq!(ece(&perfect).unwrap(), 0.0);
        let one_bin = CalibrationSample {
            confidences: vec![0.9, 0.9],
            correct: vec![true, false],
            n_bins: 1,
        };
        assert_abs_diff_eq!(ece(&one_bin).unwrap(), 0.4, epsilon = 1e-12);
        let two_bins = CalibrationSample {
            confidences: vec![0.2, 0.3, 0.8, 0.9],
            correct: vec![false, true, true, true],
            n_bins: 2,
        };
        assert_abs_diff_eq!(ece(&two_bins).unwrap(), 0.2, epsilon = 1e-12);
    }

    #[test]
    fn bins_are_right_inclusive() {
        assert_eq!(bin_of(0.0, 10), 0);
        assert_eq!(bin_of(0.1, 10), 0);
        assert_eq!(bin_of(0.3, 10), 2);
        assert_eq!(bin_of(0.30001, 10), 3);
        assert_eq!(bin_of(1.0, 10), 9);
    }
}
