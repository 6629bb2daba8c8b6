//! Surrogate-OOD region mining from local feature maps.
//!
//! Every region of the `H×W` map is classified against the ID text
//! features; regions whose prediction does not support the ground-truth
//! label are treated as ID-irrelevant context.

use serde::{Deserialize, Serialize};

use crate::encoders::FeatureMap;
use crate::error::{domain, Result};
use crate::numerics::{ProbVector, Scalar, Vector};
use crate::tuning::class_probs;

/// Criterion used to select surrogate-OOD regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractionMethod {
    /// Ground-truth rank exceeds K.
    Rank,
    /// Ground-truth probability below 1/M.
    Prob,
    /// Prediction entropy below half its maximum, (log M)/2.
    Entropy,
}

impl ExtractionMethod {
    pub fn name(self) -> &'static str {
        match self {
            ExtractionMethod::Rank => "rank",
            ExtractionMethod::Prob => "prob",
            ExtractionMethod::Entropy => "entropy",
        }
    }
}

/// Concrete rule applied, including the rank parameter when relevant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum SelectionRule {
    Rank { k: usize },
    Prob,
    Entropy,
}

/// Selected region indices plus the per-region predictions they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSelection<T> {
    pub indices: Vec<usize>,
    pub rule: SelectionRule,
    pub per_region_probs: Vec<ProbVector<T>>,
}

impl<T: Scalar> RegionSelection<T> {
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// `class_probs` of every local feature.
pub fn region_probs<T: Scalar>(
    fm: &FeatureMap<T>,
    text_feats: &[Vector<T>],
    tau: T,
) -> Result<Vec<ProbVector<T>>> {
    fm.locals
        .iter()
        .map(|f| class_probs(f.as_slice(), text_feats, tau))
        .collect()
}

/// 1-based rank of label `y`: one plus the number of classes with higher
/// probability, where equal-probability classes with a lower index also
/// rank ahead of `y`.
pub fn rank_of_label<T: Scalar>(p: &ProbVector<T>, y: usize) -> Result<usize> {
    if y >= p.len() {
        return Err(domain(format!("label {y} out of range for {} classes", p.len())));
    }
    let py = p.get(y);
    let ahead = p
        .as_slice()
        .iter()
        .enumerate()
        .filter(|&(m, &pm)| pm > py || (pm == py && m < y))
        .count();
    Ok(1 + ahead)
}

/// Regions `{i : rank(p⁽ⁱ⁾(y)) > k}`.
pub fn select_rank<T: Scalar>(probs: &[ProbVector<T>], y: usize, k: usize) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (i, p) in probs.iter().enumerate() {
        if rank_of_label(p, y)? > k {
            out.push(i);
        }
    }
    Ok(out)
}

/// Regions `{i : p⁽ⁱ⁾(y) < 1/M}`.
pub fn select_prob<T: Scalar>(probs: &[ProbVector<T>], y: usize) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (i, p) in probs.iter().enumerate() {
        if y >= p.len() {
            return Err(domain(format!("label {y} out of range for {} classes", p.len())));
        }
        let threshold = T::one() / T::lit(p.len() as f64);
        if p.get(y) < threshold {
            out.push(i);
        }
    }
    Ok(out)
}

/// Regions `{i : H(p⁽ⁱ⁾) < (log M)/2}`.
pub fn select_entropy<T: Scalar>(probs: &[ProbVector<T>]) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (i, p) in probs.iter().enumerate() {
        if p.len() < 2 {
            return Err(domain("entropy extraction needs at least two classes"));
        }
        let threshold = T::lit(p.len() as f64).ln() / T::lit(2.0);
        if p.entropy() < threshold {
            out.push(i);
        }
    }
    Ok(out)
}

/// Applies `method` to precomputed region predictions.
pub fn select<T: Scalar>(
    method: ExtractionMethod,
    probs: &[ProbVector<T>],
    y: usize,
    k: usize,
) -> Result<(Vec<usize>, SelectionRule)> {
    Ok(match method {
        ExtractionMethod::Rank => (select_rank(probs, y, k)?, SelectionRule::Rank { k }),
        ExtractionMethod::Prob => (select_prob(probs, y)?, SelectionRule::Prob),
        ExtractionMethod::Entropy => (select_entropy(probs)?, SelectionRule::Entropy),
    })
}

pub fn extract_rank<T: Scalar>(
    fm: &FeatureMap<T>,
    text_feats: &[Vector<T>],
    y: usize,
    k: usize,
    tau: T,
) -> Result<RegionSelection<T>> {
    extract(ExtractionMethod::Rank, fm, text_feats, y, k, tau)
}

pub fn extract_prob<T: Scalar>(
    fm: &FeatureMap<T>,
    text_feats: &[Vector<T>],
    y: usize,
    tau: T,
) -> Result<RegionSelection<T>> {
    extract(ExtractionMethod::Prob, fm, text_feats, y, 0, tau)
}

pub fn extract_entropy<T: Scalar>(
    fm: &FeatureMap<T>,
    text_feats: &[Vector<T>],
    tau: T,
) -> Result<RegionSelection<T>> {
    extract(ExtractionMethod::Entropy, fm, text_feats, 0, 0, tau)
}

/// Computes region predictions and applies `method`. `y` is ignored by the
/// entropy criterion and `k` by everything but the rank criterion.
pub fn extract<T: Scalar>(
    method: ExtractionMethod,
    fm: &FeatureMap<T>,
    text_feats: &[Vector<T>],
    y: usize,
    k: usize,
    tau: T,
) -> Result<RegionSelection<T>> {
    let per_region_probs = region_probs(fm, text_feats, tau)?;
    let (indices, rule) = select(method, &per_region_probs, y, k)?;
    Ok(RegionSelection {
        indices,
        rule,
        per_region_probs,
    })
}
