use serde::{Deserialize, Serialize};

use super::linalg::{dot, norm};
use super::scalar::clamped_ln;
use super::Scalar;
use crate::error::{domain, shape, Result};

/// A probability distribution over the ID classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct ProbVector<T> {
    probs: Vec<T>,
}

impl<T: Scalar> ProbVector<T> {
    /// Wraps `probs`, checking entries lie in `[0, 1]` and sum to one within `1e-9`.
    pub fn new(probs: Vec<T>) -> Result<Self> {
        if probs.is_empty() {
            return Err(domain("probability vector must be non-empty"));
        }
        if probs
            .iter()
            .any(|&p| !p.is_finite() || p < T::zero() || p > T::one())
        {
            return Err(domain("probabilities must lie in [0, 1]"));
        }
        let total: T = probs.iter().copied().sum();
        if (total - T::one()).abs() > T::lit(1e-9).max(T::epsilon() * T::lit(64.0)) {
            return Err(domain(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    pub(crate) fn from_vec_unchecked(probs: Vec<T>) -> Self {
        Self { probs }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.probs
    }

    #[inline]
    pub fn get(&self, m: usize) -> T {
        self.probs[m]
    }

    /// Largest probability and its class index (lowest index on ties).
    pub fn max(&self) -> (usize, T) {
        let mut best = (0, self.probs[0]);
        for (m, &p) in self.probs.iter().enumerate().skip(1) {
            if p > best.1 {
                best = (m, p);
            }
        }
        best
    }

    /// Shannon entropy `−Σ p log max(p, 1e-12)`.
    pub fn entropy(&self) -> T {
        -self
            .probs
            .iter()
            .map(|&p| p * clamped_ln(p).0)
            .sum::<T>()
    }
}

/// Cosine similarity `u·v / (‖u‖‖v‖)`.
pub fn cosine_sim<T: Scalar>(u: &[T], v: &[T]) -> Result<T> {
    if u.len() != v.len() {
        return Err(shape("cosine_sim", u.len(), v.len()));
    }
    let nu = norm(u);
    if !(nu > T::zero()) {
        return Err(domain("cosine_sim: argument `u` has zero norm"));
    }
    let nv = norm(v);
    if !(nv > T::zero()) {
        return Err(domain("cosine_sim: argument `v` has zero norm"));
    }
    let c = dot(u, v) / (nu * nv);
    Ok(c.max(-T::one()).min(T::one()))
}

fn check_tau<T: Scalar>(tau: T) -> Result<()> {
    if !(tau > T::zero()) || !tau.is_finite() {
        return Err(domain(format!("temperature must be positive and finite, got {tau}")));
    }
    Ok(())
}

fn max_of<T: Scalar>(z: &[T]) -> T {
    z.iter().copied().fold(T::neg_infinity(), T::max)
}

/// Temperature softmax `exp(zᵢ/τ) / Σ exp(zⱼ/τ)`, computed with a max shift.
pub fn softmax<T: Scalar>(logits: &[T], tau: T) -> Result<ProbVector<T>> {
    check_tau(tau)?;
    if logits.is_empty() {
        return Err(domain("softmax of an empty logit vector"));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(domain("softmax logits must be finite"));
    }
    let zmax = max_of(logits);
    let mut exps: Vec<T> = logits.iter().map(|&z| ((z - zmax) / tau).exp()).collect();
    let total: T = exps.iter().copied().sum();
    for e in &mut exps {
        *e /= total;
    }
    Ok(ProbVector::from_vec_unchecked(exps))
}

/// `τ · log Σ exp(zᵢ/τ)`, computed as `max z + τ · log Σ exp((zᵢ − max z)/τ)`.
pub fn log_sum_exp<T: Scalar>(logits: &[T], tau: T) -> Result<T> {
    check_tau(tau)?;
    if logits.is_empty() {
        return Err(domain("log_sum_exp of an empty logit vector"));
    }
    let zmax = max_of(logits);
    let s: T = logits.iter().map(|&z| ((z - zmax) / tau).exp()).sum();
    Ok(zmax + tau * s.ln())
}

/// Pulls a gradient w.r.t. softmax probabilities back to the (pre-temperature) logits
/// of a unit-temperature softmax: `∂/∂z_k = p_k (g_k − Σ_m p_m g_m)`.
pub fn softmax_backward<T: Scalar>(probs: &[T], grad_probs: &[T]) -> Vec<T> {
    let inner = dot(probs, grad_probs);
    probs
        .iter()
        .zip(grad_probs)
        .map(|(&p, &g)| p * (g - inner))
        .collect()
}
