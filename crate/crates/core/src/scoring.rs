//! Post-hoc OOD detectors.
//!
//! Every detector returns a score where higher means more ID-like, so the
//! metrics code never branches on the detector. Where a detector is usually
//! written as an anomaly score (energy, max-logit) the sign is flipped here.

use serde::{Deserialize, Serialize};

use crate::encoders::{FeatureMap, ToyImageEncoder};
use crate::error::{domain, Result, SctError};
use crate::numerics::{cosine_sim, log_sum_exp, normalize, softmax, Scalar, Vector};

/// A detector together with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DetectorConfig {
    /// Maximum softmax probability of the global logits.
    Msp,
    /// Temperature-scaled MSP after an input perturbation of size `epsilon`.
    Odin { temperature: f64, epsilon: f64 },
    /// `T · log Σ exp(z/T)` (negated free energy).
    Energy { temperature: f64 },
    /// Energy of the logits after clipping the global feature at a
    /// percentile of ID calibration activations.
    React { percentile: f64 },
    /// Largest logit.
    Maxlogit,
    /// Maximum concept matching: MSP of `sim/τ`.
    Mcm { tau: f64 },
    /// Global MCM plus the best per-region MCM.
    Glmcm { tau: f64 },
}

impl DetectorConfig {
    pub fn label(&self) -> &'static str {
        match self {
            DetectorConfig::Msp => "msp",
            DetectorConfig::Odin { .. } => "odin",
            DetectorConfig::Energy { .. } => "energy",
            DetectorConfig::React { .. } => "react",
            DetectorConfig::Maxlogit => "maxlogit",
            DetectorConfig::Mcm { .. } => "mcm",
            DetectorConfig::Glmcm { .. } => "glmcm",
        }
    }

    /// The detector line-up used by default experiment configs.
    pub fn defaults() -> Vec<DetectorConfig> {
        vec![
            DetectorConfig::Msp,
            DetectorConfig::Odin {
                temperature: 1000.0,
                epsilon: 0.0,
            },
            DetectorConfig::Energy { temperature: 1.0 },
            DetectorConfig::React { percentile: 90.0 },
            DetectorConfig::Maxlogit,
            DetectorConfig::Mcm { tau: 1.0 },
            DetectorConfig::Glmcm { tau: 1.0 },
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(domain(format!("detector {}: {name} must be positive, got {v}", self.label())))
            }
        };
        match *self {
            DetectorConfig::Odin {
                temperature,
                epsilon,
            } => {
                pos("temperature", temperature)?;
                if !(epsilon >= 0.0 && epsilon.is_finite()) {
                    return Err(domain("detector odin: epsilon must be non-negative"));
                }
                Ok(())
            }
            DetectorConfig::Energy { temperature } => pos("temperature", temperature),
            DetectorConfig::React { percentile } => {
                if percentile > 0.0 && percentile <= 100.0 {
                    Ok(())
                } else {
                    Err(domain(format!("detector react: percentile must lie in (0, 100], got {percentile}")))
                }
            }
            DetectorConfig::Mcm { tau } | DetectorConfig::Glmcm { tau } => pos("tau", tau),
            DetectorConfig::Msp | DetectorConfig::Maxlogit => Ok(()),
        }
    }
}

/// Threshold rule: ID iff `score ≥ mu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionRule {
    pub mu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Id,
    Ood,
}

pub fn decide<T: Scalar>(score: T, rule: DecisionRule) -> Decision {
    if score >= T::lit(rule.mu) {
        Decision::Id
    } else {
        Decision::Ood
    }
}

/// `z_m = sim(f, g_m) / τ`.
pub fn logits<T: Scalar>(fm_global: &[T], text_feats: &[Vector<T>], tau: T) -> Result<Vec<T>> {
    if !(tau > T::zero()) {
        return Err(domain("logit temperature must be positive"));
    }
    text_feats
        .iter()
        .map(|g| Ok(cosine_sim(fm_global, g.as_slice())? / tau))
        .collect()
}

fn max_softmax<T: Scalar>(z: &[T], temperature: T) -> Result<T> {
    Ok(softmax(z, temperature)?.max().1)
}

fn max_of<T: Scalar>(z: &[T]) -> T {
    z.iter().copied().fold(T::neg_infinity(), T::max)
}

/// `max_m softmax(z)_m` with unit-temperature logits.
pub fn score_msp<T: Scalar>(fm: &FeatureMap<T>, text_feats: &[Vector<T>]) -> Result<T> {
    max_softmax(&logits(fm.global.as_slice(), text_feats, T::one())?, T::one())
}

/// ODIN. With `epsilon > 0` each input patch is moved by
/// `x̃ = x − ε · sign(−∇ₓ log max softmax(z/T))` and re-encoded before scoring.
pub fn score_odin<T: Scalar>(
    patches: &[Vec<T>],
    text_feats: &[Vector<T>],
    temperature: T,
    epsilon: T,
    encoder: &ToyImageEncoder<T>,
) -> Result<T> {
    let fm = encoder.encode(patches)?;
    let z = logits(fm.global.as_slice(), text_feats, T::one())?;
    if epsilon == T::zero() {
        return max_softmax(&z, temperature);
    }
    let p = softmax(&z, temperature)?;
    let (k, _) = p.max();
    // ∂ log p_k / ∂z_m = (δ_mk − p_m) / T, and ∂z_m/∂f = ĝ_m on the unit sphere.
    let mut grad_f = vec![T::zero(); fm.global.dim()];
    for (m, g) in text_feats.iter().enumerate() {
        let delta = if m == k { T::one() } else { T::zero() };
        let dz = (delta - p.get(m)) / temperature;
        let (gu, _) = normalize(g.as_slice())?;
        for (acc, v) in grad_f.iter_mut().zip(gu) {
            *acc += dz * v;
        }
    }
    let grad_x = encoder.global_backward(patches, &grad_f)?;
    if grad_x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(SctError::Numeric {
            stage: "ODIN input gradient".into(),
        });
    }
    let sign = |v: T| {
        if v > T::zero() {
            T::one()
        } else if v < T::zero() {
            -T::one()
        } else {
            T::zero()
        }
    };
    let perturbed: Vec<Vec<T>> = patches
        .iter()
        .zip(&grad_x)
        .map(|(x, g)| x.iter().zip(g).map(|(&xi, &gi)| xi - epsilon * sign(-gi)).collect())
        .collect();
    let fm2 = encoder.encode(&perturbed)?;
    max_softmax(&logits(fm2.global.as_slice(), text_feats, T::one())?, temperature)
}

/// `T · log Σ exp(z_m / T)`.
pub fn score_energy<T: Scalar>(fm: &FeatureMap<T>, text_feats: &[Vector<T>], temperature: T) -> Result<T> {
    log_sum_exp(&logits(fm.global.as_slice(), text_feats, T::one())?, temperature)
}

/// Linear-interpolated `percentile` of every coordinate of every calibration feature.
pub fn react_threshold<T: Scalar>(calibration: &[Vector<T>], percentile: f64) -> Result<T> {
    if calibration.is_empty() {
        return Err(domain("ReAct needs a non-empty calibration feature set"));
    }
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(domain(format!("percentile must lie in (0, 100], got {percentile}")));
    }
    let mut pooled: Vec<T> = calibration.iter().flat_map(|v| v.iter().copied()).collect();
    pooled.sort_by(|a, b| a.partial_cmp(b).expect("finite activations"));
    let pos = percentile / 100.0 * (pooled.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = T::lit(pos - lo as f64);
    Ok(pooled[lo] + (pooled[hi] - pooled[lo]) * frac)
}

/// Energy score of the global feature after clipping each coordinate at `clip`.
pub fn score_react_clipped<T: Scalar>(fm: &FeatureMap<T>, text_feats: &[Vector<T>], clip: T) -> Result<T> {
    let clipped: Vec<T> = fm.global.iter().map(|&v| v.min(clip)).collect();
    let (unit, _) = normalize(&clipped)?;
    log_sum_exp(&logits(&unit, text_feats, T::one())?, T::one())
}

/// ReAct with the clip value taken from `calibration` at `percentile`.
pub fn score_react<T: Scalar>(
    fm: &FeatureMap<T>,
    text_feats: &[Vector<T>],
    percentile: f64,
    calibration: &[Vector<T>],
) -> Result<T> {
    let clip = react_threshold(calibration, percentile)?;
    score_react_clipped(fm, text_feats, clip)
}

/// `max_m z_m`.
pub fn score_maxlogit<T: Scalar>(fm: &FeatureMap<T>, text_feats: &[Vector<T>]) -> Result<T> {
    Ok(max_of(&logits(fm.global.as_slice(), text_feats, T::one())?))
}

/// `max_m softmax(sim(f, g_m)/τ)`.
pub fn score_mcm<T: Scalar>(fm: &FeatureMap<T>, text_feats: &[Vector<T>], tau: T) -> Result<T> {
    max_softmax(&logits(fm.global.as_slice(), text_feats, T::one())?, tau)
}

/// Global MCM plus `max_{i,m} softmax(sim(f⁽ⁱ⁾, g_m)/τ)`.
pub fn score_glmcm<T: Scalar>(fm: &FeatureMap<T>, text_feats: &[Vector<T>], tau: T) -> Result<T> {
    if fm.locals.is_empty() {
        return Err(domain("GL-MCM needs at least one local region"));
    }
    let global = score_mcm(fm, text_feats, tau)?;
    let mut best_local = T::neg_infinity();
    for local in &fm.locals {
        let s = max_softmax(&logits(local.as_slice(), text_feats, T::one())?, tau)?;
        best_local = best_local.max(s);
    }
    Ok(global + best_local)
}

/// Everything a detector may need for one image.
#[derive(Debug, Clone, Copy)]
pub struct ScoreInput<'a, T> {
    pub features: &'a FeatureMap<T>,
    pub text_feats: &'a [Vector<T>],
    /// Raw patches and encoder; required by ODIN with `epsilon > 0`.
    pub patches: Option<&'a [Vec<T>]>,
    pub encoder: Option<&'a ToyImageEncoder<T>>,
    /// Precomputed ReAct clip value; required by ReAct.
    pub react_clip: Option<T>,
}

/// Dispatches to the detector named by `cfg`.
pub fn score<T: Scalar>(cfg: &DetectorConfig, input: &ScoreInput<'_, T>) -> Result<T> {
    let fm = input.features;
    let text = input.text_feats;
    match *cfg {
        DetectorConfig::Msp => score_msp(fm, text),
        DetectorConfig::Odin {
            temperature,
            epsilon,
        } => {
            if epsilon == 0.0 {
                max_softmax(&logits(fm.global.as_slice(), text, T::one())?, T::lit(temperature))
            } else {
                let (patches, enc) = input
                    .patches
                    .zip(input.encoder)
                    .ok_or_else(|| domain("ODIN with epsilon > 0 needs the raw patches and image encoder"))?;
                score_odin(patches, text, T::lit(temperature), T::lit(epsilon), enc)
            }
        }
        DetectorConfig::Energy { temperature } => score_energy(fm, text, T::lit(temperature)),
        DetectorConfig::React { .. } => {
            let clip = input
                .react_clip
                .ok_or_else(|| domain("ReAct needs a calibrated clip value"))?;
            score_react_clipped(fm, text, clip)
        }
        DetectorConfig::Maxlogit => score_maxlogit(fm, text),
        DetectorConfig::Mcm { tau } => score_mcm(fm, text, T::lit(tau)),
        DetectorConfig::Glmcm { tau } => score_glmcm(fm, text, T::lit(tau)),
    }
}
