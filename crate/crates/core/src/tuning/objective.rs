use serde::{Deserialize, Serialize};

use super::modulation::{modulation, modulation_derivative, ModulationKind};
use super::{LossKind, PromptContext, TrainConfig};
use crate::encoders::{Encoders, FeatureMap, TextForward};
use crate::error::{domain, shape, Result, SctError};
use crate::extraction::select;
use crate::numerics::{
    clamped_ln, cosine_sim, dot, log_sum_exp, normalize, softmax, softmax_backward, ProbVector,
    Scalar, Vector,
};

/// Penalty applied to surrogate-OOD regions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegularizerKind {
    /// `Σ p log p`; minimizing pushes regions toward the uniform prediction.
    NegEntropy,
    /// Cross-entropy to the uniform distribution, `−(1/M) Σ log p`.
    UniformCe,
    /// Squared hinge `max(0, m_out − E)²` on the region energy
    /// `E = −log Σ exp(z)`. `m_in` only constrains the pair (`m_in < m_out`);
    /// ID regions are not part of this term.
    Energy { m_in: f64, m_out: f64 },
}

impl RegularizerKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RegularizerKind::Energy { m_in, m_out } if !(m_in < m_out) => Err(domain(format!(
                "energy regularizer requires m_in < m_out, got {m_in} >= {m_out}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            RegularizerKind::NegEntropy => "neg_entropy",
            RegularizerKind::UniformCe => "uniform_ce",
            RegularizerKind::Energy { .. } => "energy",
        }
    }
}

/// Features of one training image with its ground-truth class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct LabeledFeatures<T> {
    pub features: FeatureMap<T>,
    pub label: usize,
}

/// `softmax_m(sim(f, g_m) / τ)`.
pub fn class_probs<T: Scalar>(
    fm_global: &[T],
    text_feats: &[Vector<T>],
    tau: T,
) -> Result<ProbVector<T>> {
    if text_feats.is_empty() {
        return Err(domain("class_probs needs at least one text feature"));
    }
    let sims = text_feats
        .iter()
        .map(|g| cosine_sim(fm_global, g.as_slice()))
        .collect::<Result<Vec<T>>>()?;
    softmax(&sims, tau)
}

/// `−log max(p_y, 1e-12)`.
pub fn ce_loss<T: Scalar>(p: &ProbVector<T>, y: usize) -> Result<T> {
    if y >= p.len() {
        return Err(domain(format!("label {y} out of range for {} classes", p.len())));
    }
    Ok(-clamped_ln(p.get(y)).0)
}

fn region_term<T: Scalar>(probs: &[T], kind: RegularizerKind) -> T {
    let m = T::lit(probs.len() as f64);
    match kind {
        RegularizerKind::NegEntropy => probs.iter().map(|&p| p * clamped_ln(p).0).sum(),
        RegularizerKind::UniformCe => -probs.iter().map(|&p| clamped_ln(p).0).sum::<T>() / m,
        RegularizerKind::Energy { .. } => unreachable!("energy needs logits"),
    }
}

fn energy_hinge<T: Scalar>(logits: &[T], m_out: f64) -> Result<T> {
    let energy = -log_sum_exp(logits, T::one())?;
    Ok((T::lit(m_out) - energy).max(T::zero()))
}

/// Mean regularizer over regions given their probability vectors.
///
/// The energy variant needs logits; use [`ood_reg_logits`] for it.
pub fn ood_reg<T: Scalar>(region_probs: &[ProbVector<T>], kind: RegularizerKind) -> Result<T> {
    if region_probs.is_empty() {
        return Err(domain("ood_reg over an empty region set"));
    }
    if let RegularizerKind::Energy { .. } = kind {
        return Err(domain("energy regularizer is defined on logits; use ood_reg_logits"));
    }
    let n = T::lit(region_probs.len() as f64);
    Ok(region_probs
        .iter()
        .map(|p| region_term(p.as_slice(), kind))
        .sum::<T>()
        / n)
}

/// Mean regularizer over regions given their (temperature-scaled) logits.
pub fn ood_reg_logits<T: Scalar>(region_logits: &[Vec<T>], kind: RegularizerKind) -> Result<T> {
    if region_logits.is_empty() {
        return Err(domain("ood_reg over an empty region set"));
    }
    let n = T::lit(region_logits.len() as f64);
    let mut total = T::zero();
    for z in region_logits {
        total += match kind {
            RegularizerKind::Energy { m_out, .. } => {
                let h = energy_hinge(z, m_out)?;
                h * h
            }
            _ => region_term(softmax(z, T::one())?.as_slice(), kind),
        };
    }
    Ok(total / n)
}

/// Value and gradient of the regularizer for one region w.r.t. its logits.
fn region_term_with_grad<T: Scalar>(
    logits: &[T],
    probs: &[T],
    kind: RegularizerKind,
) -> Result<(T, Vec<T>)> {
    match kind {
        RegularizerKind::Energy { m_out, .. } => {
            let h = energy_hinge(logits, m_out)?;
            let two_h = h + h;
            Ok((h * h, probs.iter().map(|&p| two_h * p).collect()))
        }
        RegularizerKind::NegEntropy => {
            let grad_p: Vec<T> = probs
                .iter()
                .map(|&p| {
                    let (l, clamped) = clamped_ln(p);
                    if clamped {
                        l
                    } else {
                        l + T::one()
                    }
                })
                .collect();
            Ok((region_term(probs, kind), softmax_backward(probs, &grad_p)))
        }
        RegularizerKind::UniformCe => {
            let inv_m = T::one() / T::lit(probs.len() as f64);
            let grad_p: Vec<T> = probs
                .iter()
                .map(|&p| {
                    if clamped_ln(p).1 {
                        T::zero()
                    } else {
                        -inv_m / p
                    }
                })
                .collect();
            Ok((region_term(probs, kind), softmax_backward(probs, &grad_p)))
        }
    }
}

/// Result of evaluating an objective on one mini-batch.
#[derive(Debug, Clone)]
pub struct BatchEval<T> {
    /// Batch-mean loss.
    pub loss: T,
    /// Gradient w.r.t. every context vector, shaped like the prompt.
    pub grad: Option<Vec<Vector<T>>>,
    /// Surrogate-OOD regions used for each example.
    pub selections: Vec<Vec<usize>>,
    /// `p(y|x)` of each example under the global feature.
    pub label_probs: Vec<T>,
}

fn logits_of<T: Scalar>(feature: &[T], text: &[TextForward<T>], tau: T) -> Result<(Vec<T>, Vec<T>)> {
    let (f, _) = normalize(feature)?;
    let z = text.iter().map(|g| dot(&f, &g.unit) / tau).collect();
    Ok((f, z))
}

fn finite_or<T: Scalar>(v: T, stage: &str) -> Result<T> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(SctError::Numeric {
            stage: stage.to_string(),
        })
    }
}

/// Evaluates the `kind` objective on `batch` and optionally its gradient.
///
/// Per example the loss is `CE·φ(p_y) + λ·R·ψ(p_y)` where `R` is the mean
/// regularizer over the extracted regions (zero when none are extracted);
/// the batch loss is the mean over examples. Surrogate regions are selected
/// with the current prompt unless `fixed_selection` supplies them; the
/// selection itself is not differentiated.
pub fn objective<T: Scalar>(
    batch: &[&LabeledFeatures<T>],
    omega: &PromptContext<T>,
    enc: &Encoders<T>,
    cfg: &TrainConfig,
    kind: LossKind,
    fixed_selection: Option<&[Vec<usize>]>,
    with_grad: bool,
) -> Result<BatchEval<T>> {
    if batch.is_empty() {
        return Err(domain("objective evaluated on an empty batch"));
    }
    if let Some(sel) = fixed_selection {
        if sel.len() != batch.len() {
            return Err(shape("fixed_selection", batch.len(), sel.len()));
        }
    }
    let (lambda, modulation_kind) = cfg.effective(kind);
    let lambda = T::lit(lambda);
    let tau = T::lit(cfg.tau_train);
    let detach = cfg.detach_modulation;

    let text = enc
        .vocab
        .embeddings()
        .iter()
        .map(|c| enc.text.forward(omega, c.as_slice()))
        .collect::<Result<Vec<_>>>()?;
    let n_classes = text.len();
    let feat_dim = enc.text.feature_dim();
    let inv_batch = T::one() / T::lit(batch.len() as f64);

    let mut grad_text = vec![vec![T::zero(); feat_dim]; if with_grad { n_classes } else { 0 }];
    let mut total = T::zero();
    let mut selections = Vec::with_capacity(batch.len());
    let mut label_probs = Vec::with_capacity(batch.len());

    for (b, ex) in batch.iter().enumerate() {
        let y = ex.label;
        if y >= n_classes {
            return Err(domain(format!("label {y} out of range for {n_classes} classes")));
        }
        let (f, z) = logits_of(ex.features.global.as_slice(), &text, tau)?;
        let p = softmax(&z, T::one())?;
        let py = p.get(y);
        let (ln_py, ce_clamped) = clamped_ln(py);
        let ce = -ln_py;

        let mut region_f = Vec::with_capacity(ex.features.n_regions());
        let mut region_z = Vec::with_capacity(ex.features.n_regions());
        let mut region_p = Vec::with_capacity(ex.features.n_regions());
        for local in &ex.features.locals {
            let (fi, zi) = logits_of(local.as_slice(), &text, tau)?;
            region_p.push(softmax(&zi, T::one())?);
            region_f.push(fi);
            region_z.push(zi);
        }
        let selected = match fixed_selection {
            Some(sel) => {
                if let Some(&bad) = sel[b].iter().find(|&&i| i >= region_p.len()) {
                    return Err(domain(format!("selected region {bad} out of range")));
                }
                sel[b].clone()
            }
            None => select(cfg.extraction, &region_p, y, cfg.rank_k)?.0,
        };

        let mut reg = T::zero();
        let mut reg_grads = Vec::with_capacity(selected.len());
        if lambda != T::zero() && !selected.is_empty() {
            let inv_j = T::one() / T::lit(selected.len() as f64);
            for &i in &selected {
                let (r, dr) = region_term_with_grad(&region_z[i], region_p[i].as_slice(), cfg.regularizer)?;
                reg += r * inv_j;
                reg_grads.push((i, dr));
            }
        }

        let (phi, psi) = modulation(modulation_kind, py)?;
        let reg_weight = lambda * psi;
        let loss_b = ce * phi + if reg_weight != T::zero() { reg_weight * reg } else { T::zero() };
        total += finite_or(loss_b, "per-example loss")?;
        label_probs.push(py);
        selections.push(selected);

        if !with_grad {
            continue;
        }

        // ∂loss_b/∂z for the global logits.
        let mut coef_py = T::zero();
        if !detach && modulation_kind != ModulationKind::None {
            let (dphi, dpsi) = modulation_derivative(modulation_kind, py)?;
            if ce != T::zero() {
                coef_py += ce * dphi;
            }
            if lambda != T::zero() && reg != T::zero() {
                coef_py += lambda * reg * dpsi;
            }
        }
        let coef_py = finite_or(coef_py, "modulation derivative")?;
        for (m, gm) in grad_text.iter_mut().enumerate() {
            let onehot = if m == y { T::one() } else { T::zero() };
            let pm = p.get(m);
            let dce = if ce_clamped { T::zero() } else { pm - onehot };
            let dpy = py * (onehot - pm);
            let dz = phi * dce + coef_py * dpy;
            let w = inv_batch * dz / tau;
            if w != T::zero() {
                for (acc, &fv) in gm.iter_mut().zip(&f) {
                    *acc += w * fv;
                }
            }
        }

        if reg_weight != T::zero() && !reg_grads.is_empty() {
            let scale = inv_batch * reg_weight / T::lit(reg_grads.len() as f64) / tau;
            for (i, dr) in &reg_grads {
                let fi = &region_f[*i];
                for (gm, &drm) in grad_text.iter_mut().zip(dr) {
                    let w = scale * drm;
                    for (acc, &fv) in gm.iter_mut().zip(fi) {
                        *acc += w * fv;
                    }
                }
            }
        }
    }

    let loss = finite_or(total * inv_batch, "batch loss")?;
    let grad = if with_grad {
        let mut token_grad = vec![T::zero(); omega.dim()];
        for (fwd, gm) in text.iter().zip(&grad_text) {
            let g = enc.text.backward(fwd, omega.n_tokens(), gm)?;
            for (acc, v) in token_grad.iter_mut().zip(g) {
                *acc += v;
            }
        }
        if token_grad.iter().any(|v| !v.is_finite()) {
            return Err(SctError::Numeric {
                stage: "prompt gradient".into(),
            });
        }
        Some(vec![Vector::from_vec_unchecked(token_grad); omega.n_tokens()])
    } else {
        None
    };

    Ok(BatchEval {
        loss,
        grad,
        selections,
        label_probs,
    })
}

/// Mean cross-entropy (λ = 0, no modulation).
pub fn loss_coop<T: Scalar>(
    batch: &[&LabeledFeatures<T>],
    omega: &PromptContext<T>,
    enc: &Encoders<T>,
    cfg: &TrainConfig,
) -> Result<T> {
    Ok(objective(batch, omega, enc, cfg, LossKind::Coop, None, false)?.loss)
}

/// Mean of `CE + λ·R` over the batch.
pub fn loss_locoop<T: Scalar>(
    batch: &[&LabeledFeatures<T>],
    omega: &PromptContext<T>,
    enc: &Encoders<T>,
    cfg: &TrainConfig,
) -> Result<T> {
    Ok(objective(batch, omega, enc, cfg, LossKind::Locoop, None, false)?.loss)
}

/// Mean of `CE·φ(p_y) + λ·R·ψ(p_y)` over the batch, with `cfg.modulation`.
pub fn loss_sct<T: Scalar>(
    batch: &[&LabeledFeatures<T>],
    omega: &PromptContext<T>,
    enc: &Encoders<T>,
    cfg: &TrainConfig,
) -> Result<T> {
    Ok(objective(batch, omega, enc, cfg, LossKind::Sct, None, false)?.loss)
}

/// Exact gradient of the `kind` objective w.r.t. every context vector.
pub fn grad_prompt<T: Scalar>(
    kind: LossKind,
    batch: &[&LabeledFeatures<T>],
    omega: &PromptContext<T>,
    enc: &Encoders<T>,
    cfg: &TrainConfig,
) -> Result<Vec<Vector<T>>> {
    objective(batch, omega, enc, cfg, kind, None, true)?
        .grad
        .ok_or_else(|| SctError::Numeric {
            stage: "gradient missing".into(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pv(v: &[f64]) -> ProbVector<f64> {
        ProbVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn class_probs_examples() {
        let e = |v: &[f64]| Vector::new(v.to_vec()).unwrap();
        let same = vec![e(&[0.3, 0.4]); 3];
        let p = class_probs(&[1.0, 2.0], &same, 1.0).unwrap();
        for &v in p.as_slice() {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let text = vec![e(&[1.0, 0.0]), e(&[0.0, 1.0])];
        let p = class_probs(&[1.0, 0.0], &text, 1.0).unwrap();
        assert_abs_diff_eq!(p.get(0), 0.73105858, epsilon = 1e-8);
        let q = class_probs(&[7.5, 0.0], &text, 1.0).unwrap();
        assert_abs_diff_eq!(p.get(0), q.get(0), epsilon = 1e-12);
        assert!(class_probs(&[0.0, 0.0], &text, 1.0).is_err());
    }

    #[test]
    fn ce_examples() {
        assert_eq!(ce_loss(&pv(&[0.0, 1.0]), 1).unwrap(), 0.0);
        assert_abs_diff_eq!(ce_loss(&pv(&[0.25; 4]), 2).unwrap(), 1.38629436, epsilon = 1e-8);
        let tiny = ProbVector::from_vec_unchecked(vec![1e-20, 1.0 - 1e-20]);
        assert_abs_diff_eq!(ce_loss(&tiny, 0).unwrap(), -(1e-12f64).ln(), epsilon = 1e-12);
        assert!(ce_loss(&pv(&[0.5, 0.5]), 2).is_err());
    }

    #[test]
    fn ood_reg_examples() {
        let one_hot = pv(&[1.0, 0.0, 0.0]);
        assert_eq!(ood_reg(&[one_hot], RegularizerKind::NegEntropy).unwrap(), 0.0);
        let uniform = pv(&[0.25; 4]);
        assert_abs_diff_eq!(
            ood_reg(std::slice::from_ref(&uniform), RegularizerKind::NegEntropy).unwrap(),
            -1.38629436,
            epsilon = 1e-8
        );
        assert_abs_diff_eq!(
            ood_reg(&[uniform], RegularizerKind::UniformCe).unwrap(),
            1.38629436,
            epsilon = 1e-8
        );
        assert!(ood_reg::<f64>(&[], RegularizerKind::NegEntropy).is_err());
    }

    #[test]
    fn energy_hinge_is_one_sided() {
        let kind = RegularizerKind::Energy { m_in: -5.0, m_out: -1.0 };
        // E = −log 2 ≈ −0.69 > m_out: no penalty
        assert_eq!(ood_reg_logits(&[vec![0.0, 0.0]], kind).unwrap(), 0.0);
        // E = −(3 + log 2) < m_out: penalty (m_out − E)²
        let v = ood_reg_logits(&[vec![3.0, 3.0]], kind).unwrap();
        assert_abs_diff_eq!(v, (2.0 + 2f64.ln()).powi(2), epsilon = 1e-12);
        assert!(RegularizerKind::Energy { m_in: 0.0, m_out: 0.0 }.validate().is_err());
    }

    #[test]
    fn region_gradients_match_finite_differences() {
        let z = [0.4, -0.3, 1.1, 0.05];
        let kinds = [
            RegularizerKind::NegEntropy,
            RegularizerKind::UniformCe,
            RegularizerKind::Energy { m_in: -4.0, m_out: -1.0 },
        ];
        for kind in kinds {
            let p = softmax(&z, 1.0).unwrap();
            let (_, g) = region_term_with_grad(&z, p.as_slice(), kind).unwrap();
            let num = crate::numerics::finite_diff_grad(
                |x: &[f64]| ood_reg_logits(&[x.to_vec()], kind),
                &z,
                1e-6,
            )
            .unwrap();
            for (a, n) in g.iter().zip(&num) {
                assert!((a - n).abs() < 1e-7, "{kind:?}: {a} vs {n}");
            }
        }
    }
}
