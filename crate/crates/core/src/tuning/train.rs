use super::objective::{objective, LabeledFeatures};
use super::{LossKind, PromptContext, TrainConfig};
use crate::encoders::Encoders;
use crate::error::{domain, Result, SctError};
use crate::numerics::{Scalar, SeededRng};

/// Trained context vectors and the mean mini-batch loss of every epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub prompt: PromptContext<T>,
    pub loss_trace: Vec<f64>,
}

/// Initializes ω from `cfg.seed` and runs [`train_from`].
pub fn train<T: Scalar>(
    dataset: &[LabeledFeatures<T>],
    enc: &Encoders<T>,
    cfg: &TrainConfig,
    kind: LossKind,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let mut init_rng = SeededRng::stream(cfg.seed, 0);
    let omega = PromptContext::random(cfg.n_tokens, enc.dims.embed_dim, cfg.init_std, &mut init_rng)?;
    train_from(dataset, enc, cfg, kind, omega)
}

/// Plain mini-batch SGD from a given initialization.
///
/// Each epoch reshuffles the dataset with a stream derived from `cfg.seed`;
/// every step re-extracts surrogate regions under the current prompt,
/// evaluates the selected objective and applies `ω ← ω − η∇ω`.
pub fn train_from<T: Scalar>(
    dataset: &[LabeledFeatures<T>],
    enc: &Encoders<T>,
    cfg: &TrainConfig,
    kind: LossKind,
    mut omega: PromptContext<T>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let n_classes = enc.vocab.n_classes();
    let mut seen = vec![false; n_classes];
    for ex in dataset {
        if ex.label >= n_classes {
            return Err(domain(format!("label {} out of range for {n_classes} classes", ex.label)));
        }
        seen[ex.label] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(domain(format!("training set has no example of class {missing}")));
    }

    let lr = T::lit(cfg.lr);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut shuffle_rng = SeededRng::stream(cfg.seed, 1);
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut n_steps = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&LabeledFeatures<T>> = chunk.iter().map(|&i| &dataset[i]).collect();
            let eval = objective(&batch, &omega, enc, cfg, kind, None, true).map_err(|e| match e {
                SctError::Numeric { .. } => SctError::Divergence {
                    epoch,
                    step,
                    loss: f64::NAN,
                },
                other => other,
            })?;
            let loss = eval.loss.as_f64();
            if !loss.is_finite() {
                return Err(SctError::Divergence { epoch, step, loss });
            }
            let grad = eval.grad.expect("gradient requested");
            omega.sgd_step(&grad, lr).map_err(|_| SctError::Divergence {
                epoch,
                step,
                loss,
            })?;
            epoch_loss += loss;
            n_steps += 1;
        }
        loss_trace.push(epoch_loss / n_steps as f64);
    }

    Ok(TrainOutcome {
        prompt: omega,
        loss_trace,
    })
}
