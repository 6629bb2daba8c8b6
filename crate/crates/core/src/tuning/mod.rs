//! Prompt-tuning objectives (CoOp, LoCoOp, self-calibrated), their exact
//! gradients with respect to the context vectors, and the SGD loop.

mod modulation;
mod objective;
mod prompt;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::extraction::ExtractionMethod;

pub use crate::numerics::ProbVector;
pub use modulation::{modulation, modulation_derivative, ModulationKind};
pub use objective::{
    ce_loss, class_probs, grad_prompt, loss_coop, loss_locoop, loss_sct, objective, ood_reg,
    ood_reg_logits, BatchEval, LabeledFeatures, RegularizerKind,
};
pub use prompt::{PromptContext, TrainedPrompt};
pub use train::{train, train_from, TrainOutcome};

/// Which training objective to optimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Cross-entropy only.
    Coop,
    /// Cross-entropy plus an unmodulated OOD regularizer on extracted regions.
    Locoop,
    /// Cross-entropy and regularizer each scaled by a confidence-dependent factor.
    Sct,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Coop, LossKind::Locoop, LossKind::Sct];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Coop => "coop",
            LossKind::Locoop => "locoop",
            LossKind::Sct => "sct",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = crate::error::SctError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "coop" => Ok(LossKind::Coop),
            "locoop" => Ok(LossKind::Locoop),
            "sct" => Ok(LossKind::Sct),
            other => Err(domain(format!("unknown method `{other}` (expected coop, locoop or sct)"))),
        }
    }
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight λ of the OOD regularizer.
    pub lambda: f64,
    /// Extraction rank K: a region is surrogate OOD when the label ranks below the top K.
    pub rank_k: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Softmax temperature used for both global and per-region probabilities.
    pub tau_train: f64,
    /// Number of learnable context tokens N.
    pub n_tokens: usize,
    /// Standard deviation of the Gaussian context initialization.
    pub init_std: f64,
    pub modulation: ModulationKind,
    pub regularizer: RegularizerKind,
    pub extraction: ExtractionMethod,
    /// Treat φ(p) and ψ(p) as constants when differentiating.
    pub detach_modulation: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.2,
            rank_k: 19,
            lr: 0.002,
            epochs: 25,
            batch_size: 32,
            tau_train: 1.0,
            n_tokens: 16,
            init_std: 0.02,
            modulation: ModulationKind::Linear,
            regularizer: RegularizerKind::NegEntropy,
            extraction: ExtractionMethod::Rank,
            detach_modulation: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Default extraction rank for `n_classes` classes: `min(200, M − 1)`.
    pub fn default_rank_k(n_classes: usize) -> usize {
        200.min(n_classes.saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(domain(format!("train.{name} must be positive and finite, got {v}")))
            }
        };
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(domain(format!("train.lambda must be non-negative, got {}", self.lambda)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(domain(format!("train.lr must be non-negative, got {}", self.lr)));
        }
        positive("tau_train", self.tau_train)?;
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(domain("train.init_std must be non-negative"));
        }
        for (name, v) in [
            ("rank_k", self.rank_k),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("n_tokens", self.n_tokens),
        ] {
            if v == 0 {
                return Err(domain(format!("train.{name} must be a positive integer")));
            }
        }
        self.modulation.validate()?;
        self.regularizer.validate()?;
        Ok(())
    }

    /// The (λ, modulation) pair actually optimized under `kind`.
    pub fn effective(&self, kind: LossKind) -> (f64, ModulationKind) {
        match kind {
            LossKind::Coop => (0.0, ModulationKind::None),
            LossKind::Locoop => (self.lambda, ModulationKind::None),
            LossKind::Sct => (self.lambda, self.modulation),
        }
    }
}
