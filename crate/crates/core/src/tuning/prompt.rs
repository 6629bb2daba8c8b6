use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{domain, shape, Result, SctError};
use crate::numerics::{Scalar, SeededRng, Vector};

/// The `N` learnable context vectors ω, the only trainable parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct PromptContext<T> {
    vectors: Vec<Vector<T>>,
}

impl<T: Scalar> PromptContext<T> {
    pub fn new(vectors: Vec<Vector<T>>) -> Result<Self> {
        if vectors.is_empty() {
            return Err(domain("prompt context needs at least one token"));
        }
        let d = vectors[0].dim();
        if let Some(bad) = vectors.iter().find(|v| v.dim() != d) {
            return Err(shape("PromptContext", d, bad.dim()));
        }
        if !vectors.iter().all(Vector::is_finite) {
            return Err(SctError::Numeric {
                stage: "prompt context".into(),
            });
        }
        Ok(Self { vectors })
    }

    /// Gaussian initialization with standard deviation `std`.
    pub fn random(n_tokens: usize, dim: usize, std: f64, rng: &mut SeededRng) -> Result<Self> {
        if dim == 0 {
            return Err(domain("prompt dimension must be positive"));
        }
        let vectors = (0..n_tokens)
            .map(|_| Vector::new(rng.gaussian_vec(dim, std)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(vectors)
    }

    pub fn zeros(n_tokens: usize, dim: usize) -> Result<Self> {
        Self::new(vec![Vector::zeros(dim); n_tokens])
    }

    #[inline]
    pub fn n_tokens(&self) -> usize {
        self.vectors.len()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.vectors[0].dim()
    }

    pub fn vectors(&self) -> &[Vector<T>] {
        &self.vectors
    }

    /// Concatenation of all tokens, token-major.
    pub fn to_flat(&self) -> Vec<T> {
        self.vectors.iter().flat_map(|v| v.iter().copied()).collect()
    }

    pub fn from_flat(flat: &[T], n_tokens: usize, dim: usize) -> Result<Self> {
        if flat.len() != n_tokens * dim || dim == 0 {
            return Err(shape("PromptContext::from_flat", n_tokens * dim, flat.len()));
        }
        Self::new(
            flat.chunks(dim)
                .map(|c| Vector::new(c.to_vec()))
                .collect::<Result<Vec<_>>>()?,
        )
    }

    /// `ω ← ω − η · grad`, with `grad` shaped like `self`.
    pub fn sgd_step(&mut self, grad: &[Vector<T>], lr: T) -> Result<()> {
        if grad.len() != self.vectors.len() {
            return Err(shape("sgd_step", self.vectors.len(), grad.len()));
        }
        for (w, g) in self.vectors.iter_mut().zip(grad) {
            for (x, &d) in w.as_mut_slice().iter_mut().zip(g.iter()) {
                *x -= lr * d;
            }
        }
        if !self.vectors.iter().all(Vector::is_finite) {
            return Err(SctError::Numeric {
                stage: "prompt after SGD step".into(),
            });
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> PromptContext<U> {
        PromptContext {
            vectors: self.vectors.iter().map(Vector::cast).collect(),
        }
    }
}

/// Serialized result of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainedPrompt {
    pub n_tokens: usize,
    pub dim: usize,
    pub vectors: Vec<Vec<f64>>,
    pub train_config: TrainConfig,
    pub method: super::LossKind,
    pub seed: u64,
    pub loss_trace: Vec<f64>,
}

impl TrainedPrompt {
    pub fn from_context<T: Scalar>(
        omega: &PromptContext<T>,
        cfg: &TrainConfig,
        method: super::LossKind,
        loss_trace: Vec<f64>,
    ) -> Self {
        Self {
            n_tokens: omega.n_tokens(),
            dim: omega.dim(),
            vectors: omega
                .vectors()
                .iter()
                .map(|v| v.iter().map(|x| x.as_f64()).collect())
                .collect(),
            train_config: cfg.clone(),
            method,
            seed: cfg.seed,
            loss_trace,
        }
    }

    pub fn context<T: Scalar>(&self) -> Result<PromptContext<T>> {
        if self.vectors.len() != self.n_tokens {
            return Err(shape("TrainedPrompt tokens", self.n_tokens, self.vectors.len()));
        }
        if let Some(bad) = self.vectors.iter().find(|v| v.len() != self.dim) {
            return Err(shape("TrainedPrompt dim", self.dim, bad.len()));
        }
        PromptContext::new(
            self.vectors
                .iter()
                .map(|v| Vector::new(v.iter().map(|&x| T::lit(x)).collect()))
                .collect::<Result<Vec<_>>>()?,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| SctError::Format(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| SctError::Format(e.to_string()))
    }
}
