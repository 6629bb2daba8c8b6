//! Frozen linear stand-ins for a vision-language backbone.
//!
//! The image encoder projects each latent patch of an `H×W` grid into the
//! joint feature space; the pooled (mean) projection gives the global
//! feature. The text encoder mean-pools the prompt tokens `{ω₁…ω_N, c_m}`
//! and projects the result. All weights are drawn once from a seeded
//! Gaussian and never mutated afterwards.

use serde::{Deserialize, Serialize};

use crate::error::{domain, shape, Result, SctError};
use crate::numerics::{normalize, normalize_backward, Matrix, Scalar, SeededRng, Vector};
use crate::tuning::PromptContext;

/// Dimensions of the toy backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderDims {
    pub latent_dim: usize,
    pub embed_dim: usize,
    pub feature_dim: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub n_classes: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            embed_dim: 16,
            feature_dim: 32,
            grid_h: 4,
            grid_w: 4,
            n_classes: 20,
        }
    }
}

impl EncoderDims {
    pub fn n_regions(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("latent_dim", self.latent_dim),
            ("embed_dim", self.embed_dim),
            ("feature_dim", self.feature_dim),
            ("grid_h", self.grid_h),
            ("grid_w", self.grid_w),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(domain(format!("encoder dimension `{name}` must be positive")));
            }
        }
        if self.n_classes < 2 {
            return Err(domain("at least two ID classes are required"));
        }
        Ok(())
    }
}

/// Frozen patch-grid image encoder. `weight` is `latent_dim × feature_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct ToyImageEncoder<T> {
    weight: Matrix<T>,
    grid_h: usize,
    grid_w: usize,
}

/// Frozen token-pooling text encoder. `weight` is `embed_dim × feature_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct ToyTextEncoder<T> {
    weight: Matrix<T>,
}

/// Word embeddings `c_m` of the ID class names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct ClassVocabulary<T> {
    class_embeddings: Vec<Vector<T>>,
    class_names: Vec<String>,
}

/// Global and local features of one image, all unit-normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct FeatureMap<T> {
    pub global: Vector<T>,
    pub locals: Vec<Vector<T>>,
    pub source_id: String,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn n_regions(&self) -> usize {
        self.locals.len()
    }

    pub fn with_source(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }
}

impl<T: Scalar> ToyImageEncoder<T> {
    pub fn new(weight: Matrix<T>, grid_h: usize, grid_w: usize) -> Result<Self> {
        if grid_h == 0 || grid_w == 0 {
            return Err(domain("image grid must have at least one region"));
        }
        Ok(Self {
            weight,
            grid_h,
            grid_w,
        })
    }

    pub fn weight(&self) -> &Matrix<T> {
        &self.weight
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.grid_h, self.grid_w)
    }

    pub fn latent_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weight.cols()
    }

    fn check_patches(&self, patches: &[Vec<T>]) -> Result<()> {
        let n = self.grid_h * self.grid_w;
        if patches.len() != n {
            return Err(shape(
                "encode_image grid",
                format!("{}x{} patches", self.grid_h, self.grid_w),
                format!("{} patches", patches.len()),
            ));
        }
        if let Some(p) = patches.iter().find(|p| p.len() != self.latent_dim()) {
            return Err(shape(
                "encode_image latent",
                format!("latent dim {}", self.latent_dim()),
                format!("latent dim {}", p.len()),
            ));
        }
        Ok(())
    }

    /// Encodes a row-major `H×W` grid of latent patches.
    pub fn encode(&self, patches: &[Vec<T>]) -> Result<FeatureMap<T>> {
        self.check_patches(patches)?;
        let mut pooled = vec![T::zero(); self.feature_dim()];
        let mut locals = Vec::with_capacity(patches.len());
        for p in patches {
            let proj = self.weight.tmul(p)?;
            for (acc, &v) in pooled.iter_mut().zip(&proj) {
                *acc += v;
            }
            let (unit, _) = normalize(&proj).map_err(|_| SctError::Numeric {
                stage: "local feature has zero norm".into(),
            })?;
            locals.push(Vector::from_vec_unchecked(unit));
        }
        let inv = T::one() / T::lit(patches.len() as f64);
        pooled.iter_mut().for_each(|v| *v *= inv);
        let (global, _) = normalize(&pooled).map_err(|_| SctError::Numeric {
            stage: "global feature has zero norm".into(),
        })?;
        Ok(FeatureMap {
            global: Vector::from_vec_unchecked(global),
            locals,
            source_id: String::new(),
        })
    }

    /// Gradient of a scalar w.r.t. every input patch, given its gradient
    /// `grad_global` w.r.t. the (unit) global feature.
    pub fn global_backward(&self, patches: &[Vec<T>], grad_global: &[T]) -> Result<Vec<Vec<T>>> {
        self.check_patches(patches)?;
        if grad_global.len() != self.feature_dim() {
            return Err(shape("global_backward", self.feature_dim(), grad_global.len()));
        }
        let n = T::lit(patches.len() as f64);
        let mut mean = vec![T::zero(); self.latent_dim()];
        for p in patches {
            for (m, &v) in mean.iter_mut().zip(p) {
                *m += v / n;
            }
        }
        let pooled = self.weight.tmul(&mean)?;
        let (unit, len) = normalize(&pooled)?;
        let grad_pooled = normalize_backward(&unit, len, grad_global);
        let grad_mean = self.weight.mul(&grad_pooled)?;
        let per_patch: Vec<T> = grad_mean.iter().map(|&g| g / n).collect();
        Ok(vec![per_patch; patches.len()])
    }
}

/// Cached forward pass of the text encoder for one class.
#[derive(Debug, Clone)]
pub(crate) struct TextForward<T> {
    pub unit: Vec<T>,
    pub norm: T,
}

impl<T: Scalar> ToyTextEncoder<T> {
    pub fn new(weight: Matrix<T>) -> Self {
        Self { weight }
    }

    pub fn weight(&self) -> &Matrix<T> {
        &self.weight
    }

    pub fn embed_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weight.cols()
    }

    pub(crate) fn forward(&self, omega: &PromptContext<T>, class_embedding: &[T]) -> Result<TextForward<T>> {
        let d = self.embed_dim();
        if omega.dim() != d {
            return Err(shape("encode_text prompt", d, omega.dim()));
        }
        if class_embedding.len() != d {
            return Err(shape("encode_text class embedding", d, class_embedding.len()));
        }
        let n_tok = T::lit((omega.n_tokens() + 1) as f64);
        let mut mean = class_embedding.to_vec();
        for w in omega.vectors() {
            for (m, &v) in mean.iter_mut().zip(w.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= n_tok);
        let proj = self.weight.tmul(&mean)?;
        let (unit, norm) = normalize(&proj).map_err(|_| SctError::Numeric {
            stage: "text feature has zero norm".into(),
        })?;
        Ok(TextForward { unit, norm })
    }

    /// Gradient w.r.t. each context vector given the gradient w.r.t. the
    /// unit text feature. Mean pooling gives every token the same gradient,
    /// so a single `embed_dim` vector is returned.
    pub(crate) fn backward(&self, fwd: &TextForward<T>, n_tokens: usize, grad_unit: &[T]) -> Result<Vec<T>> {
        let grad_proj = normalize_backward(&fwd.unit, fwd.norm, grad_unit);
        let grad_mean = self.weight.mul(&grad_proj)?;
        let n_tok = T::lit((n_tokens + 1) as f64);
        Ok(grad_mean.into_iter().map(|g| g / n_tok).collect())
    }

    /// `g_m = normalize(Wᵀ · mean(ω₁, …, ω_N, c_m))`.
    pub fn encode(&self, omega: &PromptContext<T>, class_embedding: &[T]) -> Result<Vector<T>> {
        Ok(Vector::from_vec_unchecked(self.forward(omega, class_embedding)?.unit))
    }
}

impl<T: Scalar> ClassVocabulary<T> {
    pub fn new(class_embeddings: Vec<Vector<T>>, class_names: Vec<String>) -> Result<Self> {
        if class_embeddings.len() != class_names.len() {
            return Err(shape("ClassVocabulary", class_embeddings.len(), class_names.len()));
        }
        if class_embeddings.is_empty() {
            return Err(domain("vocabulary must contain at least one class"));
        }
        let d = class_embeddings[0].dim();
        if let Some(bad) = class_embeddings.iter().find(|c| c.dim() != d) {
            return Err(shape("ClassVocabulary embedding", d, bad.dim()));
        }
        Ok(Self {
            class_embeddings,
            class_names,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.class_embeddings.len()
    }

    pub fn embeddings(&self) -> &[Vector<T>] {
        &self.class_embeddings
    }

    pub fn names(&self) -> &[String] {
        &self.class_names
    }
}

/// Encodes an image patch grid; see [`ToyImageEncoder::encode`].
pub fn encode_image<T: Scalar>(patches: &[Vec<T>], enc: &ToyImageEncoder<T>) -> Result<FeatureMap<T>> {
    enc.encode(patches)
}

/// Encodes the prompt `{ω₁…ω_N, c_m}`; see [`ToyTextEncoder::encode`].
pub fn encode_text<T: Scalar>(
    omega: &PromptContext<T>,
    class_embedding: &[T],
    enc: &ToyTextEncoder<T>,
) -> Result<Vector<T>> {
    enc.encode(omega, class_embedding)
}

/// Image encoder, text encoder and class vocabulary drawn from one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct Encoders<T> {
    pub dims: EncoderDims,
    pub seed: u64,
    pub image: ToyImageEncoder<T>,
    pub text: ToyTextEncoder<T>,
    pub vocab: ClassVocabulary<T>,
}

impl<T: Scalar> Encoders<T> {
    /// Text features `g_m` of every class under the prompt `omega`.
    pub fn text_features(&self, omega: &PromptContext<T>) -> Result<Vec<Vector<T>>> {
        self.vocab
            .embeddings()
            .iter()
            .map(|c| self.text.encode(omega, c.as_slice()))
            .collect()
    }

    pub fn encode_image(&self, patches: &[Vec<T>]) -> Result<FeatureMap<T>> {
        self.image.encode(patches)
    }

    /// FNV-1a digest over every frozen parameter; used to assert immutability.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |v: f64| {
            for b in v.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for &w in self.image.weight.as_slice() {
            feed(w.as_f64());
        }
        for &w in self.text.weight.as_slice() {
            feed(w.as_f64());
        }
        for c in self.vocab.embeddings() {
            for &v in c.iter() {
                feed(v.as_f64());
            }
        }
        h
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| SctError::Format(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let enc: Self = serde_json::from_str(s).map_err(|e| SctError::Format(e.to_string()))?;
        enc.check_consistent()?;
        Ok(enc)
    }

    fn check_consistent(&self) -> Result<()> {
        let d = &self.dims;
        d.validate()?;
        let img = self.image.weight();
        if (img.rows(), img.cols()) != (d.latent_dim, d.feature_dim) {
            return Err(shape(
                "image weight",
                format!("{}x{}", d.latent_dim, d.feature_dim),
                format!("{}x{}", img.rows(), img.cols()),
            ));
        }
        if self.image.grid() != (d.grid_h, d.grid_w) {
            return Err(shape(
                "image grid",
                format!("{}x{}", d.grid_h, d.grid_w),
                format!("{:?}", self.image.grid()),
            ));
        }
        let txt = self.text.weight();
        if (txt.rows(), txt.cols()) != (d.embed_dim, d.feature_dim) {
            return Err(shape(
                "text weight",
                format!("{}x{}", d.embed_dim, d.feature_dim),
                format!("{}x{}", txt.rows(), txt.cols()),
            ));
        }
        if self.vocab.n_classes() != d.n_classes || self.vocab.embeddings()[0].dim() != d.embed_dim {
            return Err(shape("vocabulary", d.n_classes, self.vocab.n_classes()));
        }
        Ok(())
    }
}

/// Draws frozen encoders and class embeddings, each entry `N(0, 1/dim)`
/// with `dim` the input dimension of the map.
pub fn build_encoders<T: Scalar>(dims: EncoderDims, seed: u64) -> Result<Encoders<T>> {
    dims.validate()?;
    let mut img_rng = SeededRng::stream(seed, 0);
    let mut txt_rng = SeededRng::stream(seed, 1);
    let mut voc_rng = SeededRng::stream(seed, 2);

    let img_scale = 1.0 / (dims.latent_dim as f64).sqrt();
    let image = ToyImageEncoder::new(
        Matrix::new(
            dims.latent_dim,
            dims.feature_dim,
            img_rng.gaussian_vec(dims.latent_dim * dims.feature_dim, img_scale),
        )?,
        dims.grid_h,
        dims.grid_w,
    )?;

    let txt_scale = 1.0 / (dims.embed_dim as f64).sqrt();
    let text = ToyTextEncoder::new(Matrix::new(
        dims.embed_dim,
        dims.feature_dim,
        txt_rng.gaussian_vec(dims.embed_dim * dims.feature_dim, txt_scale),
    )?);

    let embeddings = (0..dims.n_classes)
        .map(|_| Vector::new(voc_rng.gaussian_vec(dims.embed_dim, txt_scale)))
        .collect::<Result<Vec<_>>>()?;
    let names = (0..dims.n_classes).map(|m| format!("class_{m:03}")).collect();
    let vocab = ClassVocabulary::new(embeddings, names)?;

    Ok(Encoders {
        dims,
        seed,
        image,
        text,
        vocab,
    })
}
