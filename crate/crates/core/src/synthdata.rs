//! Seeded synthetic patch-grid datasets.
//!
//! An ID image is a grid of latent patches: a fraction of them are noisy
//! copies of its class prototype (foreground), the rest noisy copies of
//! background prototypes shared by all ID classes. OOD images are built
//! from a separate set of prototypes drawn on a disjoint random stream.
//!
//! Class prototypes are placed where the frozen image encoder maps them
//! closest (in least squares) to the text encoder's feature for the class
//! name, mimicking a backbone whose modalities were aligned by pretraining.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::encoders::{Encoders, FeatureMap};
use crate::error::{domain, Result, SctError};
use crate::numerics::{Scalar, SeededRng};
use crate::tuning::{class_probs, LabeledFeatures, PromptContext};

pub const FORMAT_VERSION: u32 = 1;

/// Generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_classes: usize,
    /// Number of background prototypes B (also the number of OOD prototypes).
    pub n_background: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub latent_dim: usize,
    /// Norm of every prototype.
    pub class_sep: f64,
    /// Per-coordinate Gaussian jitter σ added to each patch.
    pub noise: f64,
    /// Fraction of patches drawn from the class prototype.
    pub fg_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 20,
            n_background: 10,
            grid_h: 4,
            grid_w: 4,
            latent_dim: 16,
            class_sep: 3.0,
            noise: 0.7,
            fg_fraction: 0.6,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(domain("synth.n_classes must be at least 2"));
        }
        if self.n_background == 0 {
            return Err(domain("synth.n_background must be at least 1"));
        }
        if self.grid_h == 0 || self.grid_w == 0 || self.latent_dim == 0 {
            return Err(domain("synth grid and latent_dim must be positive"));
        }
        if !(self.class_sep > 0.0 && self.class_sep.is_finite()) {
            return Err(domain("synth.class_sep must be positive"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(domain("synth.noise must be non-negative"));
        }
        if !(self.fg_fraction > 0.0 && self.fg_fraction <= 1.0) {
            return Err(domain("synth.fg_fraction must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn n_patches(&self) -> usize {
        self.grid_h * self.grid_w
    }

    /// Number of foreground patches, `round(fg_fraction · H · W)`, at least one.
    pub fn n_foreground(&self) -> usize {
        ((self.fg_fraction * self.n_patches() as f64).round() as usize).clamp(1, self.n_patches())
    }
}

/// One generated image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthExample {
    pub id: String,
    /// ID class index, or `null` for OOD images.
    pub label: Option<usize>,
    /// Row-major `H×W` grid of latent vectors.
    pub patches: Vec<Vec<f64>>,
    pub fg_mask: Vec<bool>,
}

impl SynthExample {
    pub fn is_ood(&self) -> bool {
        self.label.is_none()
    }
}

/// Class, background and OOD prototypes in latent space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototypes {
    pub class: Vec<Vec<f64>>,
    pub background: Vec<Vec<f64>>,
    pub ood: Vec<Vec<f64>>,
}

const STREAM_CLASS: u64 = 10;
const STREAM_BACKGROUND: u64 = 11;
const STREAM_OOD: u64 = 12;
const STREAM_ID_SPLIT: u64 = 20;
const STREAM_OOD_SPLIT: u64 = 21;

fn scaled_unit(v: Vec<f64>, norm: f64) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0) {
        return Err(SctError::Numeric {
            stage: "prototype has zero norm".into(),
        });
    }
    Ok(v.into_iter().map(|x| x * norm / n).collect())
}

fn random_directions(rng: &mut SeededRng, count: usize, dim: usize, norm: f64) -> Result<Vec<Vec<f64>>> {
    (0..count)
        .map(|_| scaled_unit(rng.gaussian_vec(dim, 1.0), norm))
        .collect()
}

impl Prototypes {
    /// Class prototypes aligned with `enc`; background and OOD prototypes random.
    pub fn aligned<T: Scalar>(cfg: &SynthConfig, enc: &Encoders<T>) -> Result<Self> {
        cfg.validate()?;
        if enc.dims.latent_dim != cfg.latent_dim || enc.vocab.n_classes() != cfg.n_classes {
            return Err(domain(format!(
                "synth config (latent_dim {}, {} classes) does not match encoders (latent_dim {}, {} classes)",
                cfg.latent_dim,
                cfg.n_classes,
                enc.dims.latent_dim,
                enc.vocab.n_classes()
            )));
        }
        let img = enc.image.weight();
        let (d_lat, d_feat) = (img.rows(), img.cols());
        // A = W_imgᵀ (feature × latent)
        let a = DMatrix::from_fn(d_feat, d_lat, |f, l| img.get(l, f).as_f64());
        let svd = a.svd(true, true);
        let mut class = Vec::with_capacity(cfg.n_classes);
        for c in enc.vocab.embeddings() {
            let target = enc.text.weight().tmul(c.as_slice())?;
            let b = DVector::from_iterator(d_feat, target.iter().map(|v| v.as_f64()));
            let x = svd
                .solve(&b, 1e-12)
                .map_err(|e| SctError::Numeric {
                    stage: format!("prototype alignment: {e}"),
                })?;
            class.push(scaled_unit(x.iter().copied().collect(), cfg.class_sep)?);
        }
        let mut rest = Self::random(cfg)?;
        rest.class = class;
        Ok(rest)
    }

    /// All prototypes drawn at random (no backbone alignment).
    pub fn random(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.latent_dim;
        Ok(Self {
            class: random_directions(&mut SeededRng::stream(cfg.seed, STREAM_CLASS), cfg.n_classes, d, cfg.class_sep)?,
            background: random_directions(
                &mut SeededRng::stream(cfg.seed, STREAM_BACKGROUND),
                cfg.n_background,
                d,
                cfg.class_sep,
            )?,
            ood: random_directions(&mut SeededRng::stream(cfg.seed, STREAM_OOD), cfg.n_background, d, cfg.class_sep)?,
        })
    }
}

fn jitter(rng: &mut SeededRng, proto: &[f64], noise: f64) -> Vec<f64> {
    proto.iter().map(|&p| p + noise * rng.gaussian::<f64>()).collect()
}

/// `shots` ID images per class, class-major order.
pub fn gen_id(cfg: &SynthConfig, protos: &Prototypes, shots: usize, split_seed: u64) -> Result<Vec<SynthExample>> {
    cfg.validate()?;
    if shots == 0 {
        return Err(domain("shots must be positive"));
    }
    let mut rng = SeededRng::stream(cfg.seed ^ split_seed.rotate_left(32), STREAM_ID_SPLIT);
    let n = cfg.n_patches();
    let n_fg = cfg.n_foreground();
    let mut out = Vec::with_capacity(cfg.n_classes * shots);
    for (class, proto) in protos.class.iter().enumerate() {
        for shot in 0..shots {
            let mut positions: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut positions);
            let mut patches = vec![Vec::new(); n];
            let mut fg_mask = vec![false; n];
            for (k, &pos) in positions.iter().enumerate() {
                if k < n_fg {
                    patches[pos] = jitter(&mut rng, proto, cfg.noise);
                    fg_mask[pos] = true;
                } else {
                    let b = rng.below(protos.background.len());
                    patches[pos] = jitter(&mut rng, &protos.background[b], cfg.noise);
                }
            }
            out.push(SynthExample {
                id: format!("id-{split_seed}-{class:03}-{shot:04}"),
                label: Some(class),
                patches,
                fg_mask,
            });
        }
    }
    Ok(out)
}

/// `n` OOD images. Each has a dominant OOD prototype on `round(fg_fraction·H·W)`
/// patches, and randomly chosen OOD prototypes elsewhere.
pub fn gen_ood(cfg: &SynthConfig, protos: &Prototypes, n: usize, ood_seed: u64) -> Result<Vec<SynthExample>> {
    cfg.validate()?;
    let mut rng = SeededRng::stream(cfg.seed ^ ood_seed.rotate_left(32), STREAM_OOD_SPLIT);
    let n_patches = cfg.n_patches();
    let n_main = cfg.n_foreground();
    let k = protos.ood.len();
    let mut out = Vec::with_capacity(n);
    for idx in 0..n {
        let main = rng.below(k);
        let mut positions: Vec<usize> = (0..n_patches).collect();
        rng.shuffle(&mut positions);
        let mut patches = vec![Vec::new(); n_patches];
        for (j, &pos) in positions.iter().enumerate() {
            let proto = if j < n_main { main } else { rng.below(k) };
            patches[pos] = jitter(&mut rng, &protos.ood[proto], cfg.noise);
        }
        out.push(SynthExample {
            id: format!("ood-{ood_seed}-{idx:05}"),
            label: None,
            patches,
            fg_mask: vec![false; n_patches],
        });
    }
    Ok(out)
}

fn cast_patches<T: Scalar>(patches: &[Vec<f64>]) -> Vec<Vec<T>> {
    patches
        .iter()
        .map(|p| p.iter().map(|&v| T::lit(v)).collect())
        .collect()
}

/// Encodes one example with the frozen image encoder.
pub fn featurize<T: Scalar>(ex: &SynthExample, enc: &Encoders<T>) -> Result<FeatureMap<T>> {
    Ok(enc.encode_image(&cast_patches(&ex.patches))?.with_source(ex.id.clone()))
}

/// Encodes a labelled ID dataset.
pub fn featurize_labeled<T: Scalar>(data: &[SynthExample], enc: &Encoders<T>) -> Result<Vec<LabeledFeatures<T>>> {
    data.iter()
        .map(|ex| {
            let label = ex
                .label
                .ok_or_else(|| domain(format!("example {} has no ID label", ex.id)))?;
            Ok(LabeledFeatures {
                features: featurize(ex, enc)?,
                label,
            })
        })
        .collect()
}

/// Splits `pool` into the `shots_per_cohort` most confident and least
/// confident examples of each class, measured by `p(y|x)` of the global
/// feature under `omega`.
///
/// Returns `(low_uncertainty, high_uncertainty)`.
pub fn uncertainty_cohorts<T: Scalar>(
    pool: &[SynthExample],
    enc: &Encoders<T>,
    omega: &PromptContext<T>,
    tau: T,
    shots_per_cohort: usize,
) -> Result<(Vec<SynthExample>, Vec<SynthExample>)> {
    if shots_per_cohort == 0 {
        return Err(domain("shots_per_cohort must be positive"));
    }
    let text = enc.text_features(omega)?;
    let n_classes = enc.vocab.n_classes();
    let mut per_class: Vec<Vec<(T, usize)>> = vec![Vec::new(); n_classes];
    for (i, ex) in pool.iter().enumerate() {
        let y = ex
            .label
            .ok_or_else(|| domain(format!("pool example {} has no ID label", ex.id)))?;
        if y >= n_classes {
            return Err(domain(format!("pool example {} has label {y} out of range", ex.id)));
        }
        let fm = featurize(ex, enc)?;
        let p = class_probs(fm.global.as_slice(), &text, tau)?;
        per_class[y].push((p.get(y), i));
    }
    let mut low = Vec::new();
    let mut high = Vec::new();
    for (class, mut members) in per_class.into_iter().enumerate() {
        if members.len() < 2 * shots_per_cohort {
            return Err(domain(format!(
                "class {class} has {} pool examples, need at least {}",
                members.len(),
                2 * shots_per_cohort
            )));
        }
        // most confident first; ties by pool order
        members.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite probs").then(a.1.cmp(&b.1)));
        low.extend(members[..shots_per_cohort].iter().map(|&(_, i)| pool[i].clone()));
        high.extend(
            members[members.len() - shots_per_cohort..]
                .iter()
                .map(|&(_, i)| pool[i].clone()),
        );
    }
    Ok((low, high))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    synth_config: SynthConfig,
}

/// Writes a JSON Lines dataset: a header object, then one example per line.
pub fn write_jsonl<W: Write>(mut w: W, cfg: &SynthConfig, examples: &[SynthExample]) -> Result<()> {
    let io = |e: std::io::Error| SctError::Format(e.to_string());
    let ser = |e: serde_json::Error| SctError::Format(e.to_string());
    let header = Header {
        format_version: FORMAT_VERSION,
        synth_config: cfg.clone(),
    };
    serde_json::to_writer(&mut w, &header).map_err(ser)?;
    w.write_all(b"\n").map_err(io)?;
    for ex in examples {
        serde_json::to_writer(&mut w, ex).map_err(ser)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a dataset written by [`write_jsonl`].
pub fn read_jsonl<R: BufRead>(r: R) -> Result<(SynthConfig, Vec<SynthExample>)> {
    let mut lines = r.lines();
    let first = lines
        .next()
        .ok_or_else(|| SctError::Format("empty dataset file".into()))?
        .map_err(|e| SctError::Format(e.to_string()))?;
    let header: Header =
        serde_json::from_str(&first).map_err(|e| SctError::Format(format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(SctError::Format(format!(
            "unsupported dataset format_version {}",
            header.format_version
        )));
    }
    let n = header.synth_config.n_patches();
    let mut examples = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| SctError::Format(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: SynthExample = serde_json::from_str(&line)
            .map_err(|e| SctError::Format(format!("line {}: {e}", lineno + 2)))?;
        if ex.patches.len() != n || ex.fg_mask.len() != n {
            return Err(SctError::Format(format!(
                "line {}: expected {n} patches and mask entries",
                lineno + 2
            )));
        }
        examples.push(ex);
    }
    Ok((header.synth_config, examples))
}
