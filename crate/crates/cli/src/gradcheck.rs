//! Analytic prompt gradients against central finite differences.

use serde::Serialize;
use sctlab_core::encoders::{build_encoders, EncoderDims, Encoders};
use sctlab_core::extraction::ExtractionMethod;
use sctlab_core::numerics::{finite_diff_grad, max_relative_error, SeededRng};
use sctlab_core::tuning::{objective, LabeledFeatures, LossKind, ModulationKind, PromptContext, RegularizerKind, TrainConfig};
use sctlab_core::Result;

pub const TOLERANCE: f64 = 1e-4;
pub const STEP: f64 = 1e-5;
const FLOOR: f64 = 1e-8;

pub fn modulations() -> Vec<ModulationKind> {
    vec![
        ModulationKind::None,
        ModulationKind::Linear,
        ModulationKind::Power { alpha: 0.5 },
        ModulationKind::Power { alpha: 2.0 },
        ModulationKind::Power { alpha: 4.0 },
        ModulationKind::Logarithmic,
        ModulationKind::Trigonometric,
    ]
}

pub fn regularizers() -> Vec<RegularizerKind> {
    vec![
        RegularizerKind::NegEntropy,
        RegularizerKind::UniformCe,
        RegularizerKind::Energy {
            m_in: -25.0,
            m_out: 5.0,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckEntry {
    pub loss: String,
    pub modulation: String,
    pub regularizer: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub n_fixtures: usize,
    pub step: f64,
    pub tolerance: f64,
    pub entries: Vec<GradcheckEntry>,
    pub passed: bool,
}

struct Fixture {
    enc: Encoders<f64>,
    batch: Vec<LabeledFeatures<f64>>,
    omega: PromptContext<f64>,
}

const DIMS: EncoderDims = EncoderDims {
    latent_dim: 4,
    embed_dim: 5,
    feature_dim: 6,
    grid_h: 2,
    grid_w: 2,
    n_classes: 4,
};
const N_TOKENS: usize = 3;
const BATCH: usize = 3;

fn fixture(seed: u64, index: u64) -> Result<Fixture> {
    let enc = build_encoders::<f64>(DIMS, seed.wrapping_mul(1000).wrapping_add(index))?;
    let mut rng = SeededRng::stream(seed, 100 + index);
    let batch = (0..BATCH)
        .map(|_| {
            let patches: Vec<Vec<f64>> = (0..DIMS.n_regions())
                .map(|_| rng.gaussian_vec(DIMS.latent_dim, 1.0))
                .collect();
            Ok(LabeledFeatures {
                features: enc.encode_image(&patches)?,
                label: rng.below(DIMS.n_classes),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let omega = PromptContext::random(N_TOKENS, DIMS.embed_dim, 0.5, &mut rng)?;
    Ok(Fixture { enc, batch, omega })
}

fn check_one(fx: &Fixture, cfg: &TrainConfig, kind: LossKind, corrupt: bool) -> Result<f64> {
    let batch: Vec<&LabeledFeatures<f64>> = fx.batch.iter().collect();
    let eval = objective(&batch, &fx.omega, &fx.enc, cfg, kind, None, true)?;
    // Region selection is piecewise constant in ω; hold it fixed.
    let selection = eval.selections;
    let mut analytic: Vec<f64> = eval
        .grad
        .expect("gradient requested")
        .iter()
        .flat_map(|v| v.as_slice().to_vec())
        .collect();
    if corrupt {
        for g in &mut analytic {
            *g *= 1.01;
        }
    }
    let numeric = finite_diff_grad(
        |x: &[f64]| {
            let om = PromptContext::from_flat(x, N_TOKENS, DIMS.embed_dim)?;
            Ok(objective(&batch, &om, &fx.enc, cfg, kind, Some(&selection), false)?.loss)
        },
        &fx.omega.to_flat(),
        STEP,
    )?;
    Ok(max_relative_error(&analytic, &numeric, FLOOR))
}

/// Every (loss, modulation, regularizer) triple on `n_fixtures` random
/// fixtures. `corrupt` scales the analytic gradient by 1.01 (negative control).
pub fn run_gradcheck(n_fixtures: usize, seed: u64, corrupt: bool) -> Result<GradcheckReport> {
    let fixtures = (0..n_fixtures as u64)
        .map(|i| fixture(seed, i))
        .collect::<Result<Vec<_>>>()?;
    let mut entries = Vec::new();
    for kind in LossKind::ALL {
        for modulation in modulations() {
            for regularizer in regularizers() {
                let cfg = TrainConfig {
                    lambda: 0.7,
                    rank_k: 1,
                    tau_train: 0.5,
                    n_tokens: N_TOKENS,
                    modulation,
                    regularizer,
                    extraction: ExtractionMethod::Rank,
                    ..TrainConfig::default()
                };
                let mut worst = 0.0f64;
                for fx in &fixtures {
                    worst = worst.max(check_one(fx, &cfg, kind, corrupt)?);
                }
                entries.push(GradcheckEntry {
                    loss: kind.name().into(),
                    modulation: modulation.label(),
                    regularizer: regularizer.label().into(),
                    max_rel_error: worst,
                    passed: worst < TOLERANCE,
                });
            }
        }
    }
    let passed = entries.iter().all(|e| e.passed);
    Ok(GradcheckReport {
        n_fixtures,
        step: STEP,
        tolerance: TOLERANCE,
        entries,
        passed,
    })
}
