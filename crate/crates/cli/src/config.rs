//! Experiment configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sctlab_core::encoders::EncoderDims;
use sctlab_core::scoring::DetectorConfig;
use sctlab_core::synthdata::SynthConfig;
use sctlab_core::tuning::TrainConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSection {
    pub dims: EncoderDims,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Number of OOD test images.
    pub n_ood_test: usize,
    /// ID test images per class.
    pub n_id_test: usize,
    pub ece_bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSection {
    /// Pool images per class scored by the probe model.
    pub pool_per_class: usize,
    /// Training shots of the probe model (drawn disjoint from the pool).
    pub probe_shots: usize,
    pub shots_per_cohort: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Training images per class.
    pub shots: usize,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub encoders: EncoderSection,
    pub detectors: Vec<DetectorConfig>,
    pub eval: EvalSection,
    pub cohort: CohortSection,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    /// Desk-scale benchmark: the generator defaults with a smaller
    /// class_sep, a sharp training temperature and K ≈ M/5.
    fn default() -> Self {
        let synth = SynthConfig {
            class_sep: 1.5,
            ..SynthConfig::default()
        };
        let dims = EncoderDims {
            latent_dim: synth.latent_dim,
            grid_h: synth.grid_h,
            grid_w: synth.grid_w,
            n_classes: synth.n_classes,
            ..EncoderDims::default()
        };
        Self {
            shots: 16,
            train: TrainConfig {
                rank_k: synth.n_classes / 5,
                tau_train: 0.05,
                ..TrainConfig::default()
            },
            synth,
            encoders: EncoderSection { dims, seed: 0 },
            detectors: DetectorConfig::defaults(),
            eval: EvalSection {
                n_ood_test: 500,
                n_id_test: 25,
                ece_bins: 15,
            },
            cohort: CohortSection {
                pool_per_class: 32,
                probe_shots: 4,
                shots_per_cohort: 4,
            },
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Parses a JSON document; errors carry the offending field path.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("at `{path}`: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg_err = |field: &str, e: sctlab_core::SctError| CliError::Config(format!("at `{field}`: {e}"));
        if self.shots == 0 {
            return Err(CliError::Config("at `shots`: must be positive".into()));
        }
        self.synth.validate().map_err(|e| cfg_err("synth", e))?;
        self.train.validate().map_err(|e| cfg_err("train", e))?;
        self.encoders.dims.validate().map_err(|e| cfg_err("encoders.dims", e))?;
        let d = &self.encoders.dims;
        let s = &self.synth;
        if d.latent_dim != s.latent_dim || d.grid_h != s.grid_h || d.grid_w != s.grid_w || d.n_classes != s.n_classes {
            return Err(CliError::Config(
                "at `encoders.dims`: latent_dim, grid_h, grid_w and n_classes must match `synth`".into(),
            ));
        }
        if self.detectors.is_empty() {
            return Err(CliError::Config("at `detectors`: at least one detector is required".into()));
        }
        for (i, det) in self.detectors.iter().enumerate() {
            det.validate().map_err(|e| cfg_err(&format!("detectors[{i}]"), e))?;
        }
        if self.eval.n_ood_test == 0 || self.eval.n_id_test == 0 || self.eval.ece_bins == 0 {
            return Err(CliError::Config(
                "at `eval`: n_ood_test, n_id_test and ece_bins must be positive".into(),
            ));
        }
        let c = &self.cohort;
        if c.shots_per_cohort == 0 || c.probe_shots == 0 {
            return Err(CliError::Config("at `cohort`: shot counts must be positive".into()));
        }
        if c.pool_per_class < 2 * c.shots_per_cohort {
            return Err(CliError::Config(format!(
                "at `cohort.pool_per_class`: need at least {} (2 × shots_per_cohort)",
                2 * c.shots_per_cohort
            )));
        }
        Ok(())
    }
}
