//! In-memory experiment building blocks shared by the subcommands.

use serde::{Deserialize, Serialize};
use sctlab_core::encoders::{build_encoders, FeatureMap};
use sctlab_core::metrics::{auroc, ece, fpr95, id_accuracy, CalibrationSample, ScoreSample};
use sctlab_core::numerics::Vector;
use sctlab_core::scoring::{react_threshold, score, DetectorConfig, ScoreInput};
use sctlab_core::synthdata::{featurize, featurize_labeled, gen_id, gen_ood, Prototypes, SynthConfig, SynthExample};
use sctlab_core::tuning::{class_probs, train, LabeledFeatures, LossKind, PromptContext, TrainOutcome};
use sctlab_core::{Encoders64, Result};

use crate::config::ExperimentConfig;

pub const SPLIT_TRAIN: u64 = 1;
pub const SPLIT_ID_TEST: u64 = 2;
pub const SPLIT_OOD_TEST: u64 = 3;
pub const SPLIT_POOL: u64 = 4;
pub const SPLIT_PROBE: u64 = 5;

/// The config of run number `offset`: data and training seeds shifted,
/// frozen encoders unchanged.
pub fn config_for_run(cfg: &ExperimentConfig, offset: u64) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.synth.seed = cfg.synth.seed.wrapping_add(offset);
    c.train.seed = cfg.train.seed.wrapping_add(offset);
    c
}

/// Frozen encoders plus the generated splits of one run.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub enc: Encoders64,
    pub protos: Prototypes,
    pub synth: SynthConfig,
    pub train: Vec<SynthExample>,
    pub id_test: Vec<SynthExample>,
    pub ood_test: Vec<SynthExample>,
}

pub fn build_benchmark_encoders(cfg: &ExperimentConfig) -> Result<Encoders64> {
    build_encoders(cfg.encoders.dims, cfg.encoders.seed)
}

impl Benchmark {
    pub fn generate(cfg: &ExperimentConfig) -> Result<Self> {
        let enc = build_benchmark_encoders(cfg)?;
        let protos = Prototypes::aligned(&cfg.synth, &enc)?;
        Ok(Self {
            train: gen_id(&cfg.synth, &protos, cfg.shots, SPLIT_TRAIN)?,
            id_test: gen_id(&cfg.synth, &protos, cfg.eval.n_id_test, SPLIT_ID_TEST)?,
            ood_test: gen_ood(&cfg.synth, &protos, cfg.eval.n_ood_test, SPLIT_OOD_TEST)?,
            enc,
            protos,
            synth: cfg.synth.clone(),
        })
    }
}

/// Encoded test splits and the calibration activations for ReAct.
#[derive(Debug, Clone)]
pub struct TestSet<'a> {
    pub id_examples: &'a [SynthExample],
    pub id: Vec<LabeledFeatures<f64>>,
    pub ood_examples: &'a [SynthExample],
    pub ood: Vec<FeatureMap<f64>>,
    pub calibration: Vec<Vector<f64>>,
}

impl<'a> TestSet<'a> {
    pub fn new(
        enc: &Encoders64,
        id_examples: &'a [SynthExample],
        ood_examples: &'a [SynthExample],
        calibration_examples: &[SynthExample],
    ) -> Result<Self> {
        Ok(Self {
            id: featurize_labeled(id_examples, enc)?,
            ood: ood_examples.iter().map(|e| featurize(e, enc)).collect::<Result<_>>()?,
            calibration: calibration_examples
                .iter()
                .map(|e| featurize(e, enc).map(|f| f.global))
                .collect::<Result<_>>()?,
            id_examples,
            ood_examples,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorMetrics {
    pub detector: String,
    pub fpr95: f64,
    pub auroc: f64,
}

/// Metrics of one trained prompt on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub detectors: Vec<DetectorMetrics>,
    pub id_acc: f64,
    pub ece: f64,
}

impl EvalMetrics {
    pub fn detector(&self, label: &str) -> Option<&DetectorMetrics> {
        self.detectors.iter().find(|d| d.detector == label)
    }
}

fn patches_of(ex: &SynthExample) -> Vec<Vec<f64>> {
    ex.patches.clone()
}

/// Scores every test image with every detector and computes
/// FPR95/AUROC, ID accuracy and ECE (classifier at `tau`).
pub fn evaluate(
    enc: &Encoders64,
    omega: &PromptContext<f64>,
    test: &TestSet<'_>,
    detectors: &[DetectorConfig],
    tau: f64,
    ece_bins: usize,
) -> Result<EvalMetrics> {
    let text = enc.text_features(omega)?;
    let mut per_detector = Vec::with_capacity(detectors.len());
    for det in detectors {
        let react_clip = match det {
            DetectorConfig::React { percentile } => Some(react_threshold(&test.calibration, *percentile)?),
            _ => None,
        };
        let needs_patches = matches!(det, DetectorConfig::Odin { epsilon, .. } if *epsilon > 0.0);
        let run = |fm: &FeatureMap<f64>, ex: &SynthExample| -> Result<f64> {
            let patches = needs_patches.then(|| patches_of(ex));
            score(
                det,
                &ScoreInput {
                    features: fm,
                    text_feats: &text,
                    patches: patches.as_deref(),
                    encoder: Some(&enc.image),
                    react_clip,
                },
            )
        };
        let id_scores = test
            .id
            .iter()
            .zip(test.id_examples)
            .map(|(lf, ex)| run(&lf.features, ex))
            .collect::<Result<Vec<_>>>()?;
        let ood_scores = test
            .ood
            .iter()
            .zip(test.ood_examples)
            .map(|(fm, ex)| run(fm, ex))
            .collect::<Result<Vec<_>>>()?;
        let sample = ScoreSample::new(id_scores, ood_scores)?;
        per_detector.push(DetectorMetrics {
            detector: det.label().to_string(),
            fpr95: fpr95(&sample)?,
            auroc: auroc(&sample)?,
        });
    }

    let mut predictions = Vec::with_capacity(test.id.len());
    let mut labels = Vec::with_capacity(test.id.len());
    let mut confidences = Vec::with_capacity(test.id.len());
    for lf in &test.id {
        let (pred, conf) = class_probs(lf.features.global.as_slice(), &text, tau)?.max();
        predictions.push(pred);
        labels.push(lf.label);
        confidences.push(conf);
    }
    let correct = predictions.iter().zip(&labels).map(|(p, l)| p == l).collect();
    Ok(EvalMetrics {
        detectors: per_detector,
        id_acc: id_accuracy(&predictions, &labels)?,
        ece: ece(&CalibrationSample {
            confidences,
            correct,
            n_bins: ece_bins,
        })?,
    })
}

/// One trained-and-evaluated (method, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: String,
    pub seed: u64,
    pub metrics: EvalMetrics,
    pub loss_trace: Vec<f64>,
}

/// Trains `kind` on `train_set` with `cfg.train` and evaluates it.
pub fn train_and_evaluate(
    cfg: &ExperimentConfig,
    enc: &Encoders64,
    train_set: &[SynthExample],
    test: &TestSet<'_>,
    kind: LossKind,
) -> Result<(TrainOutcome<f64>, EvalMetrics)> {
    let feats = featurize_labeled(train_set, enc)?;
    let outcome = train(&feats, enc, &cfg.train, kind)?;
    let metrics = evaluate(
        enc,
        &outcome.prompt,
        test,
        &cfg.detectors,
        cfg.train.tau_train,
        cfg.eval.ece_bins,
    )?;
    Ok((outcome, metrics))
}

/// Generates run `offset`'s benchmark and trains/evaluates each method on it.
pub fn run_methods(cfg: &ExperimentConfig, methods: &[LossKind], offset: u64) -> Result<Vec<RunRecord>> {
    let run_cfg = config_for_run(cfg, offset);
    let bench = Benchmark::generate(&run_cfg)?;
    let test = TestSet::new(&bench.enc, &bench.id_test, &bench.ood_test, &bench.train)?;
    methods
        .iter()
        .map(|&kind| {
            let (outcome, metrics) = train_and_evaluate(&run_cfg, &bench.enc, &bench.train, &test, kind)?;
            Ok(RunRecord {
                method: method_label(kind, &run_cfg),
                seed: run_cfg.train.seed,
                metrics,
                loss_trace: outcome.loss_trace,
            })
        })
        .collect()
}

/// `coop`, `locoop`, or `sct-<modulation>`.
pub fn method_label(kind: LossKind, cfg: &ExperimentConfig) -> String {
    match kind {
        LossKind::Sct => format!("sct-{}", cfg.train.modulation.label()),
        other => other.name().to_string(),
    }
}

/// Cohort experiment result for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortRecord {
    pub seed: u64,
    pub low: EvalMetrics,
    pub high: EvalMetrics,
    pub low_ids: Vec<String>,
    pub high_ids: Vec<String>,
    pub disjoint: bool,
}

/// Trains a probe LoCoOp model on a small split, ranks a disjoint pool by its
/// `p(y|x)`, then trains LoCoOp separately on the most and least confident
/// cohorts and evaluates both on the shared test sets.
pub fn run_cohort_seed(cfg: &ExperimentConfig, offset: u64) -> Result<CohortRecord> {
    let run_cfg = config_for_run(cfg, offset);
    let bench = Benchmark::generate(&run_cfg)?;
    let probe = gen_id(&run_cfg.synth, &bench.protos, run_cfg.cohort.probe_shots, SPLIT_PROBE)?;
    let pool = gen_id(&run_cfg.synth, &bench.protos, run_cfg.cohort.pool_per_class, SPLIT_POOL)?;
    let probe_feats = featurize_labeled(&probe, &bench.enc)?;
    let probe_model = train(&probe_feats, &bench.enc, &run_cfg.train, LossKind::Locoop)?;
    let (low, high) = sctlab_core::synthdata::uncertainty_cohorts(
        &pool,
        &bench.enc,
        &probe_model.prompt,
        run_cfg.train.tau_train,
        run_cfg.cohort.shots_per_cohort,
    )?;
    let test = TestSet::new(&bench.enc, &bench.id_test, &bench.ood_test, &bench.train)?;
    let (_, low_metrics) = train_and_evaluate(&run_cfg, &bench.enc, &low, &test, LossKind::Locoop)?;
    let (_, high_metrics) = train_and_evaluate(&run_cfg, &bench.enc, &high, &test, LossKind::Locoop)?;
    let low_ids: Vec<String> = low.iter().map(|e| e.id.clone()).collect();
    let high_ids: Vec<String> = high.iter().map(|e| e.id.clone()).collect();
    let disjoint = low_ids.iter().all(|l| !high_ids.contains(l))
        && low_ids.iter().chain(&high_ids).all(|id| probe.iter().all(|p| &p.id != id));
    Ok(CohortRecord {
        seed: run_cfg.train.seed,
        low: low_metrics,
        high: high_metrics,
        low_ids,
        high_ids,
        disjoint,
    })
}
