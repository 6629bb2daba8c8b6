//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Run alone with `cargo test -p sctlab-cli --test acceptance`.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use sctlab_cli::commands::{cmd_cohort, cmd_compare, cmd_eval, cmd_gen, cmd_gradcheck, cmd_train};
use sctlab_cli::ExperimentConfig;
use sctlab_core::encoders::{build_encoders, EncoderDims, Encoders, FeatureMap};
use sctlab_core::extraction::extract_rank;
use sctlab_core::metrics::{auroc, ece, fpr_at_tpr, CalibrationSample, ScoreSample};
use sctlab_core::numerics::{SeededRng, Vector};
use sctlab_core::scoring::{score_energy, score_glmcm, score_maxlogit, score_mcm, score_msp, score_odin};
use sctlab_core::tuning::{
    ce_loss, class_probs, loss_locoop, loss_sct, modulation, LabeledFeatures, LossKind, ModulationKind, PromptContext,
    RegularizerKind, TrainConfig,
};

type Criterion<'a> = Box<dyn FnOnce() -> Outcome + 'a>;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

const SMALL: EncoderDims = EncoderDims {
    latent_dim: 4,
    embed_dim: 5,
    feature_dim: 6,
    grid_h: 2,
    grid_w: 2,
    n_classes: 4,
};

struct Fixture {
    enc: Encoders<f64>,
    batch: Vec<LabeledFeatures<f64>>,
    patches: Vec<Vec<Vec<f64>>>,
    omega: PromptContext<f64>,
}

fn fixture(dims: EncoderDims, seed: u64) -> Fixture {
    let enc = build_encoders::<f64>(dims, seed).unwrap();
    let mut rng = SeededRng::stream(seed, 900);
    let patches: Vec<Vec<Vec<f64>>> = (0..4)
        .map(|_| (0..dims.n_regions()).map(|_| rng.gaussian_vec(dims.latent_dim, 1.0)).collect())
        .collect();
    let batch = patches
        .iter()
        .map(|p| LabeledFeatures {
            features: enc.encode_image(p).unwrap(),
            label: rng.below(dims.n_classes),
        })
        .collect();
    let omega = PromptContext::random(3, dims.embed_dim, 0.5, &mut rng).unwrap();
    Fixture {
        enc,
        batch,
        patches,
        omega,
    }
}

fn criterion_1(dir: &Path) -> Outcome {
    let start = Instant::now();
    let report = cmd_gradcheck(&ExperimentConfig::default(), dir, 10, false);
    let elapsed = start.elapsed();
    match report {
        Ok(r) => {
            let worst = r.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max);
            outcome(
                r.passed && r.entries.len() == 63 && elapsed < Duration::from_secs(30),
                format!("{} combinations x 10 fixtures, worst relative error {worst:.2e}, {elapsed:.2?}", r.entries.len()),
            )
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

fn criterion_2() -> Outcome {
    let regs = [
        RegularizerKind::NegEntropy,
        RegularizerKind::UniformCe,
        RegularizerKind::Energy {
            m_in: -25.0,
            m_out: 5.0,
        },
    ];
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let fx = fixture(SMALL, seed);
        let refs: Vec<&LabeledFeatures<f64>> = fx.batch.iter().collect();
        let cfg = TrainConfig {
            lambda: 0.7,
            rank_k: 1,
            tau_train: 0.5,
            n_tokens: 3,
            modulation: ModulationKind::None,
            regularizer: regs[seed as usize % 3],
            ..TrainConfig::default()
        };
        let sct = loss_sct(&refs, &fx.omega, &fx.enc, &cfg).unwrap();
        let locoop = loss_locoop(&refs, &fx.omega, &fx.enc, &cfg).unwrap();
        worst = worst.max((sct - locoop).abs());

        let no_reg = TrainConfig { lambda: 0.0, ..cfg };
        let text = fx.enc.text_features(&fx.omega).unwrap();
        let mean_ce = fx
            .batch
            .iter()
            .map(|ex| ce_loss(&class_probs(ex.features.global.as_slice(), &text, 0.5).unwrap(), ex.label).unwrap())
            .sum::<f64>()
            / fx.batch.len() as f64;
        let locoop0 = loss_locoop(&refs, &fx.omega, &fx.enc, &no_reg).unwrap();
        worst = worst.max((locoop0 - mean_ce).abs());
    }
    outcome(worst <= 1e-12, format!("100 fixtures, max deviation {worst:.1e}"))
}

fn criterion_3() -> Outcome {
    let kinds = [
        ModulationKind::Linear,
        ModulationKind::Power { alpha: 0.5 },
        ModulationKind::Power { alpha: 2.0 },
        ModulationKind::Power { alpha: 4.0 },
        ModulationKind::Logarithmic,
        ModulationKind::Trigonometric,
    ];
    let mut problems = Vec::new();
    for kind in kinds {
        let vals: Vec<(f64, f64)> = (0..=1000).map(|i| modulation(kind, i as f64 / 1000.0).unwrap()).collect();
        let (first, last) = (vals[0], vals[1000]);
        let tol = if kind == ModulationKind::Logarithmic { 1e-12 } else { 0.0 };
        let boundary_ok = (first.0 - 1.0).abs() <= tol
            && first.1.abs() <= tol
            && last.0.abs() <= tol
            && (last.1 - 1.0).abs() <= tol;
        let monotone = vals.windows(2).all(|w| w[1].0 <= w[0].0 && w[1].1 >= w[0].1);
        let complementary = !matches!(kind, ModulationKind::Linear | ModulationKind::Logarithmic)
            || vals.iter().all(|(a, b)| (a + b - 1.0).abs() <= 1e-12);
        if !(boundary_ok && monotone && complementary) {
            problems.push(kind.label());
        }
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            "6 kinds on a 1001-point grid".to_string()
        } else {
            format!("violations: {problems:?}")
        },
    )
}

fn oracle_rank(p: &[f64], y: usize) -> usize {
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[b].partial_cmp(&p[a]).unwrap().then(a.cmp(&b)));
    order.iter().position(|&m| m == y).unwrap() + 1
}

fn unit(rng: &mut SeededRng, d: usize) -> Vector<f64> {
    Vector::new(rng.gaussian_vec(d, 1.0)).unwrap().normalized().unwrap()
}

fn criterion_4() -> Outcome {
    let mut mismatches = 0;
    let mut edge_failures = 0;
    let mut monotone_failures = 0;
    for seed in 0..100 {
        let mut rng = SeededRng::stream(seed, 41);
        let m = 2 + rng.below(49);
        let hw = 1 + rng.below(64);
        let fm = FeatureMap {
            global: unit(&mut rng, 8),
            locals: (0..hw).map(|_| unit(&mut rng, 8)).collect(),
            source_id: String::new(),
        };
        let text: Vec<Vector<f64>> = (0..m).map(|_| unit(&mut rng, 8)).collect();
        let y = rng.below(m);
        let mut previous: Option<Vec<usize>> = None;
        for k in 0..=m + 1 {
            let sel = extract_rank(&fm, &text, y, k, 0.1).unwrap();
            let expected: Vec<usize> = (0..hw)
                .filter(|&i| oracle_rank(sel.per_region_probs[i].as_slice(), y) > k)
                .collect();
            mismatches += usize::from(sel.indices != expected);
            if (k == 0 && sel.indices.len() != hw) || (k >= m && !sel.indices.is_empty()) {
                edge_failures += 1;
            }
            if let Some(prev) = &previous {
                monotone_failures += usize::from(!sel.indices.iter().all(|i| prev.contains(i)));
            }
            previous = Some(sel.indices);
        }
    }
    outcome(
        mismatches + edge_failures + monotone_failures == 0,
        format!("100 instances: {mismatches} oracle mismatches, {edge_failures} edge failures, {monotone_failures} monotonicity failures"),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = SeededRng::new(5);
    let mut auroc_bad = 0;
    let mut fpr_bad = 0;
    for _ in 0..100 {
        let (n_id, n_ood, levels) = (1 + rng.below(200), 1 + rng.below(200), 1 + rng.below(25));
        let id: Vec<f64> = (0..n_id).map(|_| rng.below(levels) as f64 + 0.5).collect();
        let ood: Vec<f64> = (0..n_ood).map(|_| rng.below(levels) as f64).collect();
        let s = ScoreSample::new(id.clone(), ood.clone()).unwrap();
        let mut twice = 0u64;
        for a in &id {
            for b in &ood {
                twice += if a > b { 2 } else { u64::from(a == b) };
            }
        }
        auroc_bad += usize::from(auroc(&s).unwrap() != twice as f64 / (2 * n_id * n_ood) as f64);
        for target in [0.5, 0.95, 1.0] {
            let mut best = f64::NEG_INFINITY;
            for &mu in id.iter().chain(&ood) {
                if id.iter().filter(|&&v| v >= mu).count() as f64 >= target * n_id as f64 - 1e-12 {
                    best = best.max(mu);
                }
            }
            let scan = ood.iter().filter(|&&v| v >= best).count() as f64 / n_ood as f64;
            fpr_bad += usize::from(fpr_at_tpr(&s, target).unwrap() != scan);
        }
    }
    let e1 = ece(&CalibrationSample {
        confidences: vec![0.9, 0.9],
        correct: vec![true, false],
        n_bins: 1,
    })
    .unwrap();
    let e2 = ece(&CalibrationSample {
        confidences: vec![0.2, 0.3, 0.8, 0.9],
        correct: vec![false, true, true, true],
        n_bins: 2,
    })
    .unwrap();
    let ece_ok = (e1 - 0.4).abs() <= 1e-12 && (e2 - 0.2).abs() <= 1e-12;
    outcome(
        auroc_bad == 0 && fpr_bad == 0 && ece_ok,
        format!("{auroc_bad} AUROC and {fpr_bad} FPR mismatches on 100 tied samples, ECE fixtures {e1:.12} and {e2:.12}"),
    )
}

fn criterion_6() -> Outcome {
    let mut failures = 0;
    for seed in 0..100 {
        let fx = fixture(SMALL, seed);
        let text = fx.enc.text_features(&fx.omega).unwrap();
        for (fm, patches) in fx.batch.iter().map(|b| &b.features).zip(&fx.patches) {
            let msp = score_msp(fm, &text).unwrap();
            let odin = score_odin(patches, &text, 1.0, 0.0, &fx.enc.image).unwrap();
            let ok = (odin - msp).abs() <= 1e-12
                && score_glmcm(fm, &text, 1.0).unwrap() >= score_mcm(fm, &text, 1.0).unwrap()
                && score_energy(fm, &text, 1.0).unwrap() >= score_maxlogit(fm, &text).unwrap()
                && score_glmcm(fm, &text[..1], 1.0).unwrap() == 2.0;
            failures += usize::from(!ok);
        }
    }
    outcome(failures == 0, format!("400 images, {failures} identity violations"))
}

fn glmcm_mean(rows: &[sctlab_cli::report::MetricRow], method: &str) -> Option<(f64, f64)> {
    rows.iter()
        .find(|r| r.seed == "mean" && r.detector == "glmcm" && r.method == method)
        .map(|r| (r.fpr95, r.id_acc))
}

fn criterion_7(dir: &Path) -> Outcome {
    let cfg = ExperimentConfig::default();
    let start = Instant::now();
    let rows = match cmd_compare(&cfg, dir, &[LossKind::Locoop, LossKind::Sct], 5) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let elapsed = start.elapsed();
    let (Some((lf, la)), Some((sf, sa))) = (glmcm_mean(&rows, "locoop"), glmcm_mean(&rows, "sct-linear")) else {
        return outcome(false, "missing aggregate rows");
    };
    outcome(
        sf <= lf && (sa - la).abs() <= 0.02 && elapsed < Duration::from_secs(900),
        format!(
            "GL-MCM FPR95 sct {sf:.4} vs locoop {lf:.4}; ID acc sct {sa:.4} vs locoop {la:.4}; {elapsed:.2?}"
        ),
    )
}

fn criterion_8(dir: &Path) -> Outcome {
    let start = Instant::now();
    let rows = match cmd_cohort(&ExperimentConfig::default(), dir, 5) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let elapsed = start.elapsed();
    let mean = |c: &str| rows.iter().find(|r| r.seed == "mean" && r.cohort == c).map(|r| r.fpr95);
    let (Some(low), Some(high)) = (mean("low"), mean("high")) else {
        return outcome(false, "missing mean rows");
    };
    outcome(
        high >= low && elapsed < Duration::from_secs(900),
        format!("mean GL-MCM FPR95 high {high:.4} vs low {low:.4}; {elapsed:.2?}"),
    )
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn run_all_commands(cfg: &ExperimentConfig, dir: &Path) -> Result<(), sctlab_cli::CliError> {
    cmd_gen(cfg, dir)?;
    for kind in LossKind::ALL {
        cmd_train(cfg, dir, kind)?;
        cmd_eval(cfg, dir, kind, None)?;
    }
    cmd_compare(cfg, dir, &LossKind::ALL, 2)?;
    cmd_cohort(cfg, dir, 1)?;
    cmd_gradcheck(cfg, dir, 2, false)?;
    Ok(())
}

fn criterion_9(a: &Path, b: &Path) -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.train.epochs = 5;
    for dir in [a, b] {
        if let Err(e) = run_all_commands(&cfg, dir) {
            return outcome(false, e.to_string());
        }
    }
    let (sa, sb) = (snapshot(a), snapshot(b));
    let differing: Vec<&str> = sa
        .iter()
        .zip(&sb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    outcome(
        sa.len() == sb.len() && differing.is_empty(),
        format!("{} files from gen/train/eval/compare/cohort/gradcheck, differing: {differing:?}", sa.len()),
    )
}

fn main() -> ExitCode {
    // Honour `cargo test -- --list` and name filters without running anything heavy.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let tmp = |name: &str| tempfile::Builder::new().prefix(name).tempdir().unwrap();
    let (d1, d7, d8, d9a, d9b) = (tmp("c1"), tmp("c7"), tmp("c8"), tmp("c9a"), tmp("c9b"));
    let criteria: Vec<(&str, Criterion<'_>)> = vec![
        ("gradient correctness", Box::new(|| criterion_1(d1.path()))),
        ("objective reductions", Box::new(criterion_2)),
        ("modulation family", Box::new(criterion_3)),
        ("extraction oracle", Box::new(criterion_4)),
        ("metric oracles", Box::new(criterion_5)),
        ("scoring identities", Box::new(criterion_6)),
        ("directional benefit of modulation", Box::new(|| criterion_7(d7.path()))),
        ("uncertainty cohorts", Box::new(|| criterion_8(d8.path()))),
        ("determinism", Box::new(|| criterion_9(d9a.path(), d9b.path()))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let o = run();
        failed += usize::from(!o.passed);
        println!(
            "criterion {}: {} {name}: {}",
            i + 1,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!("acceptance: {} of 9 criteria passed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
