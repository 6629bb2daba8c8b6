mod common;

use common::{fixture, random_patches, SMALL};
use sctlab_core::encoders::{build_encoders, EncoderDims, FeatureMap};
use sctlab_core::numerics::{SeededRng, Vector};
use sctlab_core::tuning::PromptContext;
use sctlab_core::scoring::{
    react_threshold, score, score_energy, score_glmcm, score_maxlogit, score_mcm, score_msp, score_odin,
    score_react, DetectorConfig, ScoreInput,
};
use sctlab_core::synthdata::{featurize, gen_id, gen_ood, Prototypes, SynthConfig};

#[test]
fn score_identities_on_random_fixtures() {
    for seed in 0..100 {
        let fx = fixture(SMALL, seed, 1, 2);
        let text = fx.enc.text_features(&fx.omega).unwrap();
        let mut rng = SeededRng::stream(seed, 5);
        let patches = random_patches(&mut rng, &SMALL);
        let fm = fx.enc.encode_image(&patches).unwrap();
        let msp = score_msp(&fm, &text).unwrap();
        let odin = score_odin(&patches, &text, 1.0, 0.0, &fx.enc.image).unwrap();
        assert!((odin - msp).abs() <= 1e-12);
        assert!(score_glmcm(&fm, &text, 1.0).unwrap() >= score_mcm(&fm, &text, 1.0).unwrap());
        assert!(score_energy(&fm, &text, 1.0).unwrap() >= score_maxlogit(&fm, &text).unwrap());
        let flat = score_odin(&patches, &text, 1e9, 0.0, &fx.enc.image).unwrap();
        assert!((flat - 1.0 / SMALL.n_classes as f64).abs() <= 1e-6);
    }
}

#[test]
fn single_class_glmcm_is_two() {
    for seed in 0..20 {
        let fx = fixture(SMALL, seed, 1, 2);
        let text = fx.enc.text_features(&fx.omega).unwrap();
        for tau in [0.01, 1.0, 100.0] {
            assert_eq!(score_glmcm(&fx.batch[0].features, &text[..1], tau).unwrap(), 2.0);
        }
    }
}

#[test]
fn odin_perturbation_raises_confidence() {
    let mut raised = 0;
    for seed in 0..100 {
        let fx = fixture(SMALL, seed, 1, 2);
        let text = fx.enc.text_features(&fx.omega).unwrap();
        let patches = random_patches(&mut SeededRng::stream(seed, 6), &SMALL);
        let plain = score_odin(&patches, &text, 1000.0, 0.0, &fx.enc.image).unwrap();
        let pert = score_odin(&patches, &text, 1000.0, 0.01, &fx.enc.image).unwrap();
        if pert >= plain {
            raised += 1;
        }
    }
    assert!(raised >= 90, "{raised}/100");
}

fn unit(v: &[f64]) -> Vector<f64> {
    Vector::new(v.to_vec()).unwrap().normalized().unwrap()
}

#[test]
fn react_replayed_by_hand() {
    // Calibration coordinates 0.00, 0.08, ..., 0.72 pooled: the 90th percentile
    // interpolates between 0.64 and 0.72 at position 8.1.
    let calib: Vec<Vector<f64>> = (0..5)
        .map(|i| Vector::new(vec![0.16 * i as f64, 0.16 * i as f64 + 0.08]).unwrap())
        .collect();
    let clip = react_threshold(&calib, 90.0).unwrap();
    assert!((clip - 0.648).abs() <= 1e-12);

    let fm = FeatureMap {
        global: unit(&[0.6, 0.8]),
        locals: vec![unit(&[1.0, 0.0])],
        source_id: String::new(),
    };
    let text = vec![unit(&[1.0, 0.0]), unit(&[0.0, 1.0]), unit(&[-1.0, 0.0])];
    // Only 0.8 exceeds the clip, so the feature becomes (0.6, 0.648) before renormalizing.
    let n = (0.6f64 * 0.6 + 0.648 * 0.648).sqrt();
    let (a, b) = (0.6 / n, 0.648 / n);
    let expected = (a.exp() + b.exp() + (-a).exp()).ln();
    let got = score_react(&fm, &text, 90.0, &calib).unwrap();
    assert!((got - expected).abs() <= 1e-12);
}

#[test]
fn detectors_rank_id_above_far_ood() {
    // Few classes: at unit temperature the energy of many near-flat cosine
    // logits is dominated by the non-maximal classes.
    let dims = EncoderDims {
        n_classes: 4,
        ..EncoderDims::default()
    };
    let enc = build_encoders::<f64>(dims, 42).unwrap();
    let synth = SynthConfig {
        n_classes: 4,
        class_sep: 4.0,
        noise: 0.3,
        seed: 42,
        ..SynthConfig::default()
    };
    let protos = Prototypes::aligned(&synth, &enc).unwrap();
    let id = gen_id(&synth, &protos, 3, 2).unwrap();
    let ood = gen_ood(&synth, &protos, 60, 3).unwrap();
    let calib = gen_id(&synth, &protos, 2, 9).unwrap();
    let omega = PromptContext::zeros(16, dims.embed_dim).unwrap();
    let text = enc.text_features(&omega).unwrap();
    let calib_feats: Vec<Vector<f64>> = calib.iter().map(|e| featurize(e, &enc).unwrap().global).collect();

    let detectors = [
        DetectorConfig::Msp,
        DetectorConfig::Odin {
            temperature: 1000.0,
            epsilon: 0.0,
        },
        DetectorConfig::Odin {
            temperature: 1000.0,
            epsilon: 0.002,
        },
        DetectorConfig::Energy { temperature: 1.0 },
        DetectorConfig::React { percentile: 90.0 },
        DetectorConfig::Maxlogit,
        DetectorConfig::Mcm { tau: 1.0 },
        DetectorConfig::Glmcm { tau: 1.0 },
    ];
    for det in detectors {
        let clip = react_threshold(&calib_feats, 90.0).unwrap();
        let scores = |data: &[sctlab_core::synthdata::SynthExample]| -> Vec<f64> {
            data.iter()
                .map(|e| {
                    let fm = featurize(e, &enc).unwrap();
                    let input = ScoreInput {
                        features: &fm,
                        text_feats: &text,
                        patches: Some(&e.patches),
                        encoder: Some(&enc.image),
                        react_clip: Some(clip),
                    };
                    let s = score(&det, &input).unwrap();
                    assert!(s.is_finite());
                    s
                })
                .collect()
        };
        let (si, so) = (scores(&id), scores(&ood));
        let wins = si.iter().flat_map(|a| so.iter().map(move |b| a > b)).filter(|&w| w).count();
        let frac = wins as f64 / (si.len() * so.len()) as f64;
        assert!(frac >= 0.95, "{}: {frac}", det.label());
    }
}
