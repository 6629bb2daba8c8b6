use sctlab_core::metrics::{auroc, ece, fpr95, fpr_at_tpr, threshold_at_tpr, CalibrationSample, ScoreSample};
use sctlab_core::numerics::SeededRng;

fn pair_count_auroc(id: &[f64], ood: &[f64]) -> f64 {
    let mut twice = 0u64;
    for &a in id {
        for &b in ood {
            twice += if a > b {
                2
            } else if a == b {
                1
            } else {
                0
            };
        }
    }
    twice as f64 / (2 * id.len() * ood.len()) as f64
}

/// Tries every distinct score and −∞; keeps the largest threshold meeting the target.
fn scan_fpr(id: &[f64], ood: &[f64], target: f64) -> f64 {
    let mut candidates: Vec<f64> = id.iter().chain(ood).copied().collect();
    candidates.push(f64::NEG_INFINITY);
    let mut best = f64::NEG_INFINITY;
    for &mu in &candidates {
        let hits = id.iter().filter(|&&s| s >= mu).count();
        if hits as f64 >= target * id.len() as f64 - 1e-12 && mu > best {
            best = mu;
        }
    }
    ood.iter().filter(|&&s| s >= best).count() as f64 / ood.len() as f64
}

/// Coarse integer scores so ties are frequent.
fn random_sample(rng: &mut SeededRng) -> (Vec<f64>, Vec<f64>) {
    let n_id = 1 + rng.below(200);
    let n_ood = 1 + rng.below(200);
    let levels = 1 + rng.below(30);
    let shift = rng.below(10) as f64;
    let id = (0..n_id).map(|_| rng.below(levels) as f64 + shift * 0.3).collect();
    let ood = (0..n_ood).map(|_| rng.below(levels) as f64).collect();
    (id, ood)
}

#[test]
fn auroc_equals_pair_counting() {
    let mut rng = SeededRng::new(1);
    for _ in 0..100 {
        let (id, ood) = random_sample(&mut rng);
        let s = ScoreSample::new(id.clone(), ood.clone()).unwrap();
        assert_eq!(auroc(&s).unwrap(), pair_count_auroc(&id, &ood));
    }
}

#[test]
fn auroc_invariant_under_increasing_transform() {
    let mut rng = SeededRng::new(2);
    for _ in 0..50 {
        let (id, ood) = random_sample(&mut rng);
        let f = |v: &Vec<f64>| v.iter().map(|x| (x * 0.7).exp() - 3.0).collect::<Vec<_>>();
        let a = auroc(&ScoreSample::new(id.clone(), ood.clone()).unwrap()).unwrap();
        let b = auroc(&ScoreSample::new(f(&id), f(&ood)).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn auroc_swap_complements_without_ties() {
    let mut rng = SeededRng::new(3);
    for _ in 0..50 {
        let (n_id, n_ood) = (1 + rng.below(50), 1 + rng.below(50));
        let id: Vec<f64> = rng.gaussian_vec(n_id, 1.0);
        let ood: Vec<f64> = rng.gaussian_vec(n_ood, 1.0);
        let a = auroc(&ScoreSample::new(id.clone(), ood.clone()).unwrap()).unwrap();
        let b = auroc(&ScoreSample::new(ood, id).unwrap()).unwrap();
        assert!((a + b - 1.0).abs() <= 1e-15);
    }
}

#[test]
fn fpr_equals_exhaustive_scan() {
    let mut rng = SeededRng::new(4);
    for _ in 0..100 {
        let (id, ood) = random_sample(&mut rng);
        let s = ScoreSample::new(id.clone(), ood.clone()).unwrap();
        for target in [0.05, 0.5, 0.9, 0.95, 1.0] {
            assert_eq!(fpr_at_tpr(&s, target).unwrap(), scan_fpr(&id, &ood, target), "target {target}");
        }
        assert_eq!(fpr95(&s).unwrap(), scan_fpr(&id, &ood, 0.95));
    }
}

#[test]
fn fpr_is_non_decreasing_in_target() {
    let mut rng = SeededRng::new(5);
    for _ in 0..50 {
        let (id, ood) = random_sample(&mut rng);
        let s = ScoreSample::new(id, ood).unwrap();
        let curve: Vec<f64> = (1..=100).map(|t| fpr_at_tpr(&s, t as f64 / 100.0).unwrap()).collect();
        assert!(curve.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn fpr_worked_example() {
    let s = ScoreSample::new(vec![0.9, 0.8, 0.7, 0.6, 0.5], vec![0.55, 0.4, 0.3]).unwrap();
    assert_eq!(threshold_at_tpr(&s, 0.95).unwrap(), 0.5);
    assert_eq!(fpr95(&s).unwrap(), 1.0 / 3.0);
}

#[test]
fn ece_fixtures() {
    let c = CalibrationSample {
        confidences: vec![0.9, 0.9],
        correct: vec![true, false],
        n_bins: 1,
    };
    assert!((ece(&c).unwrap() - 0.4).abs() <= 1e-12);
    let c = CalibrationSample {
        confidences: vec![0.2, 0.3, 0.8, 0.9],
        correct: vec![false, true, true, true],
        n_bins: 2,
    };
    assert!((ece(&c).unwrap() - 0.2).abs() <= 1e-12);
}

#[test]
fn ece_vanishes_when_calibrated() {
    // Bin (0.4, 0.6] holds confidence 0.5 at accuracy 1/2; bin (0.8, 1] holds 1.0 at accuracy 1.
    let c = CalibrationSample {
        confidences: vec![0.5, 0.5, 1.0, 1.0, 0.0],
        correct: vec![true, false, true, true, false],
        n_bins: 5,
    };
    assert_eq!(ece(&c).unwrap(), 0.0);
}

#[test]
fn empty_inputs_are_rejected() {
    assert!(ScoreSample::<f64>::new(vec![], vec![1.0]).is_err());
    assert!(ScoreSample::new(vec![1.0], vec![f64::NAN]).is_err());
}
