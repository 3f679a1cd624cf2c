//! Distributional and structural checks on the synthetic data generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scatterpos_core::datagen::{
    add_noise, generate_benchmark, generate_experiment, generate_positions, split_dataset,
    BenchmarkPreset, MotionKind, MotionProfile, ScenarioConfig,
};
use scatterpos_core::physics::{
    default_calibration, invert_position, InversionOptions, TransmissionSpectrum,
};

#[test]
fn positions_stay_in_range_over_random_configs() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for trial in 0..1_000_000u64 {
        let kind = match trial % 3 {
            0 => MotionKind::ConstantSweep,
            1 => MotionKind::Jitter,
            _ => MotionKind::Mixed,
        };
        let profile = MotionProfile::new(
            kind,
            rng.random_range(1.0..2000.0),
            rng.random_range(0.5..2.0),
            rng.random_range(2.0..10.0),
            rng.random_range(0.0..300.0),
            rng.random_range(0.05..10.0),
        )
        .unwrap();
        let stroke = rng.random_range(10.0..3000.0);
        for p in generate_positions(&profile, stroke, trial) {
            assert!((0.0..=stroke).contains(&p), "position {p} outside [0, {stroke}]");
        }
    }
}

#[test]
fn noise_standard_deviation_matches_target() {
    // A big flat spectrum (|t| = 1 everywhere) makes the target sigma exact.
    let n = 50_000;
    let spec = TransmissionSpectrum::new(vec![1.0; n], vec![0.0; n]).unwrap();
    let sigma_rel = 0.01;
    let noisy = add_noise(&spec, sigma_rel, 123);
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    for (clean, dirty) in [(spec.re(), noisy.re()), (spec.im(), noisy.im())] {
        for (c, d) in clean.iter().zip(dirty) {
            sum_sq += (d - c) * (d - c);
            count += 1;
        }
    }
    let target = sigma_rel * 1.0;
    let empirical = (sum_sq / count as f64).sqrt();
    assert!(
        (empirical - target).abs() / target < 0.05,
        "empirical sigma {empirical}, target {target}"
    );
}

#[test]
fn clean_experiment_satisfies_round_trip() {
    let (grid, calib) = default_calibration();
    let scenario = ScenarioConfig {
        temperature_c: 25.0,
        noise_sigma_rel: 0.0,
        calib_drift_scale: 0.0,
        profile: MotionProfile::new(MotionKind::Mixed, 300.0, 2.0, 5.0, 25.0, 1.5).unwrap(),
        rng_seed: 77,
    };
    let exp = generate_experiment(&calib, &grid, &scenario, "clean").unwrap();
    let opts = InversionOptions::default();
    for sample in &exp.samples {
        let inv = invert_position(&sample.spectrum, &calib, &grid, &opts).unwrap();
        assert!(
            (inv.position_mm - sample.position_mm).abs() < 1e-3,
            "expected {} got {}",
            sample.position_mm,
            inv.position_mm
        );
    }
}

#[test]
fn experiments_are_deterministic_and_distinct() {
    let (grid, calib) = default_calibration();
    let preset = BenchmarkPreset {
        n_experiments: 6,
        n_holdout: 1,
        samples_per_experiment: 20,
        noise_sigma_rel: 0.01,
        calib_drift_scale: 0.02,
        split_frac: 0.8,
    };
    let a = generate_benchmark(&calib, &grid, &preset, 99).unwrap();
    let b = generate_benchmark(&calib, &grid, &preset, 99).unwrap();
    assert_eq!(a, b);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            assert_ne!(a[i].samples, a[j].samples, "experiments {i} and {j} collide");
        }
    }
}

#[test]
fn bundle_preserves_the_sample_pool() {
    let (grid, calib) = default_calibration();
    let preset = BenchmarkPreset {
        n_experiments: 5,
        n_holdout: 2,
        samples_per_experiment: 30,
        noise_sigma_rel: 0.005,
        calib_drift_scale: 0.01,
        split_frac: 0.8,
    };
    let experiments = generate_benchmark(&calib, &grid, &preset, 4).unwrap();
    let total: usize = experiments.iter().map(|e| e.samples.len()).sum();
    let bundle = split_dataset(experiments, preset.n_holdout, preset.split_frac, 4).unwrap();
    assert_eq!(
        bundle.train.len() + bundle.test_random.len() + bundle.test_new.len(),
        total
    );
    assert_eq!(bundle.test_new.len(), 2 * 30);
    assert_eq!(bundle.manifest.pool_ids.len(), 3);
    assert_eq!(bundle.manifest.holdout_ids.len(), 2);
    // Paper-shaped volume ratio with equal experiments: about 10/2/1.
    let ratio = bundle.train.len() as f64 / bundle.test_random.len() as f64;
    assert!((ratio - 4.0).abs() < 0.2);
}

#[test]
fn paper_shape_preset_dimensions() {
    let preset = BenchmarkPreset::paper_shape();
    assert_eq!(preset.n_experiments, 20);
    assert_eq!(preset.n_holdout, 3);
    let scenarios = preset.scenarios(1).unwrap();
    assert_eq!(scenarios.len(), 20);
    for s in &scenarios {
        assert!((25.0..=95.0).contains(&s.temperature_c));
        assert_eq!(s.profile.sample_count(), 2500);
    }
}
