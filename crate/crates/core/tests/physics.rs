//! Oracle tests for the scattering forward model and the analytic inverse.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scatterpos_core::physics::{
    default_calibration, forward_transmission, invert_position, transmission_line_factor,
    wavenumber, CalibrationSet, FrequencyGrid, InversionOptions, Permittivity,
    SPEED_OF_LIGHT_M_S,
};

// Frozen with a 30-digit calculator: 2*pi*3e8/2.99792458e8.
const K_300MHZ_VACUUM: f64 = 6.287_535_065_855_045;
// 2*pi*1.5e9*sqrt(2.2)/2.99792458e8.
const K_1500MHZ_EPS22: f64 = 46.629_608_042_955_117;

#[test]
fn wavenumber_frozen_values() {
    let p1 = Permittivity::new(1.0, 0.0).unwrap();
    let k = wavenumber(3.0e8, &p1, 1.0).unwrap();
    assert!((k - K_300MHZ_VACUUM).abs() < 1e-9, "k = {k}");

    let p22 = Permittivity::new(2.2, 0.0).unwrap();
    let k = wavenumber(1.5e9, &p22, 1.0).unwrap();
    assert!((k - K_1500MHZ_EPS22).abs() < 1e-9, "k = {k}");
}

#[test]
fn wavenumber_monotone_in_frequency() {
    let p = Permittivity::new(2.2, 0.01).unwrap();
    let grid = FrequencyGrid::standard();
    let mut last = 0.0;
    for &f in grid.freqs_hz() {
        let k = wavenumber(f, &p, 1.0).unwrap();
        assert!(k > last);
        last = k;
    }
}

#[test]
fn line_factor_frozen_value() {
    // L = 1 m, eps'' = 0.01, k = 6.28728: magnitude e^{-0.02}, phase 12.57456.
    let t = transmission_line_factor(1000.0, 0.01, 6.28728).unwrap();
    let mag = (-0.02f64).exp();
    assert!((t.norm() - mag).abs() < 1e-12);
    assert!((mag - 0.980_198_673_306_755_3).abs() < 1e-15);
    let phase = 12.57456f64;
    let expect = Complex64::new(mag * phase.cos(), mag * phase.sin());
    assert!((t - expect).norm() < 1e-12);
    // Wrapped phase comes out positive just past two turns.
    let wrapped = phase - 4.0 * std::f64::consts::PI;
    assert!((t.im.atan2(t.re) - wrapped).abs() < 1e-9);
}

#[test]
fn line_factor_magnitude_non_increasing_in_position() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let eps_imag = rng.random_range(0.0..0.5);
        let k = rng.random_range(1.0..60.0);
        let mut last = f64::INFINITY;
        for step in 0..30 {
            let l = step as f64 * 70.0;
            let m = transmission_line_factor(l, eps_imag, k).unwrap().norm();
            assert!(m <= last + 1e-15);
            last = m;
        }
    }
}

#[test]
fn line_factor_phase_advances_linearly() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let k = rng.random_range(5.0..50.0);
        let l = rng.random_range(0.0..1800.0);
        let delta = rng.random_range(0.1..40.0);
        let a = transmission_line_factor(l, 0.003, k).unwrap();
        let b = transmission_line_factor(l + delta, 0.003, k).unwrap();
        let advance = (b / a).arg();
        let expect = 2.0 * k * delta * 1e-3;
        let diff = (advance - expect).rem_euclid(2.0 * std::f64::consts::PI);
        let wrapped = diff.min((2.0 * std::f64::consts::PI - diff).abs());
        assert!(wrapped < 1e-9, "phase advance off by {wrapped}");
    }
}

/// Straight-line reimplementation of the transmission equation, written
/// independently of the library path (std math, no shared helpers).
fn oracle_forward(
    l_mm: f64,
    freqs: &[f64],
    s21: &[Complex64],
    s33: &[Complex64],
    s23s13: &[Complex64],
    eps_real: f64,
    eps_imag: f64,
    mu_r: f64,
) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(freqs.len());
    for i in 0..freqs.len() {
        let k = 2.0 * std::f64::consts::PI * freqs[i] * (eps_real * mu_r).sqrt()
            / SPEED_OF_LIGHT_M_S;
        let l_m = l_mm / 1000.0;
        let exponent = Complex64::new(-2.0 * l_m * eps_imag, 2.0 * l_m * k);
        let t_of_l = exponent.exp();
        let t = s21[i] - s23s13[i] / (s33[i] - Complex64::new(1.0, 0.0) / t_of_l);
        out.push(t);
    }
    out
}

fn random_calibration(seed: u64, n: usize) -> (FrequencyGrid, CalibrationSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = FrequencyGrid::uniform(3.0e8, 1.5e9, n).unwrap();
    let mut polar = |lo: f64, hi: f64| {
        let mag = rng.random_range(lo..hi);
        let ph = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        Complex64::new(mag * ph.cos(), mag * ph.sin())
    };
    let s21: Vec<_> = (0..n).map(|_| polar(0.2, 0.9)).collect();
    let s33: Vec<_> = (0..n).map(|_| polar(0.2, 0.7)).collect();
    let s23s13: Vec<_> = (0..n).map(|_| polar(0.05, 0.5)).collect();
    let perm = Permittivity::new(2.2, 0.01).unwrap();
    let calib = CalibrationSet::new(s21, s33, s23s13, perm, 1.0, 1815.0).unwrap();
    (grid, calib)
}

#[test]
fn forward_matches_independent_oracle() {
    for seed in 0..20 {
        let (grid, calib) = random_calibration(seed, 121);
        let t = forward_transmission(700.0, &calib, &grid).unwrap();
        let oracle = oracle_forward(
            700.0,
            grid.freqs_hz(),
            calib.s21(),
            calib.s33(),
            calib.s23s13(),
            calib.permittivity().eps_real(),
            calib.permittivity().eps_imag(),
            calib.mu_r(),
        );
        for i in 0..grid.len() {
            let rel = (t.get(i) - oracle[i]).norm() / oracle[i].norm().max(1e-30);
            assert!(rel < 1e-12, "seed {seed} index {i}: rel err {rel}");
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let (grid, calib) = default_calibration();
    let a = forward_transmission(431.25, &calib, &grid).unwrap();
    let b = forward_transmission(431.25, &calib, &grid).unwrap();
    assert_eq!(a, b);
}

#[test]
fn inversion_round_trip_at_bounds() {
    let (grid, calib) = default_calibration();
    let opts = InversionOptions::default();
    for &l in &[0.0, 700.0, 1815.0] {
        let t = forward_transmission(l, &calib, &grid).unwrap();
        let inv = invert_position(&t, &calib, &grid, &opts).unwrap();
        assert!(
            (inv.position_mm - l).abs() < 1e-3,
            "L = {l}: got {}",
            inv.position_mm
        );
    }
}

#[test]
fn inversion_round_trip_sweep() {
    let (grid, calib) = default_calibration();
    let opts = InversionOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let l = rng.random_range(10.0..1805.0);
        let t = forward_transmission(l, &calib, &grid).unwrap();
        let inv = invert_position(&t, &calib, &grid, &opts).unwrap();
        worst = worst.max((inv.position_mm - l).abs());
    }
    assert!(worst < 1e-3, "worst round-trip error {worst} mm");
}

#[test]
fn inversion_magnitude_channel_agrees_without_noise() {
    let (grid, calib) = default_calibration();
    let t = forward_transmission(1234.5, &calib, &grid).unwrap();
    let inv = invert_position(&t, &calib, &grid, &InversionOptions::default()).unwrap();
    let mag = inv.magnitude_position_mm.expect("dissipative oil");
    assert!((mag - 1234.5).abs() < 1e-6, "magnitude channel {mag}");
}

#[test]
fn inversion_rejects_large_residual() {
    let (grid, calib) = default_calibration();
    let t = forward_transmission(900.0, &calib, &grid).unwrap();
    // Corrupt the spectrum far beyond anything the model can explain.
    let re: Vec<f64> = t.re().iter().map(|v| v + 10.0).collect();
    let bad = scatterpos_core::physics::TransmissionSpectrum::new(re, t.im().to_vec()).unwrap();
    let opts = InversionOptions {
        residual_reject: 1.0,
        ..InversionOptions::default()
    };
    let err = invert_position(&bad, &calib, &grid, &opts).unwrap_err();
    assert!(matches!(
        err,
        scatterpos_core::physics::PhysicsError::NoSolution { .. }
    ));
}

#[test]
fn inversion_detects_singular_input() {
    let (grid, calib) = default_calibration();
    // t == S21 exactly makes the per-frequency inversion singular.
    let t = scatterpos_core::physics::TransmissionSpectrum::from_complex(calib.s21()).unwrap();
    let err = invert_position(&t, &calib, &grid, &InversionOptions::default()).unwrap_err();
    assert!(matches!(
        err,
        scatterpos_core::physics::PhysicsError::Singularity { .. }
    ));
}
