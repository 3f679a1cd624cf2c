//! Synthetic experiment generation and dataset splitting.
//!
//! An experiment plays a motion profile on the cylinder, drifts the base
//! calibration (temperature acting on the oil permittivity, a smooth random
//! perturbation acting on the scattering curves) and records the noisy
//! transmission spectrum at every sampled position. Experiments are then
//! split into train / random-split test / new-experiment test partitions,
//! where the last one holds out whole experiments.
//!
//! Everything is a pure function of its inputs and a 64-bit seed. The
//! generator is ChaCha8 with one fixed stream per purpose, so experiments
//! can be produced in parallel and still match sequential generation
//! bit for bit.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::math;
use crate::physics::{
    forward_transmission, CalibrationSet, FrequencyGrid, PhysicsError, TransmissionSpectrum,
};

/// Name of the pseudo-random generator recorded in manifests.
pub const RNG_ALGORITHM: &str = "chacha8";

/// Permittivity drift per degree Celsius away from 25 degrees.
pub const TEMPERATURE_DRIFT_PER_C: f64 = -5e-4;

/// Degree of the smooth random polynomial perturbing the S-curves.
const DRIFT_POLY_DEGREE: usize = 3;

// ChaCha stream ids, one per consumer of a scenario seed.
const STREAM_POSITIONS: u64 = 1;
const STREAM_DRIFT: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_SPLIT: u64 = 4;
const STREAM_SCENARIO: u64 = 5;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataError {
    InvalidProfile(String),
    InvalidScenario(String),
    /// Temperature drift drove eps_real to zero or below.
    DriftCollapse { eps_real: f64 },
    HoldoutTooLarge { n_holdout: usize, available: usize },
    BadSplitFraction { frac: f64 },
    NoExperiments,
    /// Experiments in one split must share a stroke.
    InconsistentStroke,
    Physics(PhysicsError),
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidProfile(msg) => write!(f, "invalid motion profile: {msg}"),
            Self::InvalidScenario(msg) => write!(f, "invalid scenario: {msg}"),
            Self::DriftCollapse { eps_real } => {
                write!(f, "calibration drift produced eps_real = {eps_real} <= 0")
            }
            Self::HoldoutTooLarge { n_holdout, available } => write!(
                f,
                "cannot hold out {n_holdout} of {available} experiments"
            ),
            Self::BadSplitFraction { frac } => {
                write!(f, "split fraction must be in (0, 1), got {frac}")
            }
            Self::NoExperiments => write!(f, "no experiments to split"),
            Self::InconsistentStroke => write!(f, "experiments disagree on stroke"),
            Self::Physics(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for DataError {}

impl From<PhysicsError> for DataError {
    fn from(e: PhysicsError) -> Self {
        Self::Physics(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionKind {
    /// Triangle sweep between the end stops at constant speed.
    ConstantSweep,
    /// Small sinusoid riding on a slowly sweeping centre.
    Jitter,
    /// A sweep segment followed by a jitter segment.
    Mixed,
}

/// How the piston moves during one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionProfile {
    kind: MotionKind,
    speed_mm_s: f64,
    duration_s: f64,
    sample_rate_hz: f64,
    jitter_amplitude_mm: f64,
    jitter_period_s: f64,
}

impl MotionProfile {
    pub fn new(
        kind: MotionKind,
        speed_mm_s: f64,
        duration_s: f64,
        sample_rate_hz: f64,
        jitter_amplitude_mm: f64,
        jitter_period_s: f64,
    ) -> Result<Self, DataError> {
        let positive = [
            ("speed_mm_s", speed_mm_s),
            ("duration_s", duration_s),
            ("sample_rate_hz", sample_rate_hz),
            ("jitter_period_s", jitter_period_s),
        ];
        for (name, v) in positive {
            if !v.is_finite() || v <= 0.0 {
                return Err(DataError::InvalidProfile(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        if !jitter_amplitude_mm.is_finite() || jitter_amplitude_mm < 0.0 {
            return Err(DataError::InvalidProfile(format!(
                "jitter_amplitude_mm must be >= 0, got {jitter_amplitude_mm}"
            )));
        }
        let profile = Self {
            kind,
            speed_mm_s,
            duration_s,
            sample_rate_hz,
            jitter_amplitude_mm,
            jitter_period_s,
        };
        if profile.sample_count() < 1 {
            return Err(DataError::InvalidProfile(
                "duration * sample_rate must yield at least one sample".to_string(),
            ));
        }
        Ok(profile)
    }

    pub fn kind(&self) -> MotionKind {
        self.kind
    }

    pub fn sample_count(&self) -> usize {
        math::floor(self.duration_s * self.sample_rate_hz) as usize
    }
}

/// Environmental and acquisition settings of one experiment. The seed fully
/// determines the generated data.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub temperature_c: f64,
    pub noise_sigma_rel: f64,
    pub calib_drift_scale: f64,
    pub profile: MotionProfile,
    pub rng_seed: u64,
}

impl ScenarioConfig {
    fn validate(&self) -> Result<(), DataError> {
        if !self.noise_sigma_rel.is_finite() || self.noise_sigma_rel < 0.0 {
            return Err(DataError::InvalidScenario(format!(
                "noise_sigma_rel must be >= 0, got {}",
                self.noise_sigma_rel
            )));
        }
        if !self.calib_drift_scale.is_finite() || self.calib_drift_scale < 0.0 {
            return Err(DataError::InvalidScenario(format!(
                "calib_drift_scale must be >= 0, got {}",
                self.calib_drift_scale
            )));
        }
        if !self.temperature_c.is_finite() {
            return Err(DataError::InvalidScenario(
                "temperature must be finite".to_string(),
            ));
        }
        Ok(())
    }
}

/// One labelled data point.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub position_mm: f64,
    pub spectrum: TransmissionSpectrum,
}

/// All samples recorded under one scenario, sharing one drifted calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub id: String,
    pub scenario: ScenarioConfig,
    pub samples: Vec<Sample>,
    pub stroke_mm: f64,
}

/// Which experiments went where, and with what seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitManifest {
    pub seed: u64,
    pub rng_algorithm: String,
    /// Experiments whose samples were split into train / test_random.
    pub pool_ids: Vec<String>,
    /// Whole experiments held out as test_new.
    pub holdout_ids: Vec<String>,
}

/// The three partitions of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub train: Vec<Sample>,
    pub test_random: Vec<Sample>,
    pub test_new: Vec<Sample>,
    pub manifest: SplitManifest,
    pub stroke_mm: f64,
}

impl DatasetBundle {
    pub fn partition(&self, name: &str) -> Option<&[Sample]> {
        match name {
            "train" => Some(&self.train),
            "test_random" => Some(&self.test_random),
            "test_new" => Some(&self.test_new),
            _ => None,
        }
    }
}

fn triangle(distance_mm: f64, stroke_mm: f64) -> f64 {
    let period = 2.0 * stroke_mm;
    let d = distance_mm - period * math::floor(distance_mm / period);
    if d <= stroke_mm {
        d
    } else {
        period - d
    }
}

/// Piston positions sampled at the profile's rate, clamped to [0, stroke].
/// The seed only randomizes the jitter phase; sweeps are deterministic.
pub fn generate_positions(profile: &MotionProfile, stroke_mm: f64, seed: u64) -> Vec<f64> {
    let n = profile.sample_count();
    let mut rng = stream_rng(seed, STREAM_POSITIONS);
    let phase: f64 = rng.random_range(0.0..2.0 * core::f64::consts::PI);
    let positions_for = |kind: MotionKind, count: usize, out: &mut Vec<f64>| {
        for i in 0..count {
            let t = i as f64 / profile.sample_rate_hz;
            let centre = triangle(profile.speed_mm_s * t, stroke_mm);
            let p = match kind {
                MotionKind::ConstantSweep => centre,
                MotionKind::Jitter | MotionKind::Mixed => {
                    centre
                        + profile.jitter_amplitude_mm
                            * math::sin(
                                2.0 * core::f64::consts::PI * t / profile.jitter_period_s + phase,
                            )
                }
            };
            out.push(p.clamp(0.0, stroke_mm));
        }
    };
    let mut out = Vec::with_capacity(n);
    match profile.kind {
        MotionKind::ConstantSweep => positions_for(MotionKind::ConstantSweep, n, &mut out),
        MotionKind::Jitter => positions_for(MotionKind::Jitter, n, &mut out),
        MotionKind::Mixed => {
            positions_for(MotionKind::ConstantSweep, n / 2, &mut out);
            positions_for(MotionKind::Jitter, n - n / 2, &mut out);
        }
    }
    out
}

/// Applies the scenario's temperature and random drift to a calibration.
///
/// The permittivity scales by `1 + alpha * (T - 25)`; every S-curve is
/// multiplied by `1 + scale * g(x)` where `g` is one random degree-3
/// polynomial over normalized frequency shared by the three curves. S33 is
/// rescaled if the perturbation pushed its magnitude to one or beyond.
pub fn drift_calibration(
    base: &CalibrationSet,
    scenario: &ScenarioConfig,
) -> Result<CalibrationSet, DataError> {
    scenario.validate()?;
    let factor = 1.0 + TEMPERATURE_DRIFT_PER_C * (scenario.temperature_c - 25.0);
    let eps_real = base.permittivity().eps_real() * factor;
    let eps_imag = base.permittivity().eps_imag() * factor;
    if eps_real <= 0.0 {
        return Err(DataError::DriftCollapse { eps_real });
    }
    let perm = crate::physics::Permittivity::new(eps_real, eps_imag.max(0.0))
        .map_err(DataError::Physics)?;

    let mut rng = stream_rng(scenario.rng_seed, STREAM_DRIFT);
    let coeffs: Vec<f64> = (0..=DRIFT_POLY_DEGREE)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let n = base.len();
    let gains: Vec<f64> = (0..n)
        .map(|i| {
            let x = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            let mut g = 0.0;
            for &c in coeffs.iter().rev() {
                g = g * x + c;
            }
            1.0 + scenario.calib_drift_scale * g
        })
        .collect();

    let apply = |arr: &[num_complex::Complex64]| -> Vec<num_complex::Complex64> {
        arr.iter().zip(&gains).map(|(z, &g)| z * g).collect()
    };
    let s21 = apply(base.s21());
    let mut s33 = apply(base.s33());
    let s23s13 = apply(base.s23s13());

    let max_s33 = s33.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    if max_s33 >= 1.0 {
        let shrink = 0.999 / max_s33;
        for z in &mut s33 {
            *z *= shrink;
        }
    }
    CalibrationSet::new(s21, s33, s23s13, perm, base.mu_r(), base.stroke_mm())
        .map_err(DataError::Physics)
}

fn median_magnitude(spec: &TransmissionSpectrum) -> f64 {
    let mut mags: Vec<f64> = (0..spec.len()).map(|i| spec.get(i).norm()).collect();
    mags.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite magnitudes"));
    let n = mags.len();
    if n % 2 == 1 {
        mags[n / 2]
    } else {
        0.5 * (mags[n / 2 - 1] + mags[n / 2])
    }
}

fn add_noise_with_rng(
    spec: &TransmissionSpectrum,
    sigma_rel: f64,
    rng: &mut ChaCha8Rng,
) -> TransmissionSpectrum {
    if sigma_rel == 0.0 {
        return spec.clone();
    }
    let sigma = sigma_rel * median_magnitude(spec);
    let perturb = |values: &[f64], rng: &mut ChaCha8Rng| -> Vec<f64> {
        values
            .iter()
            .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let re = perturb(spec.re(), rng);
    let im = perturb(spec.im(), rng);
    TransmissionSpectrum::new(re, im).expect("noise preserves finiteness")
}

/// Adds i.i.d. Gaussian noise with standard deviation
/// `sigma_rel * median(|t_i|)` to the real and imaginary parts.
pub fn add_noise(spec: &TransmissionSpectrum, sigma_rel: f64, seed: u64) -> TransmissionSpectrum {
    let mut rng = stream_rng(seed, STREAM_NOISE);
    add_noise_with_rng(spec, sigma_rel, &mut rng)
}

/// Runs one scenario end to end: positions, drifted calibration, forward
/// model, measurement noise.
pub fn generate_experiment(
    base: &CalibrationSet,
    grid: &FrequencyGrid,
    scenario: &ScenarioConfig,
    id: &str,
) -> Result<Experiment, DataError> {
    scenario.validate()?;
    let drifted = drift_calibration(base, scenario)?;
    let positions = generate_positions(&scenario.profile, base.stroke_mm(), scenario.rng_seed);
    let mut noise_rng = stream_rng(scenario.rng_seed, STREAM_NOISE);
    let mut samples = Vec::with_capacity(positions.len());
    for position_mm in positions {
        let clean = forward_transmission(position_mm, &drifted, grid)?;
        let spectrum = add_noise_with_rng(&clean, scenario.noise_sigma_rel, &mut noise_rng);
        samples.push(Sample {
            position_mm,
            spectrum,
        });
    }
    Ok(Experiment {
        id: id.to_string(),
        scenario: scenario.clone(),
        samples,
        stroke_mm: base.stroke_mm(),
    })
}

/// Holds out `n_holdout` whole experiments as test_new, then splits the
/// remaining samples `split_frac / (1 - split_frac)` into train/test_random.
pub fn split_dataset(
    experiments: Vec<Experiment>,
    n_holdout: usize,
    split_frac: f64,
    seed: u64,
) -> Result<DatasetBundle, DataError> {
    if experiments.is_empty() {
        return Err(DataError::NoExperiments);
    }
    if n_holdout >= experiments.len() {
        return Err(DataError::HoldoutTooLarge {
            n_holdout,
            available: experiments.len(),
        });
    }
    if !(split_frac > 0.0 && split_frac < 1.0) {
        return Err(DataError::BadSplitFraction { frac: split_frac });
    }
    let stroke_mm = experiments[0].stroke_mm;
    if experiments.iter().any(|e| e.stroke_mm != stroke_mm) {
        return Err(DataError::InconsistentStroke);
    }

    let mut rng = stream_rng(seed, STREAM_SPLIT);
    let holdout = rand::seq::index::sample(&mut rng, experiments.len(), n_holdout);
    let mut is_holdout = alloc::vec![false; experiments.len()];
    for idx in holdout.iter() {
        is_holdout[idx] = true;
    }

    let mut pool_ids = Vec::new();
    let mut holdout_ids = Vec::new();
    let mut pool_samples = Vec::new();
    let mut test_new = Vec::new();
    for (i, exp) in experiments.into_iter().enumerate() {
        if is_holdout[i] {
            holdout_ids.push(exp.id);
            test_new.extend(exp.samples);
        } else {
            pool_ids.push(exp.id);
            pool_samples.extend(exp.samples);
        }
    }

    pool_samples.shuffle(&mut rng);
    let n_train = math::round(pool_samples.len() as f64 * split_frac) as usize;
    let test_random = pool_samples.split_off(n_train.min(pool_samples.len()));
    let train = pool_samples;

    Ok(DatasetBundle {
        train,
        test_random,
        test_new,
        manifest: SplitManifest {
            seed,
            rng_algorithm: RNG_ALGORITHM.to_string(),
            pool_ids,
            holdout_ids,
        },
        stroke_mm,
    })
}

/// Desk-scale analogue of the paper-sized corpus: 20 experiments of ~2500
/// samples with 3 held out, 1% measurement noise and 2% calibration drift.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkPreset {
    pub n_experiments: usize,
    pub n_holdout: usize,
    pub samples_per_experiment: usize,
    pub noise_sigma_rel: f64,
    pub calib_drift_scale: f64,
    pub split_frac: f64,
}

impl BenchmarkPreset {
    pub fn paper_shape() -> Self {
        Self {
            n_experiments: 20,
            n_holdout: 3,
            samples_per_experiment: 2500,
            noise_sigma_rel: 0.01,
            calib_drift_scale: 0.02,
            split_frac: 0.8,
        }
    }

    /// Scenario list for this preset. Temperatures span 25..95 degrees,
    /// motion kinds cycle through sweep/jitter/mixed, speeds and jitter
    /// shapes vary under the master seed.
    pub fn scenarios(&self, master_seed: u64) -> Result<Vec<ScenarioConfig>, DataError> {
        let mut rng = stream_rng(master_seed, STREAM_SCENARIO);
        let sample_rate_hz = 10.0;
        let duration_s = self.samples_per_experiment as f64 / sample_rate_hz;
        (0..self.n_experiments)
            .map(|i| {
                let frac = if self.n_experiments > 1 {
                    i as f64 / (self.n_experiments - 1) as f64
                } else {
                    0.0
                };
                let kind = match i % 3 {
                    0 => MotionKind::ConstantSweep,
                    1 => MotionKind::Jitter,
                    _ => MotionKind::Mixed,
                };
                let profile = MotionProfile::new(
                    kind,
                    rng.random_range(60.0..420.0),
                    duration_s,
                    sample_rate_hz,
                    rng.random_range(10.0..40.0),
                    rng.random_range(2.0..8.0),
                )?;
                Ok(ScenarioConfig {
                    temperature_c: 25.0 + 70.0 * frac,
                    noise_sigma_rel: self.noise_sigma_rel,
                    calib_drift_scale: self.calib_drift_scale,
                    profile,
                    rng_seed: rng.random::<u64>(),
                })
            })
            .collect()
    }
}

/// Generates every experiment of a preset under one master seed.
pub fn generate_benchmark(
    base: &CalibrationSet,
    grid: &FrequencyGrid,
    preset: &BenchmarkPreset,
    master_seed: u64,
) -> Result<Vec<Experiment>, DataError> {
    let scenarios = preset.scenarios(master_seed)?;
    scenarios
        .iter()
        .enumerate()
        .map(|(i, scenario)| generate_experiment(base, grid, scenario, &format!("exp{i:02}")))
        .collect()
}
