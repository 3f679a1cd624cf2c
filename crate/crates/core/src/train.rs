//! Training loop: AdamW with decoupled weight decay, a linear learning-rate
//! decay that starts at half of the epoch budget, seeded shuffling, early
//! stopping monitored on the random-split test partition, and best-epoch
//! parameter restoration.
//!
//! Targets are scaled by the stroke to [0, 1] and inputs are standardized
//! per feature with train-partition statistics; both switches live in
//! [`TrainConfig`] and the fitted [`Normalizer`] travels with the model.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Tape, Tensor};
use crate::datagen::{DatasetBundle, Sample};
use crate::math;
use crate::nn::{ComplexTensor, Model, ModelSpec, NnError};

const STREAM_SHUFFLE: u64 = 7;

/// Batch size used for plain forward passes during validation and inference.
const EVAL_BATCH: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    Config(String),
    EmptyPartition(&'static str),
    /// Loss became non-finite; named by epoch and batch index.
    NonFiniteLoss { epoch: usize, batch: usize },
    FeatureWidth { expected: usize, got: usize },
    Nn(NnError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(msg) => write!(f, "invalid training config: {msg}"),
            Self::EmptyPartition(name) => write!(f, "partition '{name}' is empty"),
            Self::NonFiniteLoss { epoch, batch } => {
                write!(f, "non-finite loss at epoch {epoch}, batch {batch}")
            }
            Self::FeatureWidth { expected, got } => {
                write!(f, "sample spectrum width {got}, model expects {expected}")
            }
            Self::Nn(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for TrainError {}

impl From<NnError> for TrainError {
    fn from(e: NnError) -> Self {
        Self::Nn(e)
    }
}

impl From<AutodiffError> for TrainError {
    fn from(e: AutodiffError) -> Self {
        Self::Nn(NnError::Autodiff(e))
    }
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub normalize_input: bool,
    pub normalize_target: bool,
}

impl TrainConfig {
    /// Library defaults: everything except epochs, batch size and seed.
    fn base(epochs: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 1e-4,
            eps: 1e-8,
            epochs,
            batch_size,
            early_stop_patience: 20,
            seed,
            normalize_input: true,
            normalize_target: true,
        }
    }

    /// Default configuration for a spec: batch 128 for MLPs, 64 for CNNs.
    pub fn for_spec(spec: &ModelSpec, epochs: usize, seed: u64) -> Self {
        let batch = if spec.framework() == "cnn" { 64 } else { 128 };
        Self::base(epochs, batch, seed)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0) {
            return Err(TrainError::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(TrainError::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if self.weight_decay < 0.0 || self.eps <= 0.0 {
            return Err(TrainError::Config("weight_decay >= 0 and eps > 0 required".into()));
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        if self.early_stop_patience == 0 {
            return Err(TrainError::Config("early_stop_patience must be >= 1".into()));
        }
        Ok(())
    }
}

/// First/second-moment accumulators of AdamW, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One AdamW update: bias-corrected moment estimates plus weight decay
/// decoupled from the gradient, `theta -= lr_t * (m_hat/(sqrt(v_hat)+eps)
/// + wd * theta)`.
pub fn adamw_step(
    params: &[Tensor],
    state: &mut AdamState,
    cfg: &TrainConfig,
    lr_t: f64,
) -> Result<(), TrainError> {
    if params.len() != state.m.len() {
        return Err(TrainError::Config(format!(
            "optimizer state for {} tensors, got {}",
            state.m.len(),
            params.len()
        )));
    }
    state.t += 1;
    let bias1 = 1.0 - math::powi(cfg.beta1, state.t as i32);
    let bias2 = 1.0 - math::powi(cfg.beta2, state.t as i32);
    for (i, p) in params.iter().enumerate() {
        let grad = p
            .grad()
            .ok_or(TrainError::Nn(NnError::Autodiff(AutodiffError::MissingGradient)))?;
        let mut values = p.values();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..values.len() {
            let g = grad[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            values[j] -= lr_t * (m_hat / (math::sqrt(v_hat) + cfg.eps) + cfg.weight_decay * values[j]);
        }
        p.set_values(&values)?;
    }
    Ok(())
}

/// Constant `base_lr` for the first half of the budget, then linear decay
/// to exactly zero at `total`. The half boundary is computed on integers.
pub fn lr_schedule(epoch: usize, total: usize, base_lr: f64) -> f64 {
    let half = total / 2;
    if epoch < half || total == 0 {
        base_lr
    } else {
        let denom = (total - half) as f64;
        base_lr * (total.saturating_sub(epoch)) as f64 / denom
    }
}

/// Input standardization and target scaling fitted on the train partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub stroke_mm: f64,
    pub normalize_target: bool,
}

impl Normalizer {
    fn fit(matrix: &[f64], width: usize, cfg: &TrainConfig, stroke_mm: f64) -> Self {
        let rows = matrix.len() / width;
        let mut mean = vec![0.0; width];
        let mut std = vec![1.0; width];
        if cfg.normalize_input {
            for row in matrix.chunks(width) {
                for (m, &v) in mean.iter_mut().zip(row.iter()) {
                    *m += v;
                }
            }
            for m in mean.iter_mut() {
                *m /= rows as f64;
            }
            let mut var = vec![0.0; width];
            for row in matrix.chunks(width) {
                for ((s, &v), &m) in var.iter_mut().zip(row.iter()).zip(mean.iter()) {
                    *s += (v - m) * (v - m);
                }
            }
            for (s, v) in std.iter_mut().zip(var.iter()) {
                let sd = math::sqrt(v / rows as f64);
                *s = if sd < 1e-12 { 1.0 } else { sd };
            }
        }
        Self {
            feature_mean: mean,
            feature_std: std,
            stroke_mm,
            normalize_target: cfg.normalize_target,
        }
    }

    fn apply_in_place(&self, matrix: &mut [f64]) {
        let width = self.feature_mean.len();
        for row in matrix.chunks_mut(width) {
            for ((v, &m), &s) in row.iter_mut().zip(&self.feature_mean).zip(&self.feature_std) {
                *v = (*v - m) / s;
            }
        }
    }

    fn target_scale(&self) -> f64 {
        if self.normalize_target {
            self.stroke_mm
        } else {
            1.0
        }
    }
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    CompletedAllEpochs,
    EarlyStopped { at_epoch: usize },
}

/// Per-epoch record of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_rmse_mm: Vec<f64>,
    pub lr: Vec<f64>,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    pub fn best_val_rmse_mm(&self) -> f64 {
        self.val_rmse_mm[self.best_epoch]
    }
}

/// A trained model bundled with the preprocessing it was trained under.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Model,
    pub normalizer: Normalizer,
}

impl TrainedModel {
    /// Positions in millimetres for a batch of samples.
    pub fn predict(&self, samples: &[Sample]) -> Result<Vec<f64>, TrainError> {
        let width = 2 * self.model.spec().input_len;
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(EVAL_BATCH) {
            let (mut matrix, _) = features_of(chunk, width)?;
            self.normalizer.apply_in_place(&mut matrix);
            let input = batch_input(&matrix, width, 0, chunk.len())?;
            let tape = Tape::new();
            let pred = self.model.forward_eval(&tape, &input)?;
            let scale = self.normalizer.target_scale();
            out.extend(pred.values().iter().map(|p| p * scale));
        }
        Ok(out)
    }
}

/// Flattens samples into a row-major feature matrix `[n, 2L]` (re then im)
/// and the positions in mm.
fn features_of(samples: &[Sample], width: usize) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
    let mut matrix = Vec::with_capacity(samples.len() * width);
    let mut targets = Vec::with_capacity(samples.len());
    for s in samples {
        if 2 * s.spectrum.len() != width {
            return Err(TrainError::FeatureWidth {
                expected: width,
                got: 2 * s.spectrum.len(),
            });
        }
        matrix.extend_from_slice(s.spectrum.re());
        matrix.extend_from_slice(s.spectrum.im());
        targets.push(s.position_mm);
    }
    Ok((matrix, targets))
}

/// Gathers rows `rows[start..start+count]` of the feature matrix into the
/// complex model input.
fn row_gather(
    matrix: &[f64],
    width: usize,
    rows: &[usize],
) -> Result<ComplexTensor, TrainError> {
    let half = width / 2;
    let mut re = Vec::with_capacity(rows.len() * half);
    let mut im = Vec::with_capacity(rows.len() * half);
    for &r in rows {
        let row = &matrix[r * width..(r + 1) * width];
        re.extend_from_slice(&row[..half]);
        im.extend_from_slice(&row[half..]);
    }
    Ok(ComplexTensor::new(
        Tensor::new(&[rows.len(), half], re).map_err(NnError::Autodiff)?,
        Tensor::new(&[rows.len(), half], im).map_err(NnError::Autodiff)?,
    )?)
}

/// Contiguous variant of [`row_gather`] for evaluation sweeps.
fn batch_input(
    matrix: &[f64],
    width: usize,
    start: usize,
    count: usize,
) -> Result<ComplexTensor, TrainError> {
    let rows: Vec<usize> = (start..start + count).collect();
    row_gather(matrix, width, &rows)
}

/// RMSE in millimetres of the model over a prepared feature matrix.
fn rmse_mm(
    model: &Model,
    matrix: &[f64],
    targets_mm: &[f64],
    width: usize,
    scale: f64,
) -> Result<f64, TrainError> {
    let n = targets_mm.len();
    let mut sum_sq = 0.0;
    let mut start = 0;
    while start < n {
        let count = EVAL_BATCH.min(n - start);
        let input = batch_input(matrix, width, start, count)?;
        let tape = Tape::new();
        let pred = model.forward_eval(&tape, &input)?;
        for (p, &t) in pred.values().iter().zip(&targets_mm[start..start + count]) {
            let diff = p * scale - t;
            sum_sq += diff * diff;
        }
        start += count;
    }
    Ok(math::sqrt(sum_sq / n as f64))
}

/// Trains a freshly built model on a dataset bundle.
///
/// Early stopping monitors RMSE on `test_random` after every epoch (the
/// held-out `test_new` partition is never touched) and the best epoch's
/// state is restored before returning.
pub fn train(
    model: Model,
    bundle: &DatasetBundle,
    cfg: &TrainConfig,
) -> Result<(TrainedModel, TrainHistory), TrainError> {
    cfg.validate()?;
    if bundle.train.is_empty() {
        return Err(TrainError::EmptyPartition("train"));
    }
    if bundle.test_random.is_empty() {
        return Err(TrainError::EmptyPartition("test_random"));
    }
    let mut model = model;
    let width = 2 * model.spec().input_len;
    let (mut x_train, y_train_mm) = features_of(&bundle.train, width)?;
    let normalizer = Normalizer::fit(&x_train, width, cfg, bundle.stroke_mm);
    normalizer.apply_in_place(&mut x_train);
    let (mut x_val, y_val_mm) = features_of(&bundle.test_random, width)?;
    normalizer.apply_in_place(&mut x_val);

    let scale = normalizer.target_scale();
    let y_train: Vec<f64> = y_train_mm.iter().map(|&t| t / scale).collect();

    let params = model.parameters();
    let mut adam = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_SHUFFLE);

    let n = y_train.len();
    let mut indices: Vec<usize> = (0..n).collect();
    let mut history = TrainHistory {
        train_loss: Vec::with_capacity(cfg.epochs),
        val_rmse_mm: Vec::with_capacity(cfg.epochs),
        lr: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
        stop_reason: StopReason::CompletedAllEpochs,
    };
    let mut best_val = f64::INFINITY;
    let mut best_state: Vec<f64> = model.state_vector();

    for epoch in 0..cfg.epochs {
        let lr_t = lr_schedule(epoch, cfg.epochs, cfg.lr);
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (batch_idx, chunk) in indices.chunks(cfg.batch_size).enumerate() {
            // Batch statistics are undefined for one sample; a trailing
            // singleton is dropped.
            if chunk.len() == 1 {
                continue;
            }
            let input = row_gather(&x_train, width, chunk)?;
            let target_vals: Vec<f64> = chunk.iter().map(|&r| y_train[r]).collect();
            let target = Tensor::new(&[chunk.len(), 1], target_vals).map_err(NnError::Autodiff)?;
            let tape = Tape::new();
            let pred = model.forward_train(&tape, &input)?;
            let loss = tape
                .mse_loss(&pred, &target)
                .map_err(|e| match e {
                    AutodiffError::NonFinite { .. } => TrainError::NonFiniteLoss {
                        epoch,
                        batch: batch_idx,
                    },
                    other => TrainError::from(other),
                })?;
            let loss_value = loss.values()[0];
            if !loss_value.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            tape.backward(&loss).map_err(NnError::Autodiff)?;
            adamw_step(&params, &mut adam, cfg, lr_t)?;
            for p in &params {
                p.zero_grad();
            }
            loss_sum += loss_value * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_loss = if seen > 0 { loss_sum / seen as f64 } else { 0.0 };
        let val = rmse_mm(&model, &x_val, &y_val_mm, width, scale)?;
        history.train_loss.push(train_loss);
        history.val_rmse_mm.push(val);
        history.lr.push(lr_t);

        if val < best_val {
            best_val = val;
            history.best_epoch = epoch;
            best_state = model.state_vector();
        } else if epoch - history.best_epoch >= cfg.early_stop_patience {
            history.stop_reason = StopReason::EarlyStopped { at_epoch: epoch };
            break;
        }
    }

    model.load_state(&best_state)?;
    Ok((TrainedModel { model, normalizer }, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_pinned_points() {
        assert_eq!(lr_schedule(0, 100, 1e-3), 1e-3);
        assert_eq!(lr_schedule(49, 100, 1e-3), 1e-3);
        assert_eq!(lr_schedule(50, 100, 1e-3), 1e-3);
        assert!((lr_schedule(75, 100, 1e-3) - 5e-4).abs() < 1e-18);
        assert_eq!(lr_schedule(100, 100, 1e-3), 0.0);
    }

    #[test]
    fn lr_schedule_non_increasing_to_zero() {
        for total in [1usize, 2, 3, 7, 100, 151] {
            let mut last = f64::INFINITY;
            for e in 0..=total {
                let lr = lr_schedule(e, total, 1e-3);
                assert!(lr <= last + 1e-18, "total {total} epoch {e}");
                last = lr;
            }
            assert_eq!(lr_schedule(total, total, 1e-3), 0.0);
        }
    }

    #[test]
    fn adamw_zero_grad_no_decay_is_identity() {
        let p = Tensor::param(&[2], vec![1.0, -2.0]).unwrap();
        p.zero_grad();
        // Force a gradient buffer of zeros.
        {
            let tape = Tape::new();
            let s = tape.sum(&tape.scale(&p, 0.0).unwrap()).unwrap();
            tape.backward(&s).unwrap();
        }
        let params = [p.clone()];
        let mut adam = AdamState::new(&params);
        let mut cfg = TrainConfig::base(1, 1, 0);
        cfg.weight_decay = 0.0;
        adamw_step(&params, &mut adam, &cfg, 1e-3).unwrap();
        assert_eq!(p.values(), vec![1.0, -2.0]);
    }

    #[test]
    fn adamw_first_step_hand_value() {
        let p = Tensor::param(&[1], vec![0.0]).unwrap();
        {
            // Gradient of exactly 1.
            let tape = Tape::new();
            let s = tape.sum(&tape.scale(&p, 1.0).unwrap()).unwrap();
            tape.backward(&s).unwrap();
        }
        let params = [p.clone()];
        let mut adam = AdamState::new(&params);
        let mut cfg = TrainConfig::base(1, 1, 0);
        cfg.weight_decay = 0.0;
        adamw_step(&params, &mut adam, &cfg, 1e-3).unwrap();
        let expected = -(1e-3 / (1.0 + 1e-8));
        assert!(
            (p.values()[0] - expected).abs() < 1e-12,
            "theta = {}",
            p.values()[0]
        );
    }

    #[test]
    fn adamw_pure_decoupled_decay() {
        let p = Tensor::param(&[1], vec![1.0]).unwrap();
        {
            let tape = Tape::new();
            let s = tape.sum(&tape.scale(&p, 0.0).unwrap()).unwrap();
            tape.backward(&s).unwrap();
        }
        let params = [p.clone()];
        let mut adam = AdamState::new(&params);
        let mut cfg = TrainConfig::base(1, 1, 0);
        cfg.weight_decay = 0.1;
        adamw_step(&params, &mut adam, &cfg, 1e-3).unwrap();
        assert!((p.values()[0] - 0.9999).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let spec = crate::nn::spec_by_name("mlp_baseline").unwrap();
        assert_eq!(TrainConfig::for_spec(&spec, 10, 0).batch_size, 128);
        let cnn = crate::nn::spec_by_name("cnn").unwrap();
        assert_eq!(TrainConfig::for_spec(&cnn, 10, 0).batch_size, 64);
        let mut bad = TrainConfig::base(0, 1, 0);
        assert!(bad.validate().is_err());
        bad = TrainConfig::base(1, 1, 0);
        bad.lr = 0.0;
        assert!(bad.validate().is_err());
    }
}
