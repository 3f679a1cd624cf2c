//! Metrics and ablation support: ME/MAE/RMSE/RE reports, model and
//! physical-baseline evaluation over dataset partitions, and the grid and
//! ordering checks behind the comparison tables.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::datagen::Sample;
use crate::math;
use crate::nn::{FeMode, ModelSpec};
use crate::physics::{
    invert_position, CalibrationSet, FrequencyGrid, InversionOptions, PhysicsError,
};
use crate::train::{train, TrainConfig, TrainError, TrainHistory, TrainedModel};

#[derive(Debug, Clone, PartialEq)]
pub enum EvalError {
    EmptyInput,
    LengthMismatch { pred: usize, target: usize },
    NonPositiveStroke { stroke_mm: f64 },
    Physics(PhysicsError),
    Train(TrainError),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyInput => write!(f, "metrics need at least one sample"),
            Self::LengthMismatch { pred, target } => {
                write!(f, "{pred} predictions vs {target} targets")
            }
            Self::NonPositiveStroke { stroke_mm } => {
                write!(f, "stroke must be > 0, got {stroke_mm}")
            }
            Self::Physics(e) => write!(f, "{e}"),
            Self::Train(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for EvalError {}

impl From<PhysicsError> for EvalError {
    fn from(e: PhysicsError) -> Self {
        Self::Physics(e)
    }
}

impl From<TrainError> for EvalError {
    fn from(e: TrainError) -> Self {
        Self::Train(e)
    }
}

/// Accuracy summary of one (model, partition) pair. All position errors are
/// millimetres; RE is the percentage ratio of RMSE to the stroke.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub model: String,
    pub partition: String,
    pub n_samples: usize,
    pub me_mm: f64,
    pub mae_mm: f64,
    pub rmse_mm: f64,
    pub re_percent: f64,
}

/// ME/MAE/RMSE over prediction-target pairs, RE relative to the stroke.
pub fn metrics(pred_mm: &[f64], target_mm: &[f64], stroke_mm: f64) -> Result<MetricsReport, EvalError> {
    if pred_mm.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if pred_mm.len() != target_mm.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred_mm.len(),
            target: target_mm.len(),
        });
    }
    if !(stroke_mm > 0.0) {
        return Err(EvalError::NonPositiveStroke { stroke_mm });
    }
    let n = pred_mm.len() as f64;
    let mut me = 0.0;
    let mut mae = 0.0;
    let mut mse = 0.0;
    for (&p, &t) in pred_mm.iter().zip(target_mm) {
        let d = p - t;
        me += d;
        mae += d.abs();
        mse += d * d;
    }
    let rmse = math::sqrt(mse / n);
    Ok(MetricsReport {
        model: String::new(),
        partition: String::new(),
        n_samples: pred_mm.len(),
        me_mm: me / n,
        mae_mm: mae / n,
        rmse_mm: rmse,
        re_percent: 100.0 * rmse / stroke_mm,
    })
}

/// Runs a trained model over a partition and reports its metrics.
pub fn evaluate_trained(
    tm: &TrainedModel,
    samples: &[Sample],
    stroke_mm: f64,
) -> Result<MetricsReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let pred = tm.predict(samples)?;
    let target: Vec<f64> = samples.iter().map(|s| s.position_mm).collect();
    let mut report = metrics(&pred, &target, stroke_mm)?;
    report.model = tm.model.spec().name.clone();
    Ok(report)
}

/// Evaluates the analytic inverse over a partition.
///
/// The calibration passed here is deliberately the unperturbed base set:
/// the baseline runs with fixed calibration while the data drifts, which is
/// exactly the mismatch the learning models are supposed to absorb.
pub fn evaluate_physical(
    calib: &CalibrationSet,
    grid: &FrequencyGrid,
    samples: &[Sample],
    opts: &InversionOptions,
) -> Result<MetricsReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut pred = Vec::with_capacity(samples.len());
    for s in samples {
        pred.push(invert_position(&s.spectrum, calib, grid, opts)?.position_mm);
    }
    let target: Vec<f64> = samples.iter().map(|s| s.position_mm).collect();
    let mut report = metrics(&pred, &target, calib.stroke_mm())?;
    report.model = "physical".to_string();
    Ok(report)
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub model: String,
    pub framework: String,
    pub bn: bool,
    pub fe: Option<FeMode>,
    pub cvnn: bool,
    pub activation: String,
    /// Seed as text; aggregate rows carry "median".
    pub seed: String,
    pub partition: String,
    pub me_mm: f64,
    pub mae_mm: f64,
    pub rmse_mm: f64,
    pub re_percent: f64,
    pub params: usize,
    pub train_seconds: f64,
}

impl AblationRow {
    pub fn from_report(
        spec: &ModelSpec,
        report: &MetricsReport,
        seed: String,
        partition: String,
        params: usize,
        train_seconds: f64,
    ) -> Self {
        Self {
            model: spec.name.clone(),
            framework: spec.framework().to_string(),
            bn: spec.has_batchnorm(),
            fe: spec.fe_mode(),
            cvnn: spec.is_cvnn(),
            activation: spec.activation().name().to_string(),
            seed,
            partition,
            me_mm: report.me_mm,
            mae_mm: report.mae_mm,
            rmse_mm: report.rmse_mm,
            re_percent: report.re_percent,
            params,
            train_seconds,
        }
    }
}

/// Trains one (spec, seed) cell and evaluates it on `test_new`.
pub fn run_cell(
    bundle: &crate::datagen::DatasetBundle,
    spec: &ModelSpec,
    epochs: usize,
    seed: u64,
) -> Result<(AblationRow, TrainHistory), EvalError> {
    let cfg = TrainConfig::for_spec(spec, epochs, seed);
    let model = crate::nn::build_model(spec, seed).map_err(TrainError::Nn)?;
    let params = model.param_count();
    let (trained, history) = train(model, bundle, &cfg)?;
    let report = evaluate_trained(&trained, &bundle.test_new, bundle.stroke_mm)?;
    let row = AblationRow::from_report(
        spec,
        &report,
        format!("{seed}"),
        "test_new".to_string(),
        params,
        0.0,
    );
    Ok((row, history))
}

fn median_of(values: &mut Vec<f64>) -> f64 {
    values.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite metric"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Collapses per-seed rows of one model into a median row (median taken per
/// metric; timing summed -> reported as the median as well).
pub fn median_row(rows: &[AblationRow]) -> Option<AblationRow> {
    let first = rows.first()?;
    let mut row = first.clone();
    row.seed = "median".to_string();
    let pick = |f: fn(&AblationRow) -> f64| {
        let mut values: Vec<f64> = rows.iter().map(f).collect();
        median_of(&mut values)
    };
    row.me_mm = pick(|r| r.me_mm);
    row.mae_mm = pick(|r| r.mae_mm);
    row.rmse_mm = pick(|r| r.rmse_mm);
    row.re_percent = pick(|r| r.re_percent);
    row.train_seconds = pick(|r| r.train_seconds);
    Some(row)
}

/// Groups per-seed rows by model name and appends a median row per model,
/// preserving the first-seen model order.
pub fn with_medians(rows: &[AblationRow]) -> Vec<AblationRow> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<AblationRow>> = BTreeMap::new();
    for row in rows {
        if !groups.contains_key(&row.model) {
            order.push(row.model.clone());
        }
        groups.entry(row.model.clone()).or_default().push(row.clone());
    }
    let mut out = rows.to_vec();
    for name in order {
        if let Some(m) = median_row(&groups[&name]) {
            out.push(m);
        }
    }
    out
}

/// One qualitative ordering claim evaluated on median RMSE values.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderingCheck {
    pub label: String,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// Evaluates the comparison-grid ordering claims on median test_new RMSE:
/// frequency encoding and the complex models beat the plain MLP, the CNN
/// beats the plain MLP, the complex CNN with frequency encoding is best
/// overall, and every trained model beats the fixed-calibration physical
/// baseline.
pub fn check_orderings(
    median_rmse_by_model: &BTreeMap<String, f64>,
    physical_rmse: f64,
) -> Vec<OrderingCheck> {
    let get = |name: &str| median_rmse_by_model.get(name).copied();
    let mut checks = Vec::new();
    let mut pair = |label: &str, lhs: Option<f64>, rhs: Option<f64>, strict: bool| {
        if let (Some(l), Some(r)) = (lhs, rhs) {
            checks.push(OrderingCheck {
                label: label.to_string(),
                lhs: l,
                rhs: r,
                pass: if strict { l < r } else { l <= r },
            });
        }
    };
    pair("(a) mlp_fe < mlp_baseline", get("mlp_fe"), get("mlp_baseline"), true);
    pair(
        "(b) mlp_fe_cvnn < mlp_baseline",
        get("mlp_fe_cvnn"),
        get("mlp_baseline"),
        true,
    );
    pair("(c) cnn < mlp_baseline", get("cnn"), get("mlp_baseline"), true);
    if let Some(best) = get("cnn_fe_cvnn") {
        let min_other = median_rmse_by_model
            .iter()
            .filter(|(name, _)| name.as_str() != "cnn_fe_cvnn")
            .map(|(_, &v)| v)
            .fold(f64::INFINITY, f64::min);
        checks.push(OrderingCheck {
            label: "(d) cnn_fe_cvnn <= every other spec".to_string(),
            lhs: best,
            rhs: min_other,
            pass: best <= min_other,
        });
    }
    let worst_model = median_rmse_by_model
        .values()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    checks.push(OrderingCheck {
        label: "(e) every spec < physical baseline".to_string(),
        lhs: worst_model,
        rhs: physical_rmse,
        pass: worst_model < physical_rmse,
    });
    checks
}
