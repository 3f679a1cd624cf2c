//! On-disk formats: dataset bundles, model checkpoints, calibration files
//! and CSV reports. Binary payloads are little-endian with a 64-bit FNV-1a
//! digest recorded in the manifest and verified on every load; files are
//! written atomically (temp file + rename).
//!
//! Dataset layout: `manifest.json` plus `dataset.bin` holding the three
//! partitions back to back, one row per sample as IEEE-754 single-precision
//! `[re_0..re_L, im_0..im_L, position_mm]`.
//!
//! Checkpoint layout: one `checkpoint.bin` holding a little-endian u64
//! header length, the JSON header, and the f64 state blob (parameters, then
//! batch-norm running statistics).

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use scatterpos_core::datagen::{DatasetBundle, Sample, SplitManifest};
use scatterpos_core::nn::{build_model, ModelSpec};
use scatterpos_core::physics::{
    CalibrationSet, FrequencyGrid, Permittivity, TransmissionSpectrum,
};
use scatterpos_core::train::{Normalizer, TrainHistory, TrainedModel};

use crate::error::CliError;

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

pub const DATASET_FILE: &str = "dataset.bin";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const ABLATION_SUMMARY_FILE: &str = "ablation_summary.txt";
pub const BENCH_FILE: &str = "bench.csv";

/// 64-bit FNV-1a digest.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Writes via a temp file in the same directory, then renames into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp_path = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp_path)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp_path, path)?;
    Ok(())
}

// ----- calibration ----------------------------------------------------------

/// Calibration JSON document. Field order is part of the format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub freqs_hz: Vec<f64>,
    pub s21: Vec<[f64; 2]>,
    pub s33: Vec<[f64; 2]>,
    pub s23s13: Vec<[f64; 2]>,
    pub eps_real: f64,
    pub eps_imag: f64,
    pub mu_r: f64,
    pub stroke_mm: f64,
}

impl CalibrationFile {
    pub fn from_parts(grid: &FrequencyGrid, calib: &CalibrationSet) -> Self {
        let pairs = |zs: &[Complex64]| zs.iter().map(|z| [z.re, z.im]).collect();
        Self {
            freqs_hz: grid.freqs_hz().to_vec(),
            s21: pairs(calib.s21()),
            s33: pairs(calib.s33()),
            s23s13: pairs(calib.s23s13()),
            eps_real: calib.permittivity().eps_real(),
            eps_imag: calib.permittivity().eps_imag(),
            mu_r: calib.mu_r(),
            stroke_mm: calib.stroke_mm(),
        }
    }

    pub fn into_parts(self) -> Result<(FrequencyGrid, CalibrationSet), CliError> {
        let grid = FrequencyGrid::new(self.freqs_hz)?;
        let complexes =
            |pairs: Vec<[f64; 2]>| pairs.into_iter().map(|[re, im]| Complex64::new(re, im)).collect();
        let perm = Permittivity::new(self.eps_real, self.eps_imag)?;
        let calib = CalibrationSet::new(
            complexes(self.s21),
            complexes(self.s33),
            complexes(self.s23s13),
            perm,
            self.mu_r,
            self.stroke_mm,
        )?;
        if calib.len() != grid.len() {
            return Err(CliError::File(format!(
                "calibration arrays of length {} for {} frequencies",
                calib.len(),
                grid.len()
            )));
        }
        Ok((grid, calib))
    }
}

pub fn save_calibration(
    path: &Path,
    grid: &FrequencyGrid,
    calib: &CalibrationSet,
) -> Result<(), CliError> {
    let doc = CalibrationFile::from_parts(grid, calib);
    let mut bytes = serde_json::to_vec_pretty(&doc)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

pub fn load_calibration(path: &Path) -> Result<(FrequencyGrid, CalibrationSet), CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::File(format!("{}: {e}", path.display())))?;
    let doc: CalibrationFile = serde_json::from_slice(&bytes)?;
    doc.into_parts()
}

// ----- dataset ---------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowCounts {
    pub train: usize,
    pub test_random: usize,
    pub test_new: usize,
}

/// Manifest of a dataset directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub kind: String,
    pub seeds: Vec<u64>,
    pub rng: String,
    pub rows: RowCounts,
    pub digest_fnv1a64: u64,
    pub stroke_mm: f64,
    pub n_freq: usize,
    pub pool_ids: Vec<String>,
    pub holdout_ids: Vec<String>,
}

fn encode_rows(samples: &[Sample], n_freq: usize, out: &mut Vec<u8>) -> Result<(), CliError> {
    for s in samples {
        if s.spectrum.len() != n_freq {
            return Err(CliError::File(format!(
                "sample of width {} in a dataset of width {n_freq}",
                s.spectrum.len()
            )));
        }
        for &v in s.spectrum.re() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for &v in s.spectrum.im() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.extend_from_slice(&(s.position_mm as f32).to_le_bytes());
    }
    Ok(())
}

fn decode_rows(bytes: &[u8], count: usize, n_freq: usize) -> Result<Vec<Sample>, CliError> {
    let row_floats = 2 * n_freq + 1;
    let mut samples = Vec::with_capacity(count);
    let mut offset = 0usize;
    for _ in 0..count {
        let mut floats = Vec::with_capacity(row_floats);
        for _ in 0..row_floats {
            let mut buf = [0u8; 4];
            buf.copy_from_slice(&bytes[offset..offset + 4]);
            floats.push(f32::from_le_bytes(buf) as f64);
            offset += 4;
        }
        let re = floats[..n_freq].to_vec();
        let im = floats[n_freq..2 * n_freq].to_vec();
        let position_mm = floats[2 * n_freq];
        samples.push(Sample {
            position_mm,
            spectrum: TransmissionSpectrum::new(re, im)
                .map_err(|e| CliError::File(format!("corrupt sample row: {e}")))?,
        });
    }
    Ok(samples)
}

/// Writes `dataset.bin` and `manifest.json` into `dir`.
pub fn save_dataset(
    dir: &Path,
    bundle: &DatasetBundle,
    n_freq: usize,
    master_seed: u64,
) -> Result<DatasetManifest, CliError> {
    fs::create_dir_all(dir)?;
    let rows = RowCounts {
        train: bundle.train.len(),
        test_random: bundle.test_random.len(),
        test_new: bundle.test_new.len(),
    };
    let total = rows.train + rows.test_random + rows.test_new;
    let mut blob = Vec::with_capacity(total * (2 * n_freq + 1) * 4);
    encode_rows(&bundle.train, n_freq, &mut blob)?;
    encode_rows(&bundle.test_random, n_freq, &mut blob)?;
    encode_rows(&bundle.test_new, n_freq, &mut blob)?;
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        kind: "dataset".to_string(),
        seeds: vec![master_seed, bundle.manifest.seed],
        rng: bundle.manifest.rng_algorithm.clone(),
        rows,
        digest_fnv1a64: fnv1a64(&blob),
        stroke_mm: bundle.stroke_mm,
        n_freq,
        pool_ids: bundle.manifest.pool_ids.clone(),
        holdout_ids: bundle.manifest.holdout_ids.clone(),
    };
    atomic_write(&dir.join(DATASET_FILE), &blob)?;
    let mut manifest_bytes = serde_json::to_vec_pretty(&manifest)?;
    manifest_bytes.push(b'\n');
    atomic_write(&dir.join(MANIFEST_FILE), &manifest_bytes)?;
    Ok(manifest)
}

/// Reads a dataset directory back, verifying version, size and digest
/// before any sample is constructed.
pub fn load_dataset(dir: &Path) -> Result<(DatasetBundle, DatasetManifest), CliError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest_bytes = fs::read(&manifest_path)
        .map_err(|e| CliError::File(format!("{}: {e}", manifest_path.display())))?;
    let manifest: DatasetManifest = serde_json::from_slice(&manifest_bytes)?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(CliError::File(format!(
            "dataset format version {} is not supported (expected {DATASET_FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    if manifest.kind != "dataset" {
        return Err(CliError::File(format!("artifact kind '{}'", manifest.kind)));
    }
    let blob_path = dir.join(DATASET_FILE);
    let blob = fs::read(&blob_path)
        .map_err(|e| CliError::File(format!("{}: {e}", blob_path.display())))?;
    let digest = fnv1a64(&blob);
    if digest != manifest.digest_fnv1a64 {
        return Err(CliError::File(format!(
            "dataset digest mismatch: manifest {:016x}, file {:016x}",
            manifest.digest_fnv1a64, digest
        )));
    }
    let row_bytes = (2 * manifest.n_freq + 1) * 4;
    let total = manifest.rows.train + manifest.rows.test_random + manifest.rows.test_new;
    if blob.len() != total * row_bytes {
        return Err(CliError::File(format!(
            "dataset blob of {} bytes, expected {}",
            blob.len(),
            total * row_bytes
        )));
    }
    let train = decode_rows(&blob, manifest.rows.train, manifest.n_freq)?;
    let test_random = decode_rows(
        &blob[manifest.rows.train * row_bytes..],
        manifest.rows.test_random,
        manifest.n_freq,
    )?;
    let test_new = decode_rows(
        &blob[(manifest.rows.train + manifest.rows.test_random) * row_bytes..],
        manifest.rows.test_new,
        manifest.n_freq,
    )?;
    let bundle = DatasetBundle {
        train,
        test_random,
        test_new,
        manifest: SplitManifest {
            seed: manifest.seeds.last().copied().unwrap_or(0),
            rng_algorithm: manifest.rng.clone(),
            pool_ids: manifest.pool_ids.clone(),
            holdout_ids: manifest.holdout_ids.clone(),
        },
        stroke_mm: manifest.stroke_mm,
    };
    Ok((bundle, manifest))
}

// ----- checkpoint -------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub kind: String,
    pub spec: ModelSpec,
    pub seed: u64,
    pub param_count: usize,
    pub config_digest_fnv1a64: u64,
    pub normalizer: Normalizer,
    pub state_len: usize,
    pub digest_fnv1a64: u64,
}

pub fn save_checkpoint(
    path: &Path,
    trained: &TrainedModel,
    seed: u64,
    config_digest: u64,
) -> Result<(), CliError> {
    let state = trained.model.state_vector();
    let mut blob = Vec::with_capacity(state.len() * 8);
    for v in &state {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    let header = CheckpointHeader {
        format_version: CHECKPOINT_FORMAT_VERSION,
        kind: "checkpoint".to_string(),
        spec: trained.model.spec().clone(),
        seed,
        param_count: trained.model.param_count(),
        config_digest_fnv1a64: config_digest,
        normalizer: trained.normalizer.clone(),
        state_len: state.len(),
        digest_fnv1a64: fnv1a64(&blob),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(8 + header_json.len() + blob.len());
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    bytes.extend_from_slice(&blob);
    atomic_write(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<(TrainedModel, CheckpointHeader), CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::File(format!("{}: {e}", path.display())))?;
    if bytes.len() < 8 {
        return Err(CliError::File("checkpoint file too short".to_string()));
    }
    let mut len_buf = [0u8; 8];
    len_buf.copy_from_slice(&bytes[..8]);
    let header_len = u64::from_le_bytes(len_buf) as usize;
    if bytes.len() < 8 + header_len {
        return Err(CliError::File("checkpoint header truncated".to_string()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[8..8 + header_len])?;
    if header.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(CliError::File(format!(
            "checkpoint format version {} is not supported (expected {CHECKPOINT_FORMAT_VERSION})",
            header.format_version
        )));
    }
    if header.kind != "checkpoint" {
        return Err(CliError::File(format!("artifact kind '{}'", header.kind)));
    }
    let blob = &bytes[8 + header_len..];
    if blob.len() != header.state_len * 8 {
        return Err(CliError::File(format!(
            "checkpoint blob of {} bytes, expected {}",
            blob.len(),
            header.state_len * 8
        )));
    }
    let digest = fnv1a64(blob);
    if digest != header.digest_fnv1a64 {
        return Err(CliError::File(format!(
            "checkpoint digest mismatch: header {:016x}, file {:016x}",
            header.digest_fnv1a64, digest
        )));
    }
    let mut state = Vec::with_capacity(header.state_len);
    for chunk in blob.chunks_exact(8) {
        let mut buf = [0u8; 8];
        buf.copy_from_slice(chunk);
        state.push(f64::from_le_bytes(buf));
    }
    let mut model = build_model(&header.spec, header.seed)?;
    model.load_state(&state)?;
    if model.param_count() != header.param_count {
        return Err(CliError::File(format!(
            "checkpoint records {} parameters, model has {}",
            header.param_count,
            model.param_count()
        )));
    }
    Ok((
        TrainedModel {
            model,
            normalizer: header.normalizer.clone(),
        },
        header,
    ))
}

// ----- CSV reports ------------------------------------------------------------

pub const METRICS_CSV_HEADER: &str =
    "model,framework,bn,fe,cvnn,activation,seed,partition,me_mm,mae_mm,rmse_mm,re_percent,params,train_seconds";

pub fn write_history_csv(path: &Path, history: &TrainHistory) -> Result<(), CliError> {
    let mut out = String::from("epoch,train_loss,val_rmse_mm,lr\n");
    for (i, ((loss, rmse), lr)) in history
        .train_loss
        .iter()
        .zip(&history.val_rmse_mm)
        .zip(&history.lr)
        .enumerate()
    {
        out.push_str(&format!("{i},{loss},{rmse},{lr}\n"));
    }
    atomic_write(path, out.as_bytes())
}

pub fn ablation_row_csv(row: &scatterpos_core::eval::AblationRow) -> String {
    let fe = row.fe.map(|m| m.name()).unwrap_or("off");
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        row.model,
        row.framework,
        row.bn,
        fe,
        row.cvnn,
        row.activation,
        row.seed,
        row.partition,
        row.me_mm,
        row.mae_mm,
        row.rmse_mm,
        row.re_percent,
        row.params,
        row.train_seconds
    )
}

pub fn write_metrics_csv(
    path: &Path,
    rows: &[scatterpos_core::eval::AblationRow],
) -> Result<(), CliError> {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&ablation_row_csv(row));
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Writes the resolved configuration JSON next to a command's outputs.
pub fn write_resolved_config<T: Serialize>(
    dir: &Path,
    command: &str,
    config: &T,
) -> Result<u64, CliError> {
    #[derive(Serialize)]
    struct Resolved<'a, T> {
        command: &'a str,
        #[serde(flatten)]
        config: &'a T,
    }
    let mut bytes = serde_json::to_vec_pretty(&Resolved { command, config })?;
    bytes.push(b'\n');
    let digest = fnv1a64(&bytes);
    atomic_write(&dir.join(format!("config_{command}.json")), &bytes)?;
    Ok(digest)
}
