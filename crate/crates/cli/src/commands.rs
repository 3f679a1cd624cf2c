//! The five subcommands: `gen`, `train`, `eval`, `ablate`, `bench`.
//!
//! Every run resolves its full configuration (global seed included), writes
//! it as `config_<command>.json` next to the outputs, and produces files
//! with fixed names so downstream commands can find them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use clap::{Args, ValueEnum};
use serde::Serialize;

use scatterpos_core::autodiff::Activation;
use scatterpos_core::datagen::{generate_benchmark, split_dataset, BenchmarkPreset};
use scatterpos_core::eval::{
    check_orderings, evaluate_physical, evaluate_trained, with_medians, AblationRow,
};
use scatterpos_core::nn::{build_model, reference_specs, spec_by_name, FeMode, ModelSpec};
use scatterpos_core::physics::{default_calibration, CalibrationSet, FrequencyGrid, InversionOptions};
use scatterpos_core::train::{train, TrainConfig};

use crate::error::CliError;
use crate::persistence::{
    self, load_calibration, load_checkpoint, load_dataset, save_calibration, save_checkpoint,
    save_dataset, write_history_csv, write_metrics_csv, write_resolved_config,
};

/// Global options shared by all subcommands.
#[derive(Debug, Clone)]
pub struct Globals {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub quiet: bool,
}

impl Globals {
    fn say(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PresetArg {
    PaperShape,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationArg {
    Sigmoid,
    Relu,
    #[value(name = "leaky_relu")]
    LeakyRelu,
    Selu,
}

impl From<ActivationArg> for Activation {
    fn from(a: ActivationArg) -> Self {
        match a {
            ActivationArg::Sigmoid => Activation::Sigmoid,
            ActivationArg::Relu => Activation::Relu,
            ActivationArg::LeakyRelu => Activation::LeakyRelu,
            ActivationArg::Selu => Activation::Selu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FeArg {
    Shared,
    Split,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchArg {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum PartitionArg {
    #[value(name = "train")]
    Train,
    #[value(name = "test_random")]
    TestRandom,
    #[value(name = "test_new")]
    TestNew,
}

impl PartitionArg {
    fn name(&self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::TestRandom => "test_random",
            Self::TestNew => "test_new",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum GridArg {
    #[value(name = "full")]
    Full,
    #[value(name = "activations")]
    Activations,
}

// ----- gen -------------------------------------------------------------------

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenArgs {
    /// Calibration JSON; the bundled synthetic calibration when omitted.
    #[arg(long)]
    pub calib: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "paper-shape")]
    pub preset: PresetArg,
    /// Number of experiments (overrides the preset).
    #[arg(long)]
    pub experiments: Option<usize>,
    /// Whole experiments held out as test_new (overrides the preset).
    #[arg(long)]
    pub holdout: Option<usize>,
    /// Relative measurement noise (overrides the preset).
    #[arg(long)]
    pub noise: Option<f64>,
    /// Calibration drift scale (overrides the preset).
    #[arg(long)]
    pub drift: Option<f64>,
    /// Samples per experiment (overrides the preset).
    #[arg(long)]
    pub samples: Option<usize>,
    /// Output directory (defaults to --out-dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct GenResolved<'a> {
    seed: u64,
    out: &'a Path,
    calib: Option<&'a Path>,
    preset: PresetArg,
    n_experiments: usize,
    n_holdout: usize,
    samples_per_experiment: usize,
    noise_sigma_rel: f64,
    calib_drift_scale: f64,
    split_frac: f64,
}

fn load_calib_or_default(
    path: Option<&Path>,
) -> Result<(FrequencyGrid, CalibrationSet), CliError> {
    match path {
        Some(p) => load_calibration(p),
        None => Ok(default_calibration()),
    }
}

pub fn gen(globals: &Globals, args: &GenArgs) -> Result<(), CliError> {
    let out = args.out.clone().unwrap_or_else(|| globals.out_dir.clone());
    let (grid, calib) = load_calib_or_default(args.calib.as_deref())?;

    let mut preset = BenchmarkPreset::paper_shape();
    if args.preset == PresetArg::Custom {
        // Custom starts from the same defaults; flags below override.
    }
    if let Some(n) = args.experiments {
        preset.n_experiments = n;
    }
    if let Some(k) = args.holdout {
        preset.n_holdout = k;
    }
    if let Some(n) = args.samples {
        preset.samples_per_experiment = n;
    }
    if let Some(s) = args.noise {
        preset.noise_sigma_rel = s;
    }
    if let Some(d) = args.drift {
        preset.calib_drift_scale = d;
    }
    if preset.n_holdout >= preset.n_experiments {
        return Err(CliError::Argument(format!(
            "cannot hold out {} of {} experiments",
            preset.n_holdout, preset.n_experiments
        )));
    }

    let resolved = GenResolved {
        seed: globals.seed,
        out: &out,
        calib: args.calib.as_deref(),
        preset: args.preset,
        n_experiments: preset.n_experiments,
        n_holdout: preset.n_holdout,
        samples_per_experiment: preset.samples_per_experiment,
        noise_sigma_rel: preset.noise_sigma_rel,
        calib_drift_scale: preset.calib_drift_scale,
        split_frac: preset.split_frac,
    };

    globals.say(&format!(
        "generating {} experiments x {} samples (holdout {})",
        preset.n_experiments, preset.samples_per_experiment, preset.n_holdout
    ));
    let experiments = generate_benchmark(&calib, &grid, &preset, globals.seed)?;
    let bundle = split_dataset(experiments, preset.n_holdout, preset.split_frac, globals.seed)?;
    let manifest = save_dataset(&out, &bundle, grid.len(), globals.seed)?;
    save_calibration(&out.join(persistence::CALIBRATION_FILE), &grid, &calib)?;
    write_resolved_config(&out, "gen", &resolved)?;
    globals.say(&format!(
        "wrote {} ({} train / {} test_random / {} test_new rows, digest {:016x})",
        out.join(persistence::DATASET_FILE).display(),
        manifest.rows.train,
        manifest.rows.test_random,
        manifest.rows.test_new,
        manifest.digest_fnv1a64
    ));
    Ok(())
}

// ----- train -----------------------------------------------------------------

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset directory produced by `gen`.
    #[arg(long)]
    pub data: PathBuf,
    /// Reference model name (see `reference_specs`).
    #[arg(long)]
    pub model: String,
    /// Override the spec's activation.
    #[arg(long, value_enum)]
    pub activation: Option<ActivationArg>,
    /// Override the spec's frequency encoding.
    #[arg(long, value_enum)]
    pub fe: Option<FeArg>,
    /// Override the spec's batch normalization.
    #[arg(long, value_enum)]
    pub bn: Option<SwitchArg>,
    #[arg(long, default_value_t = 150)]
    pub epochs: usize,
    /// Batch size (default: 128 for MLPs, 64 for CNNs).
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Output directory (defaults to --out-dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Applies the CLI overrides to a named reference spec.
pub fn resolve_spec(
    model: &str,
    activation: Option<ActivationArg>,
    fe: Option<FeArg>,
    bn: Option<SwitchArg>,
) -> Result<ModelSpec, CliError> {
    let mut spec = spec_by_name(model)?;
    if let Some(act) = activation {
        spec = spec.with_activation(act.into());
    }
    match fe {
        Some(FeArg::Shared) => spec = spec.with_fe(Some(FeMode::Shared)),
        Some(FeArg::Split) => spec = spec.with_fe(Some(FeMode::Split)),
        Some(FeArg::Off) => spec = spec.with_fe(None),
        None => {}
    }
    match bn {
        Some(SwitchArg::On) => spec = spec.with_bn(true),
        Some(SwitchArg::Off) => spec = spec.with_bn(false),
        None => {}
    }
    Ok(spec)
}

#[derive(Serialize)]
struct TrainResolved<'a> {
    seed: u64,
    out: &'a Path,
    data: &'a Path,
    model: &'a str,
    activation: &'a str,
    fe: &'a str,
    bn: bool,
    epochs: usize,
    train_config: &'a TrainConfig,
}

pub fn train_cmd(globals: &Globals, args: &TrainArgs) -> Result<(), CliError> {
    if args.epochs == 0 {
        return Err(CliError::Argument("epochs must be >= 1".to_string()));
    }
    let out = args.out.clone().unwrap_or_else(|| globals.out_dir.clone());
    let (bundle, manifest) = load_dataset(&args.data)?;
    let mut spec = resolve_spec(&args.model, args.activation, args.fe, args.bn)?;
    if spec.input_len != manifest.n_freq {
        spec.input_len = manifest.n_freq;
    }
    spec.validate()?;

    let mut cfg = TrainConfig::for_spec(&spec, args.epochs, globals.seed);
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = args.lr {
        cfg.lr = lr;
    }
    if let Some(p) = args.patience {
        cfg.early_stop_patience = p;
    }
    cfg.validate()?;

    let resolved = TrainResolved {
        seed: globals.seed,
        out: &out,
        data: &args.data,
        model: &spec.name,
        activation: spec.activation().name(),
        fe: spec.fe_mode().map(|m| m.name()).unwrap_or("off"),
        bn: spec.has_batchnorm(),
        epochs: args.epochs,
        train_config: &cfg,
    };
    std::fs::create_dir_all(&out)?;
    let config_digest = write_resolved_config(&out, "train", &resolved)?;

    let model = build_model(&spec, globals.seed)?;
    globals.say(&format!(
        "training {} ({} parameters) for up to {} epochs",
        spec.name,
        model.param_count(),
        cfg.epochs
    ));
    let started = Instant::now();
    let (trained, history) = train(model, &bundle, &cfg)?;
    let elapsed = started.elapsed().as_secs_f64();

    save_checkpoint(
        &out.join(persistence::CHECKPOINT_FILE),
        &trained,
        globals.seed,
        config_digest,
    )?;
    write_history_csv(&out.join(persistence::HISTORY_FILE), &history)?;
    globals.say(&format!(
        "done in {elapsed:.1} s: best val RMSE {:.3} mm at epoch {} ({} epochs run)",
        history.best_val_rmse_mm(),
        history.best_epoch,
        history.train_loss.len()
    ));
    Ok(())
}

// ----- eval ------------------------------------------------------------------

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    /// Dataset directory produced by `gen`.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to evaluate (mutually exclusive with --physical).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate the analytic physical baseline instead of a checkpoint.
    #[arg(long)]
    pub physical: bool,
    /// Calibration for --physical (default: calibration.json in --data).
    #[arg(long)]
    pub calib: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test_new")]
    pub partition: PartitionArg,
    /// Output CSV path (defaults to metrics.csv in --out-dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct EvalResolved<'a> {
    seed: u64,
    data: &'a Path,
    checkpoint: Option<&'a Path>,
    physical: bool,
    calib: Option<&'a Path>,
    partition: &'a str,
    out: &'a Path,
}

pub fn eval_cmd(globals: &Globals, args: &EvalArgs) -> Result<(), CliError> {
    if args.physical == args.checkpoint.is_some() {
        return Err(CliError::Argument(
            "exactly one of --checkpoint and --physical is required".to_string(),
        ));
    }
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| globals.out_dir.join(persistence::METRICS_FILE));
    let (bundle, _manifest) = load_dataset(&args.data)?;
    let samples = bundle
        .partition(args.partition.name())
        .expect("partition names are fixed");
    if samples.is_empty() {
        return Err(CliError::Argument(format!(
            "partition '{}' is empty",
            args.partition.name()
        )));
    }

    let row = if args.physical {
        let calib_path = args
            .calib
            .clone()
            .unwrap_or_else(|| args.data.join(persistence::CALIBRATION_FILE));
        let (grid, calib) = load_calibration(&calib_path)?;
        let report = evaluate_physical(&calib, &grid, samples, &InversionOptions::default())?;
        AblationRow {
            model: "physical".to_string(),
            framework: "physical".to_string(),
            bn: false,
            fe: None,
            cvnn: false,
            activation: "-".to_string(),
            seed: "-".to_string(),
            partition: args.partition.name().to_string(),
            me_mm: report.me_mm,
            mae_mm: report.mae_mm,
            rmse_mm: report.rmse_mm,
            re_percent: report.re_percent,
            params: 0,
            train_seconds: 0.0,
        }
    } else {
        let (trained, header) = load_checkpoint(args.checkpoint.as_deref().expect("checked"))?;
        let report = evaluate_trained(&trained, samples, bundle.stroke_mm)?;
        AblationRow::from_report(
            &header.spec,
            &report,
            format!("{}", header.seed),
            args.partition.name().to_string(),
            header.param_count,
            0.0,
        )
    };

    let resolved = EvalResolved {
        seed: globals.seed,
        data: &args.data,
        checkpoint: args.checkpoint.as_deref(),
        physical: args.physical,
        calib: args.calib.as_deref(),
        partition: args.partition.name(),
        out: &out,
    };
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_resolved_config(
        out.parent().unwrap_or(Path::new(".")),
        "eval",
        &resolved,
    )?;
    write_metrics_csv(&out, std::slice::from_ref(&row))?;
    globals.say(&format!(
        "{} on {}: ME {:.3} mm, MAE {:.3} mm, RMSE {:.3} mm, RE {:.4}%",
        row.model, row.partition, row.me_mm, row.mae_mm, row.rmse_mm, row.re_percent
    ));
    Ok(())
}

// ----- ablate ----------------------------------------------------------------

#[derive(Debug, Clone, Args, Serialize)]
pub struct AblateArgs {
    /// Dataset directory produced by `gen`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    pub grid: GridArg,
    /// Seeds of the repeated runs.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 150)]
    pub epochs: usize,
    /// Parallel training cells (defaults to the number of cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Calibration for the physical baseline row (default: calibration.json
    /// in --data).
    #[arg(long)]
    pub calib: Option<PathBuf>,
    /// Output directory (defaults to --out-dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct AblateResolved<'a> {
    seed: u64,
    data: &'a Path,
    grid: GridArg,
    seeds: &'a [u64],
    epochs: usize,
    jobs: usize,
    out: &'a Path,
}

fn grid_specs(grid: GridArg) -> Vec<ModelSpec> {
    match grid {
        GridArg::Full => reference_specs(),
        GridArg::Activations => {
            let base = spec_by_name("mlp_bn").expect("reference spec");
            [
                Activation::Sigmoid,
                Activation::Selu,
                Activation::Relu,
                Activation::LeakyRelu,
            ]
            .into_iter()
            .map(|act| {
                let mut s = base.clone().with_activation(act);
                s.name = format!("mlp_bn_{}", act.name());
                s
            })
            .collect()
        }
    }
}

pub fn ablate(globals: &Globals, args: &AblateArgs) -> Result<(), CliError> {
    if args.seeds.is_empty() {
        return Err(CliError::Argument("at least one seed is required".to_string()));
    }
    if args.epochs == 0 {
        return Err(CliError::Argument("epochs must be >= 1".to_string()));
    }
    let out = args.out.clone().unwrap_or_else(|| globals.out_dir.clone());
    std::fs::create_dir_all(&out)?;
    let (bundle, manifest) = load_dataset(&args.data)?;
    let mut specs = grid_specs(args.grid);
    for spec in specs.iter_mut() {
        spec.input_len = manifest.n_freq;
        spec.validate()?;
    }
    let jobs = args
        .jobs
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
        .max(1);

    let resolved = AblateResolved {
        seed: globals.seed,
        data: &args.data,
        grid: args.grid,
        seeds: &args.seeds,
        epochs: args.epochs,
        jobs,
        out: &out,
    };
    write_resolved_config(&out, "ablate", &resolved)?;

    // Cells are trained in worker threads; rows land in a result slot per
    // cell so the output order is independent of scheduling.
    let cells: Vec<(usize, ModelSpec, u64)> = specs
        .iter()
        .flat_map(|s| args.seeds.iter().map(move |&seed| (s.clone(), seed)))
        .enumerate()
        .map(|(i, (s, seed))| (i, s, seed))
        .collect();
    let n_cells = cells.len();
    let queue = Mutex::new(cells);
    let results: Mutex<Vec<Option<Result<AblationRow, CliError>>>> =
        Mutex::new((0..n_cells).map(|_| None).collect());
    let epochs = args.epochs;
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(n_cells) {
            scope.spawn(|| loop {
                let cell = queue.lock().expect("queue lock").pop();
                let Some((idx, spec, seed)) = cell else { break };
                let started = Instant::now();
                let outcome = scatterpos_core::eval::run_cell(&bundle, &spec, epochs, seed)
                    .map(|(mut row, history)| {
                        row.train_seconds = started.elapsed().as_secs_f64();
                        if !globals.quiet {
                            eprintln!(
                                "cell {}/{n_cells}: {} seed {} -> RMSE {:.3} mm ({} epochs, {:.1} s)",
                                idx + 1,
                                spec.name,
                                seed,
                                row.rmse_mm,
                                history.train_loss.len(),
                                row.train_seconds
                            );
                        }
                        row
                    })
                    .map_err(CliError::from);
                results.lock().expect("results lock")[idx] = Some(outcome);
            });
        }
    });
    let mut rows = Vec::with_capacity(n_cells);
    for slot in results.into_inner().expect("results lock") {
        rows.push(slot.expect("all cells processed")?);
    }

    let all_rows = with_medians(&rows);
    persistence::write_metrics_csv(&out.join(persistence::ABLATION_FILE), &all_rows)?;

    if args.grid == GridArg::Full {
        let calib_path = args
            .calib
            .clone()
            .unwrap_or_else(|| args.data.join(persistence::CALIBRATION_FILE));
        let (grid, calib) = load_calibration(&calib_path)?;
        globals.say("evaluating the physical baseline on test_new");
        let physical =
            evaluate_physical(&calib, &grid, &bundle.test_new, &InversionOptions::default())?;

        let medians: BTreeMap<String, f64> = all_rows
            .iter()
            .filter(|r| r.seed == "median")
            .map(|r| (r.model.clone(), r.rmse_mm))
            .collect();
        let checks = check_orderings(&medians, physical.rmse_mm);
        let mut summary = String::new();
        summary.push_str(&format!(
            "physical baseline test_new RMSE: {:.3} mm\n",
            physical.rmse_mm
        ));
        for check in &checks {
            summary.push_str(&format!(
                "{}: {} ({:.3} vs {:.3} mm)\n",
                check.label,
                if check.pass { "PASS" } else { "FAIL" },
                check.lhs,
                check.rhs
            ));
        }
        let all_pass = checks.iter().all(|c| c.pass);
        summary.push_str(&format!(
            "overall: {}\n",
            if all_pass { "PASS" } else { "FAIL" }
        ));
        persistence::atomic_write(
            &out.join(persistence::ABLATION_SUMMARY_FILE),
            summary.as_bytes(),
        )?;
        print!("{summary}");
    }
    globals.say(&format!(
        "wrote {}",
        out.join(persistence::ABLATION_FILE).display()
    ));
    Ok(())
}

// ----- bench -----------------------------------------------------------------

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchArgs {
    /// Checkpoint to benchmark.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory providing the throughput workload.
    #[arg(long)]
    pub data: PathBuf,
    /// Repetitions of the single-sample latency measurement.
    #[arg(long, default_value_t = 1000)]
    pub repeat: usize,
    /// Output directory (defaults to --out-dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct BenchResolved<'a> {
    seed: u64,
    checkpoint: &'a Path,
    data: &'a Path,
    repeat: usize,
    out: &'a Path,
}

pub const BENCH_CSV_HEADER: &str =
    "model,params,repeat,inference_us_median,epoch_seconds,samples_per_sec";

pub fn bench(globals: &Globals, args: &BenchArgs) -> Result<(), CliError> {
    if args.repeat == 0 {
        return Err(CliError::Argument("repeat must be >= 1".to_string()));
    }
    let out = args.out.clone().unwrap_or_else(|| globals.out_dir.clone());
    std::fs::create_dir_all(&out)?;
    let (bundle, _) = load_dataset(&args.data)?;
    let (trained, header) = load_checkpoint(&args.checkpoint)?;
    let resolved = BenchResolved {
        seed: globals.seed,
        checkpoint: &args.checkpoint,
        data: &args.data,
        repeat: args.repeat,
        out: &out,
    };
    write_resolved_config(&out, "bench", &resolved)?;

    let sample = bundle
        .train
        .first()
        .or_else(|| bundle.test_new.first())
        .ok_or_else(|| CliError::Argument("dataset has no samples".to_string()))?;
    let one = std::slice::from_ref(sample);
    // Warm up, then time each single-sample inference.
    for _ in 0..10.min(args.repeat) {
        trained.predict(one)?;
    }
    let mut latencies_us = Vec::with_capacity(args.repeat);
    for _ in 0..args.repeat {
        let t0 = Instant::now();
        let _ = trained.predict(one)?;
        latencies_us.push(t0.elapsed().as_secs_f64() * 1e6);
    }
    latencies_us.sort_by(|a, b| a.partial_cmp(b).expect("finite latency"));
    let median_us = latencies_us[latencies_us.len() / 2];

    // One full training epoch over the train partition.
    let spec = header.spec.clone();
    let mut cfg = TrainConfig::for_spec(&spec, 1, header.seed);
    cfg.early_stop_patience = 1;
    let model = build_model(&spec, header.seed)?;
    let t0 = Instant::now();
    let _ = train(model, &bundle, &cfg)?;
    let epoch_seconds = t0.elapsed().as_secs_f64();
    let samples_per_sec = bundle.train.len() as f64 / epoch_seconds;

    let csv = format!(
        "{BENCH_CSV_HEADER}\n{},{},{},{:.3},{:.3},{:.1}\n",
        header.spec.name,
        header.param_count,
        args.repeat,
        median_us,
        epoch_seconds,
        samples_per_sec
    );
    persistence::atomic_write(&out.join(persistence::BENCH_FILE), csv.as_bytes())?;
    globals.say(&format!(
        "{}: {} params, {:.1} us median inference, {:.2} s/epoch ({:.0} samples/s)",
        header.spec.name, header.param_count, median_us, epoch_seconds, samples_per_sec
    ));
    Ok(())
}
