//! Desk-scale experiment runners: calibration study, SSL study with its
//! supervised baseline, confidence-threshold sweep and ratio diagnostics.
//!
//! Every run is a pure function of an [`ExperimentConfig`] (which carries the
//! master seed). Reports embed that config and keep raw per-repeat values so
//! derived numbers can be recomputed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Axis;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{Augmentor, AugmentorConfig};
use crate::data::{
    generate, split, stratified_indices, Dataset, DatasetSpec, Generator, SplitSpec,
};
use crate::engine::{
    evaluate_ema, supervised_step, write_step_log, EpochBatcher, SslConfig, SslEngine, StepReport,
};
use crate::error::{Error, Result};
use crate::kernel::{compute_lambda_b, KernelSpec, LambdaDistribution};
use crate::metrics::{evaluate_probs, CalibrationReport, DEFAULT_BINS};
use crate::net::{Activation, NetConfig, NetState, DEFAULT_EMA_DECAY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Calibrate,
    Ssl,
    ThresholdSweep,
    LambdaDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub ema_decay: f64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            activation: Activation::Relu,
            ema_decay: DEFAULT_EMA_DECAY,
        }
    }
}

impl NetworkSpec {
    pub fn net_config(&self, input_dim: usize, n_classes: usize, seed: u64) -> NetConfig {
        let mut sizes = vec![input_dim];
        sizes.extend(&self.hidden);
        sizes.push(n_classes);
        NetConfig {
            layer_sizes: sizes,
            activation: self.activation,
            seed,
            ema_decay: self.ema_decay,
        }
    }
}

/// One augmentor arm of the calibration study. With several candidates the
/// one with the best validation accuracy is reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentorArm {
    pub name: String,
    pub candidates: Vec<AugmentorConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationSpec {
    /// Fractions of the training pool, each in `(0, 1]`.
    pub proportions: Vec<f64>,
    pub arms: Vec<AugmentorArm>,
    pub iterations: usize,
    pub batch_size: usize,
    pub learn_rate: f64,
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        Self {
            proportions: vec![0.05, 0.2, 1.0],
            arms: vec![
                AugmentorArm {
                    name: "baseline".into(),
                    candidates: vec![AugmentorConfig::None],
                },
                AugmentorArm {
                    name: "mixconf_g".into(),
                    candidates: vec![AugmentorConfig::MixConfG { width: 0.4 }],
                },
            ],
            iterations: 2000,
            batch_size: 64,
            learn_rate: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub thresholds: Vec<f64>,
    /// Final training loss is averaged over this many trailing iterations.
    pub loss_window: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            thresholds: vec![0.5, 0.6, 0.7, 0.8, 0.9, 0.95],
            loss_window: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosticsSpec {
    /// Must be a MixConf augmentor.
    pub kernel: AugmentorConfig,
    pub draws: usize,
    pub bins: usize,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        Self {
            kernel: AugmentorConfig::MixConfG { width: 0.4 },
            draws: 1_000_000,
            bins: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub repeats: usize,
    pub out: Option<PathBuf>,
    pub dataset: DatasetSpec,
    pub split: SplitSpec,
    pub network: NetworkSpec,
    pub ssl: SslConfig,
    pub calibration: CalibrationSpec,
    pub sweep: SweepSpec,
    pub diagnostics: DiagnosticsSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::default_for(ExperimentKind::Ssl)
    }
}

impl ExperimentConfig {
    /// Desk-scale defaults: two moons for the SSL family, four Gaussian
    /// blobs for the calibration study.
    pub fn default_for(kind: ExperimentKind) -> Self {
        let (dataset, split) = match kind {
            ExperimentKind::Calibrate => (
                DatasetSpec {
                    generator: Generator::GaussianBlobs,
                    n_samples: 2000,
                    noise_sd: 1.0,
                    n_classes: 4,
                    seed: 0,
                },
                SplitSpec {
                    n_labeled: 0,
                    n_validation: 200,
                    n_test: 500,
                },
            ),
            _ => (
                DatasetSpec {
                    generator: Generator::TwoMoons,
                    n_samples: 2000,
                    noise_sd: 0.03,
                    n_classes: 2,
                    seed: 0,
                },
                SplitSpec {
                    n_labeled: 10,
                    n_validation: 0,
                    n_test: 500,
                },
            ),
        };
        let repeats = match kind {
            ExperimentKind::Calibrate => 10,
            ExperimentKind::LambdaDiagnostics => 1,
            _ => 5,
        };
        let ssl = SslConfig {
            jitter: dataset.default_jitter(),
            ..SslConfig::default()
        };
        Self {
            kind,
            seed: 0,
            repeats,
            out: None,
            dataset,
            split,
            network: NetworkSpec::default(),
            ssl,
            calibration: CalibrationSpec::default(),
            sweep: SweepSpec::default(),
            diagnostics: DiagnosticsSpec::default(),
        }
    }

    /// Parses a TOML config; missing sections take the defaults of `kind`
    /// (or of the `kind` key in the file). An unset `ssl.jitter` follows the
    /// dataset noise.
    pub fn from_toml(text: &str, kind: Option<ExperimentKind>) -> Result<Self> {
        let table: toml::Table = toml::from_str(text)?;
        let file_kind = match table.get("kind") {
            Some(v) => Some(v.clone().try_into::<ExperimentKind>()?),
            None => None,
        };
        let kind = kind.or(file_kind).unwrap_or(ExperimentKind::Ssl);
        let jitter_set = table
            .get("ssl")
            .and_then(|v| v.as_table())
            .is_some_and(|t| t.contains_key("jitter"));
        let mut merged = toml::Table::try_from(Self::default_for(kind))
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        merge_tables(&mut merged, table);
        merged.insert(
            "kind".into(),
            toml::Value::try_from(kind).expect("kind serializes"),
        );
        let mut config: Self = merged.try_into()?;
        if !jitter_set {
            config.ssl.jitter = config.dataset.default_jitter();
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.repeats == 0 {
            return bad("repeats must be at least 1".into());
        }
        if self.kind != ExperimentKind::LambdaDiagnostics {
            self.dataset.validate()?;
            self.ssl.validate()?;
            let needed = self.split.n_labeled + self.split.n_validation + self.split.n_test;
            if needed > self.dataset.n_samples {
                return Err(Error::SplitOverflow {
                    requested: needed,
                    available: self.dataset.n_samples,
                });
            }
        }
        match self.kind {
            ExperimentKind::Calibrate => {
                let cal = &self.calibration;
                if cal.proportions.is_empty() || cal.arms.is_empty() {
                    return bad("calibration needs proportions and arms".into());
                }
                if let Some(p) = cal.proportions.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
                    return bad(format!("proportion {p} outside (0, 1]"));
                }
                if cal.arms.iter().any(|a| a.candidates.is_empty()) {
                    return bad("every arm needs a candidate".into());
                }
                for arm in &cal.arms {
                    for c in &arm.candidates {
                        c.build::<f64>()?;
                    }
                }
                if cal.batch_size == 0 || !(cal.learn_rate > 0.0) {
                    return bad("calibration batch size and learn rate must be positive".into());
                }
                if self.split.n_validation == 0 || self.split.n_test == 0 {
                    return bad("calibration needs validation and test samples".into());
                }
            }
            ExperimentKind::Ssl => {}
            ExperimentKind::ThresholdSweep => {
                if self.sweep.thresholds.is_empty() {
                    return bad("sweep needs at least one threshold".into());
                }
                if let Some(t) = self
                    .sweep
                    .thresholds
                    .iter()
                    .find(|t| !(**t > 0.0 && **t <= 1.0))
                {
                    return bad(format!("threshold {t} outside (0, 1]"));
                }
            }
            ExperimentKind::LambdaDiagnostics => {
                diagnostics_kernel(&self.diagnostics.kernel)?;
                if self.diagnostics.draws == 0 || self.diagnostics.bins == 0 {
                    return bad("diagnostics need draws and bins".into());
                }
            }
        }
        Ok(())
    }
}

fn merge_tables(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// SplitMix64 finalizer over the master seed and a stream tag.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_DATA: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_INIT: u64 = 3;
const STREAM_TRAIN: u64 = 4;
const STREAM_SUBSET: u64 = 5;
const STREAM_DIAG: u64 = 6;

/// Mean and sample standard deviation (0 for a single value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                sd: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, sd, n }
    }

    pub fn standard_error(&self) -> f64 {
        self.sd / (self.n as f64).sqrt()
    }

    /// Standard error of the difference of two independent means.
    pub fn pooled_standard_error(&self, other: &Self) -> f64 {
        (self.standard_error().powi(2) + other.standard_error().powi(2)).sqrt()
    }

    fn matches(&self, values: &[f64], tol: f64) -> bool {
        let again = Self::of(values);
        again.n == self.n
            && (again.mean - self.mean).abs() <= tol
            && (again.sd - self.sd).abs() <= tol
    }
}

struct RepeatData {
    split: crate::data::Split<f64>,
}

fn repeat_data(config: &ExperimentConfig, repeat: usize) -> Result<RepeatData> {
    let mut spec = config.dataset.clone();
    spec.seed = derive_seed(config.seed, STREAM_DATA, repeat as u64);
    let dataset: Dataset<f64> = generate(&spec)?;
    let split_seed = derive_seed(config.seed, STREAM_SPLIT, repeat as u64);
    let split = split(&dataset, &config.split, split_seed)?;
    Ok(RepeatData { split })
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Calibration study

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRun {
    pub repeat: usize,
    pub chosen: AugmentorConfig,
    pub validation_accuracy: f64,
    pub test_error: f64,
    pub test_ece: f64,
    pub calibration: CalibrationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCell {
    pub proportion: f64,
    pub n_train: usize,
    pub arm: String,
    pub ece: Summary,
    pub error: Summary,
    pub runs: Vec<CalibrationRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStudy {
    pub seed: u64,
    pub config: ExperimentConfig,
    pub cells: Vec<CalibrationCell>,
}

impl CalibrationStudy {
    pub fn cell(&self, proportion: f64, arm: &str) -> Option<&CalibrationCell> {
        self.cells
            .iter()
            .find(|c| c.arm == arm && (c.proportion - proportion).abs() < 1e-12)
    }

    /// Recomputes every ECE from its bins and every summary from raw runs.
    pub fn validate(&self, tol: f64) -> Result<()> {
        for cell in &self.cells {
            let eces: Vec<f64> = cell.runs.iter().map(|r| r.test_ece).collect();
            let errs: Vec<f64> = cell.runs.iter().map(|r| r.test_error).collect();
            if !cell.ece.matches(&eces, tol) || !cell.error.matches(&errs, tol) {
                return Err(Error::InvalidConfig(format!(
                    "summary mismatch in cell {} @ {}",
                    cell.arm, cell.proportion
                )));
            }
            for run in &cell.runs {
                if (run.calibration.recompute_ece() - run.test_ece).abs() > tol
                    || (1.0 - run.calibration.accuracy() - run.test_error).abs() > tol
                {
                    return Err(Error::InvalidConfig(format!(
                        "run {} of {} does not recompute from bins",
                        run.repeat, cell.arm
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Supervised training with an augmentor on a fixed training set.
pub fn train_supervised(
    state: &mut NetState<f64>,
    train: &Dataset<f64>,
    augmentor: &Augmentor<f64>,
    iterations: usize,
    batch_size: usize,
    learn_rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let batch = batch_size.min(train.len());
    let targets = train.one_hot();
    let mut batches = EpochBatcher::new(train.len(), batch);
    for _ in 0..iterations {
        let idx = batches.next_batch(rng);
        let x = train.x.select(Axis(0), &idx);
        let p = targets.select(Axis(0), &idx);
        supervised_step(state, x.view(), p.view(), augmentor, learn_rate, rng)?;
    }
    Ok(())
}

fn evaluate_live(state: &NetState<f64>, data: &Dataset<f64>) -> Result<CalibrationReport> {
    let probs = state.forward(data.x.view())?;
    evaluate_probs(probs.view(), &data.y, DEFAULT_BINS)
}

pub fn run_calibration(config: &ExperimentConfig) -> Result<CalibrationStudy> {
    config.validate()?;
    let cal = &config.calibration;
    // Everything outside validation and test is the training pool.
    let mut pool_config = config.clone();
    pool_config.split.n_labeled =
        config.dataset.n_samples - config.split.n_validation - config.split.n_test;

    let mut runs: Vec<Vec<Vec<CalibrationRun>>> =
        vec![vec![Vec::new(); cal.arms.len()]; cal.proportions.len()];
    let mut sizes = vec![0; cal.proportions.len()];
    for repeat in 0..config.repeats {
        let data = repeat_data(&pool_config, repeat)?;
        let pool = &data.split.labeled;
        for (pi, &proportion) in cal.proportions.iter().enumerate() {
            let n_train = ((proportion * pool.len() as f64).round() as usize)
                .clamp(pool.n_classes, pool.len());
            sizes[pi] = n_train;
            let mut subset_rng = ChaCha8Rng::seed_from_u64(derive_seed(
                config.seed,
                STREAM_SUBSET,
                (repeat * 1000 + pi) as u64,
            ));
            let idx = stratified_indices(&pool.y, pool.n_classes, n_train, &mut subset_rng)?;
            let train = pool.subset(&idx);
            let net_config = config.network.net_config(
                train.dim(),
                train.n_classes,
                derive_seed(config.seed, STREAM_INIT, repeat as u64),
            );
            for (ai, arm) in cal.arms.iter().enumerate() {
                let mut best: Option<(f64, AugmentorConfig, NetState<f64>)> = None;
                for candidate in &arm.candidates {
                    let augmentor = candidate.build::<f64>()?;
                    let mut net = NetState::new(&net_config)?;
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                        config.seed,
                        STREAM_TRAIN,
                        repeat as u64,
                    ));
                    train_supervised(
                        &mut net,
                        &train,
                        &augmentor,
                        cal.iterations,
                        cal.batch_size,
                        cal.learn_rate,
                        &mut rng,
                    )?;
                    let val_acc = evaluate_live(&net, &data.split.validation)?.accuracy();
                    if best.as_ref().is_none_or(|(acc, _, _)| val_acc > *acc) {
                        best = Some((val_acc, *candidate, net));
                    }
                }
                let (validation_accuracy, chosen, net) = best.expect("arm has candidates");
                let report = evaluate_live(&net, &data.split.test)?;
                runs[pi][ai].push(CalibrationRun {
                    repeat,
                    chosen,
                    validation_accuracy,
                    test_error: 1.0 - report.accuracy(),
                    test_ece: report.ece,
                    calibration: report,
                });
            }
        }
    }

    let mut cells = Vec::new();
    for (pi, &proportion) in cal.proportions.iter().enumerate() {
        for (ai, arm) in cal.arms.iter().enumerate() {
            let cell_runs = std::mem::take(&mut runs[pi][ai]);
            let eces: Vec<f64> = cell_runs.iter().map(|r| r.test_ece).collect();
            let errs: Vec<f64> = cell_runs.iter().map(|r| r.test_error).collect();
            cells.push(CalibrationCell {
                proportion,
                n_train: sizes[pi],
                arm: arm.name.clone(),
                ece: Summary::of(&eces),
                error: Summary::of(&errs),
                runs: cell_runs,
            });
        }
    }
    let study = CalibrationStudy {
        seed: config.seed,
        config: config.clone(),
        cells,
    };
    if let Some(path) = &config.out {
        write_json(path, &study)?;
    }
    Ok(study)
}

// ---------------------------------------------------------------------------
// SSL study

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub name: String,
    pub ssl: SslConfig,
    /// Test error of the EMA model per repeat.
    pub errors: Vec<f64>,
    pub eces: Vec<f64>,
    /// Mean `loss_total` over the trailing window, per repeat.
    pub final_losses: Vec<f64>,
    pub error: Summary,
    #[serde(skip)]
    pub logs: Vec<Vec<StepReport>>,
}

impl ArmResult {
    fn validate(&self, tol: f64) -> Result<()> {
        if !self.error.matches(&self.errors, tol) {
            return Err(Error::InvalidConfig(format!(
                "summary mismatch in arm {}",
                self.name
            )));
        }
        Ok(())
    }
}

/// Runs one training arm over all repeats. Data, split, initialization and
/// training randomness depend only on the master seed and the repeat, so
/// arms are paired.
pub fn run_ssl_arm(
    config: &ExperimentConfig,
    name: &str,
    ssl: &SslConfig,
    loss_window: usize,
) -> Result<ArmResult> {
    let engine = SslEngine::<f64>::new(ssl.clone())?;
    let mut errors = Vec::new();
    let mut eces = Vec::new();
    let mut final_losses = Vec::new();
    let mut logs = Vec::new();
    for repeat in 0..config.repeats {
        let data = repeat_data(config, repeat)?;
        let s = &data.split;
        let net_config = config.network.net_config(
            s.labeled.dim(),
            s.labeled.n_classes,
            derive_seed(config.seed, STREAM_INIT, repeat as u64),
        );
        let mut net = NetState::new(&net_config)?;
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_TRAIN, repeat as u64));
        let log = engine.train_loop(&mut net, &s.labeled, &s.unlabeled, None, &mut rng)?;
        let (err, cal) = evaluate_ema(&net, &s.test)?;
        errors.push(err);
        eces.push(cal.ece);
        let window = loss_window.max(1).min(log.len());
        final_losses.push(if window == 0 {
            f64::NAN
        } else {
            log[log.len() - window..]
                .iter()
                .map(|r| r.loss_total)
                .sum::<f64>()
                / window as f64
        });
        logs.push(log);
    }
    Ok(ArmResult {
        name: name.to_string(),
        ssl: ssl.clone(),
        error: Summary::of(&errors),
        errors,
        eces,
        final_losses,
        logs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SslStudy {
    pub seed: u64,
    pub config: ExperimentConfig,
    pub ssl: ArmResult,
    pub baseline: ArmResult,
}

impl SslStudy {
    pub fn validate(&self, tol: f64) -> Result<()> {
        self.ssl.validate(tol)?;
        self.baseline.validate(tol)
    }
}

/// Companion log path: `report.json` -> `report.repeat0.csv`.
pub fn log_path(out: &Path, repeat: usize) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    out.with_file_name(format!("{stem}.repeat{repeat}.csv"))
}

pub fn run_ssl(config: &ExperimentConfig) -> Result<SslStudy> {
    config.validate()?;
    let ssl = run_ssl_arm(config, "ssl", &config.ssl, config.sweep.loss_window)?;
    let baseline_cfg = SslConfig {
        lambda_u: 0.0,
        ..config.ssl.clone()
    };
    let baseline = run_ssl_arm(config, "baseline", &baseline_cfg, config.sweep.loss_window)?;
    let study = SslStudy {
        seed: config.seed,
        config: config.clone(),
        ssl,
        baseline,
    };
    if let Some(path) = &config.out {
        write_json(path, &study)?;
        for (repeat, log) in study.ssl.logs.iter().enumerate() {
            write_step_log(log, BufWriter::new(File::create(log_path(path, repeat))?))?;
        }
    }
    Ok(study)
}

// ---------------------------------------------------------------------------
// Threshold sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub c_thr: f64,
    pub test_error: Summary,
    pub final_training_loss: Summary,
    pub errors: Vec<f64>,
    pub final_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweep {
    pub seed: u64,
    pub config: ExperimentConfig,
    pub rows: Vec<SweepRow>,
}

pub fn run_threshold_sweep(config: &ExperimentConfig) -> Result<ThresholdSweep> {
    config.validate()?;
    let mut thresholds = config.sweep.thresholds.clone();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let mut rows = Vec::with_capacity(thresholds.len());
    for c_thr in thresholds {
        let ssl = SslConfig {
            c_thr,
            ..config.ssl.clone()
        };
        let arm = run_ssl_arm(
            config,
            &format!("c_thr={c_thr}"),
            &ssl,
            config.sweep.loss_window,
        )?;
        rows.push(SweepRow {
            c_thr,
            test_error: arm.error,
            final_training_loss: Summary::of(&arm.final_losses),
            errors: arm.errors,
            final_losses: arm.final_losses,
        });
    }
    let sweep = ThresholdSweep {
        seed: config.seed,
        config: config.clone(),
        rows,
    };
    if let Some(path) = &config.out {
        write_json(path, &sweep)?;
    }
    Ok(sweep)
}

// ---------------------------------------------------------------------------
// Ratio diagnostics

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub center: f64,
    /// Fraction of draws in the bin.
    pub hist_prob: f64,
    /// Probability of the bin under the tabulated CDF.
    pub pdf_prob: f64,
    pub hist_density: f64,
    pub pdf: f64,
    /// Empty when both kernel terms vanish at the bin centre.
    pub lambda_b: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaDiagnostics {
    pub seed: u64,
    pub config: ExperimentConfig,
    pub rows: Vec<DiagnosticsRow>,
}

impl LambdaDiagnostics {
    pub fn max_bin_deviation(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.hist_prob - r.pdf_prob).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn diagnostics_kernel(cfg: &AugmentorConfig) -> Result<KernelSpec<f64>> {
    match *cfg {
        AugmentorConfig::MixConfG { width } => KernelSpec::gaussian(width),
        AugmentorConfig::MixConfT { width } => KernelSpec::triangular(width),
        other => Err(Error::InvalidConfig(format!(
            "lambda diagnostics need a MixConf kernel, got {}",
            other.label()
        ))),
    }
}

/// Sidecar carrying config and seed for CSV outputs: `diag.csv` -> `diag.meta.json`.
pub fn meta_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    out.with_file_name(format!("{stem}.meta.json"))
}

pub fn run_lambda_diagnostics(config: &ExperimentConfig) -> Result<LambdaDiagnostics> {
    config.validate()?;
    let diag = &config.diagnostics;
    let spec = diagnostics_kernel(&diag.kernel)?;
    let dist = LambdaDistribution::new(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_DIAG, 0));
    let bins = diag.bins;
    let mut counts = vec![0usize; bins];
    for _ in 0..diag.draws {
        let l = dist.sample(&mut rng);
        counts[((l * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let width = 1.0 / bins as f64;
    let rows = counts
        .iter()
        .enumerate()
        .map(|(i, &count)| {
            let lo = i as f64 * width;
            let hi = (i + 1) as f64 * width;
            let center = (i as f64 + 0.5) * width;
            let hist_prob = count as f64 / diag.draws as f64;
            DiagnosticsRow {
                bin_lo: lo,
                bin_hi: hi,
                center,
                hist_prob,
                pdf_prob: dist.cdf(hi) - dist.cdf(lo),
                hist_density: hist_prob / width,
                pdf: dist.pdf(center),
                lambda_b: compute_lambda_b(&spec, center).ok(),
            }
        })
        .collect();
    let report = LambdaDiagnostics {
        seed: config.seed,
        config: config.clone(),
        rows,
    };
    if let Some(path) = &config.out {
        report.write_csv(BufWriter::new(File::create(path)?))?;
        write_json(
            &meta_path(path),
            &serde_json::json!({ "seed": config.seed, "config": config }),
        )?;
    }
    Ok(report)
}
