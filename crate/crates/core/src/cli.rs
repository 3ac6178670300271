//! `ncae` command-line front end.
//!
//! Every option is resolved as flag, then `key = value` line from the file
//! given by `--config`, then built-in default. Config keys are the long flag
//! names without the leading dashes (`lr = 1e-3`, `batch-size = 16`). The fully
//! resolved settings are written to `manifest.json` next to the outputs.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::audio::{read_wav, to_canonical, write_wav, AudioClip};
use crate::error::Error;
use crate::evaluation::{
    export_surface_csv, mix_seed, monte_carlo_sweep, summarize, summary_table, summary_to_csv,
    ModelFamily, SweepGrid, SweepSettings, SUMMARY_CSV_HEADER,
};
use crate::mfcc::{extract_mfcc, window_sequences, MfccConfig};
use crate::models::{build_model, load_model, save_model, Model};
use crate::nn::Tensor2D;
use crate::pipeline::{
    anomalous_fraction, calibrate_threshold, detect_stream, score_windows, train,
    write_detections_csv, ThresholdCalibration, TrainConfig,
};
use crate::synth::{
    clip_seeds, dataset_from_clips, gen_road_noise, make_dataset, DatasetConfig, RoadCondition,
    SynthConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] Error),
    /// The command ran but its check did not pass.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) | CliError::Failed(_) => EXIT_RUNTIME,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(
    name = "ncae",
    version,
    about = "Road-surface anomaly detection from tire noise"
)]
pub struct Cli {
    /// File of `key = value` lines supplying defaults for any flag.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a dry and a wet road-noise clip.
    GenData(GenDataArgs),
    /// Train a model on normal audio and calibrate its threshold.
    Train(TrainArgs),
    /// Stream a clip through a trained model and log decisions.
    Detect(DetectArgs),
    /// Monte Carlo sweep over kernel sizes and learning rates.
    Sweep(SweepArgs),
    /// Compare analytic gradients with central finite differences.
    GradCheck(GradCheckArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::Detect(_) => "detect",
            Command::Sweep(_) => "sweep",
            Command::GradCheck(_) => "grad-check",
        }
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Length of each clip in minutes [default: 2].
    #[arg(long)]
    pub minutes: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub sample_rate: Option<u32>,
    #[arg(long)]
    pub wet_hiss_gain: Option<f64>,
    #[arg(long)]
    pub wet_tilt: Option<f64>,
    #[arg(long)]
    pub engine_f0: Option<f64>,
    #[arg(long)]
    pub harmonics: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Model family: ncae or baseline.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub kernel: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Adam learning rate [default: 1e-3].
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// WAV clip of normal (dry) road noise.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub trials: Option<usize>,
    /// Comma-separated odd kernel sizes [default: 3,5,7].
    #[arg(long)]
    pub kernels: Option<String>,
    /// Comma-separated learning rates [default: 1e-2,1e-3,1e-4].
    #[arg(long)]
    pub lrs: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Synthetic clip length when `--data` is not given [default: 2].
    #[arg(long)]
    pub minutes: Option<f64>,
    /// Directory holding dry.wav and wet.wav.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Time steps of the random input window.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub kernels: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Scale the first gradient tensor by 1.1 before checking.
    #[arg(long)]
    pub inject_fault: bool,
    /// Optional directory for report.json and the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Map<String, Value>,
    pub master_seed: u64,
    pub tool_version: String,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> crate::Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("manifest: {e}")))?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> crate::Result<Self> {
        serde_json::from_str(&fs::read_to_string(path)?)
            .map_err(|e| Error::Format(format!("manifest {}: {e}", path.display())))
    }
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("config line {}: expected key = value", n + 1)))?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() {
            return Err(usage(format!("config line {}: empty key", n + 1)));
        }
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(usage(format!("config line {}: duplicate key {key}", n + 1)));
        }
    }
    Ok(out)
}

/// Resolves options in precedence order and records the result.
struct Resolver {
    file: BTreeMap<String, String>,
    used: BTreeSet<String>,
    resolved: Map<String, Value>,
}

impl Resolver {
    fn new(config: Option<&Path>) -> CliResult<Self> {
        let file = match config {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| usage(format!("--config: cannot read {}: {e}", p.display())))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        Ok(Self {
            file,
            used: BTreeSet::new(),
            resolved: Map::new(),
        })
    }

    fn lookup<T>(&mut self, key: &str, flag: Option<T>) -> CliResult<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            Some(text) => text.parse().map(Some).map_err(|e| {
                usage(format!(
                    "--{key}: invalid value '{text}' in config file: {e}"
                ))
            }),
            None => Ok(None),
        }
    }

    fn record<T: Serialize>(&mut self, key: &str, value: &T) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.resolved.insert(key.to_string(), v);
    }

    fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> CliResult<T>
    where
        T: FromStr + Serialize,
        T::Err: Display,
    {
        let value = self.lookup(key, flag)?.unwrap_or(default);
        self.record(key, &value);
        Ok(value)
    }

    fn optional<T>(&mut self, key: &str, flag: Option<T>) -> CliResult<Option<T>>
    where
        T: FromStr + Serialize,
        T::Err: Display,
    {
        let value = self.lookup(key, flag)?;
        self.record(key, &value);
        Ok(value)
    }

    fn required<T>(&mut self, key: &str, flag: Option<T>) -> CliResult<T>
    where
        T: FromStr + Serialize,
        T::Err: Display,
    {
        self.optional(key, flag)?
            .ok_or_else(|| usage(format!("--{key} is required")))
    }

    /// Rejects config-file keys the command never asked for.
    fn finish(self) -> CliResult<Map<String, Value>> {
        if let Some(k) = self.file.keys().find(|k| !self.used.contains(*k)) {
            return Err(usage(format!(
                "config file key '{k}' is not an option of this command"
            )));
        }
        Ok(self.resolved)
    }
}

fn parse_list<T>(key: &str, text: &str) -> CliResult<Vec<T>>
where
    T: FromStr,
    T::Err: Display,
{
    let items: Vec<T> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|e| usage(format!("--{key}: invalid entry '{s}': {e}")))
        })
        .collect::<CliResult<_>>()?;
    if items.is_empty() {
        return Err(usage(format!("--{key} must list at least one value")));
    }
    Ok(items)
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> CliResult<()> {
    if cond {
        Ok(())
    } else {
        Err(usage(msg()))
    }
}

fn check_kernel(key: &str, k: usize) -> CliResult<()> {
    check(k % 2 == 1, || format!("--{key} must be odd, got {k}"))
}

fn positive_f64(key: &str, v: f64) -> CliResult<()> {
    check(v > 0.0 && v.is_finite(), || {
        format!("--{key} must be positive, got {v}")
    })
}

fn positive_usize(key: &str, v: usize) -> CliResult<()> {
    check(v > 0, || format!("--{key} must be at least 1"))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(e.into()))
}

fn write_manifest(
    command: &str,
    config: Map<String, Value>,
    master_seed: u64,
    dir: &Path,
) -> CliResult<()> {
    let manifest = RunManifest {
        command: command.to_string(),
        config,
        master_seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    manifest.write(dir)?;
    Ok(())
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> CliResult<()> {
    let mut r = Resolver::new(cli.config.as_deref())?;
    let name = cli.command.name();
    match cli.command {
        Command::GenData(a) => cmd_gen_data(name, a, &mut r).and_then(|f| f(r)),
        Command::Train(a) => cmd_train(name, a, &mut r).and_then(|f| f(r)),
        Command::Detect(a) => cmd_detect(name, a, &mut r).and_then(|f| f(r)),
        Command::Sweep(a) => cmd_sweep(name, a, &mut r).and_then(|f| f(r)),
        Command::GradCheck(a) => cmd_grad_check(name, a, &mut r).and_then(|f| f(r)),
    }
}

/// Work left after option resolution; it receives the resolver so unknown
/// config keys are rejected before anything runs.
type Job = Box<dyn FnOnce(Resolver) -> CliResult<()>>;

fn cmd_gen_data(name: &'static str, a: GenDataArgs, r: &mut Resolver) -> CliResult<Job> {
    let d = SynthConfig::default();
    let seed = r.get("seed", a.seed, 0)?;
    let minutes = r.get("minutes", a.minutes, d.duration_seconds / 60.0)?;
    positive_f64("minutes", minutes)?;
    let out: PathBuf = r.required("out", a.out)?;
    let synth = SynthConfig {
        duration_seconds: minutes * 60.0,
        seed,
        sample_rate: r.get("sample-rate", a.sample_rate, d.sample_rate)?,
        wet_hiss_gain: r.get("wet-hiss-gain", a.wet_hiss_gain, d.wet_hiss_gain)?,
        wet_tilt_db_per_octave: r.get("wet-tilt", a.wet_tilt, d.wet_tilt_db_per_octave)?,
        engine_f0: r.get("engine-f0", a.engine_f0, d.engine_f0)?,
        harmonics: r.get("harmonics", a.harmonics, d.harmonics)?,
    };
    synth.validate().map_err(|e| usage(e.to_string()))?;
    Ok(Box::new(move |r: Resolver| {
        let config = r.finish()?;
        create_dir(&out)?;
        let (dry_seed, wet_seed) = clip_seeds(seed);
        for (condition, s) in [
            (RoadCondition::Dry, dry_seed),
            (RoadCondition::Wet, wet_seed),
        ] {
            let clip = gen_road_noise(condition, &SynthConfig { seed: s, ..synth })?;
            let path = out.join(format!("{}.wav", condition.as_str()));
            write_wav(&clip, &path)?;
            println!(
                "wrote {} ({:.1} s)",
                path.display(),
                clip.duration_seconds()
            );
        }
        write_manifest(name, config, seed, &out)
    }))
}

fn load_frames(path: &Path, mfcc: &MfccConfig) -> CliResult<Option<Tensor2D>> {
    let clip: AudioClip = to_canonical(&read_wav(path)?)?;
    if clip.len() < mfcc.frame_len {
        return Ok(None);
    }
    Ok(Some(extract_mfcc(&clip, mfcc)?.frames))
}

fn cmd_train(name: &'static str, a: TrainArgs, r: &mut Resolver) -> CliResult<Job> {
    let defaults = TrainConfig::default();
    let family: ModelFamily = r
        .get("model", a.model, "ncae".to_string())?
        .parse()
        .map_err(|e: Error| usage(format!("--model: {e}")))?;
    let kernel = r.get("kernel", a.kernel, 3usize)?;
    if family == ModelFamily::Ncae {
        check_kernel("kernel", kernel)?;
    }
    let hidden = r.get("hidden", a.hidden, crate::models::DEFAULT_HIDDEN)?;
    positive_usize("hidden", hidden)?;
    let seed = r.get("seed", a.seed, 0)?;
    let config = TrainConfig {
        learning_rate: r.get("lr", a.lr, defaults.learning_rate)?,
        epochs: r.get("epochs", a.epochs, defaults.epochs)?,
        batch_size: r.get("batch-size", a.batch_size, defaults.batch_size)?,
        seed: mix_seed(seed),
        window: r.get("window", a.window, defaults.window)?,
        stride: r.get("stride", a.stride, defaults.stride)?,
    };
    positive_f64("lr", config.learning_rate)?;
    positive_usize("epochs", config.epochs)?;
    positive_usize("batch-size", config.batch_size)?;
    positive_usize("window", config.window)?;
    positive_usize("stride", config.stride)?;
    let input: PathBuf = r.required("input", a.input)?;
    let out: PathBuf = r.required("out", a.out)?;
    let mfcc = MfccConfig::default();
    r.record("mfcc", &mfcc);
    let kernel = (family == ModelFamily::Ncae).then_some(kernel);
    let arch = family.architecture(kernel, hidden, mfcc.n_coeffs);
    arch.validate()
        .map_err(|e| usage(format!("--hidden: {e}")))?;

    Ok(Box::new(move |r: Resolver| {
        let manifest_config = r.finish()?;
        let frames = load_frames(&input, &mfcc)?
            .ok_or(Error::Empty("training clip is shorter than one frame"))?;
        let windows = window_sequences(&frames, config.window, config.stride)?;
        let mut model = build_model(arch, seed)?;
        let start = Instant::now();
        let history = train(&mut model, &windows, &config)?;
        let calibration = calibrate_threshold(&score_windows(&model, &windows)?)?;
        create_dir(&out)?;
        save_model(&model, out.join("model.ncae"))?;
        fs::write(out.join("calibration.json"), calibration.to_json()).map_err(Error::from)?;
        let mut loss_csv = String::from("epoch,loss\n");
        for (i, l) in history.iter().enumerate() {
            loss_csv.push_str(&format!("{},{:.16e}\n", i + 1, l));
        }
        fs::write(out.join("loss.csv"), loss_csv).map_err(Error::from)?;
        write_manifest(name, manifest_config, seed, &out)?;
        println!(
            "trained {} on {} windows in {:.1} s; final loss {:.6}; theta {:.6}",
            arch.tag(),
            windows.len(),
            start.elapsed().as_secs_f64(),
            history.last().copied().unwrap_or(f64::NAN),
            calibration.theta
        );
        Ok(())
    }))
}

fn cmd_detect(name: &'static str, a: DetectArgs, r: &mut Resolver) -> CliResult<Job> {
    let defaults = TrainConfig::default();
    let checkpoint: PathBuf = r.required("checkpoint", a.checkpoint)?;
    let calibration_path: PathBuf = r.required("calibration", a.calibration)?;
    let input: PathBuf = r.required("input", a.input)?;
    let out: PathBuf = r.required("out", a.out)?;
    let window = r.get("window", a.window, defaults.window)?;
    let stride = r.get("stride", a.stride, defaults.stride)?;
    positive_usize("window", window)?;
    positive_usize("stride", stride)?;
    let mfcc = MfccConfig::default();
    r.record("mfcc", &mfcc);

    Ok(Box::new(move |r: Resolver| {
        let config = r.finish()?;
        let model: Model = load_model(&checkpoint)?;
        let calibration = ThresholdCalibration::from_json(
            &fs::read_to_string(&calibration_path).map_err(Error::from)?,
        )?;
        if model.arch().input_channels() != mfcc.n_coeffs {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint expects {} coefficients per frame, features have {}",
                model.arch().input_channels(),
                mfcc.n_coeffs
            ))
            .into());
        }
        let frames = load_frames(&input, &mfcc)?;
        let rows = frames.map(|f| f.to_rows()).unwrap_or_default();
        let records = detect_stream(&model, &calibration, rows, window, stride)?;
        create_dir(&out)?;
        write_detections_csv(&records, &calibration, out.join("detections.csv"))?;
        write_manifest(name, config, 0, &out)?;
        println!(
            "{} windows, anomalous fraction {:.4}",
            records.len(),
            anomalous_fraction(&records)
        );
        Ok(())
    }))
}

fn cmd_sweep(name: &'static str, a: SweepArgs, r: &mut Resolver) -> CliResult<Job> {
    let sd = SweepSettings::default();
    let gd = SweepGrid::default();
    let dd = DatasetConfig::default();
    let join = |v: &[String]| v.join(",");
    let trials = r.get("trials", a.trials, sd.trials)?;
    positive_usize("trials", trials)?;
    let kernels_text = r.get(
        "kernels",
        a.kernels,
        join(
            &gd.kernel_sizes
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>(),
        ),
    )?;
    let kernel_sizes: Vec<usize> = parse_list("kernels", &kernels_text)?;
    for &k in &kernel_sizes {
        check_kernel("kernels", k)?;
    }
    let lrs_text = r.get(
        "lrs",
        a.lrs,
        join(
            &gd.learning_rates
                .iter()
                .map(|v| format!("{v:e}"))
                .collect::<Vec<_>>(),
        ),
    )?;
    let learning_rates: Vec<f64> = parse_list("lrs", &lrs_text)?;
    for &lr in &learning_rates {
        positive_f64("lrs", lr)?;
    }
    let seed = r.get("seed", a.seed, sd.master_seed)?;
    let data_dir: Option<PathBuf> = r.optional("data", a.data)?;
    let minutes = r.get("minutes", a.minutes, dd.synth.duration_seconds / 60.0)?;
    positive_f64("minutes", minutes)?;
    let hidden = r.get("hidden", a.hidden, sd.hidden_width)?;
    positive_usize("hidden", hidden)?;
    let train_cfg = TrainConfig {
        epochs: r.get("epochs", a.epochs, sd.train.epochs)?,
        batch_size: r.get("batch-size", a.batch_size, sd.train.batch_size)?,
        window: r.get("window", a.window, sd.train.window)?,
        stride: r.get("stride", a.stride, sd.train.stride)?,
        ..sd.train
    };
    positive_usize("epochs", train_cfg.epochs)?;
    positive_usize("batch-size", train_cfg.batch_size)?;
    positive_usize("window", train_cfg.window)?;
    positive_usize("stride", train_cfg.stride)?;
    let train_fraction = r.get("train-fraction", a.train_fraction, dd.train_fraction)?;
    check(train_fraction > 0.0 && train_fraction < 1.0, || {
        format!("--train-fraction must lie in (0, 1), got {train_fraction}")
    })?;
    let out: PathBuf = r.required("out", a.out)?;
    let dataset = DatasetConfig {
        synth: SynthConfig {
            duration_seconds: minutes * 60.0,
            seed,
            ..dd.synth
        },
        window: train_cfg.window,
        stride: train_cfg.stride,
        train_fraction,
        ..dd
    };
    r.record("mfcc", &dataset.mfcc);
    let grid = SweepGrid {
        kernel_sizes,
        learning_rates,
    };
    let settings = SweepSettings {
        trials,
        master_seed: seed,
        hidden_width: hidden,
        train: train_cfg,
        parallel: true,
    };
    for family in [ModelFamily::Ncae, ModelFamily::Baseline] {
        for &k in &grid.kernel_sizes {
            let kernel = (family == ModelFamily::Ncae).then_some(k);
            family
                .architecture(kernel, hidden, dataset.mfcc.n_coeffs)
                .validate()
                .map_err(|e| usage(format!("--hidden: {e}")))?;
        }
    }

    Ok(Box::new(move |r: Resolver| {
        let config = r.finish()?;
        let data = match &data_dir {
            Some(dir) => {
                let dry = to_canonical(&read_wav(dir.join("dry.wav"))?)?;
                let wet = to_canonical(&read_wav(dir.join("wet.wav"))?)?;
                dataset_from_clips(&dry, &wet, &dataset)?
            }
            None => make_dataset(&dataset)?,
        };
        create_dir(&out)?;
        let mut table = String::new();
        let mut csv = String::from(SUMMARY_CSV_HEADER);
        csv.push('\n');
        for family in [ModelFamily::Ncae, ModelFamily::Baseline] {
            let surface = monte_carlo_sweep(family, &grid, &settings, &data)?;
            export_surface_csv(
                &surface,
                out.join(format!("{}_surface.csv", family.as_str())),
            )?;
            let summary = summarize(&surface)?;
            table.push_str(&summary_table(&summary));
            table.push('\n');
            csv.extend(
                summary_to_csv(&summary)
                    .lines()
                    .skip(1)
                    .map(|l| format!("{l}\n")),
            );
        }
        fs::write(out.join("summary.txt"), &table).map_err(Error::from)?;
        fs::write(out.join("summary.csv"), csv).map_err(Error::from)?;
        write_manifest(name, config, seed, &out)?;
        print!("{table}");
        Ok(())
    }))
}

#[derive(Debug, Serialize)]
struct GradCheckEntry {
    model: String,
    tensor: String,
    coordinates: usize,
    max_rel_error: f64,
}

fn cmd_grad_check(name: &'static str, a: GradCheckArgs, r: &mut Resolver) -> CliResult<Job> {
    let step = r.get("step", a.step, 1e-6)?;
    positive_f64("step", step)?;
    let tolerance = r.get("tolerance", a.tolerance, 1e-6)?;
    positive_f64("tolerance", tolerance)?;
    let steps = r.get("steps", a.steps, 32usize)?;
    positive_usize("steps", steps)?;
    let channels = r.get("channels", a.channels, MfccConfig::default().n_coeffs)?;
    positive_usize("channels", channels)?;
    let hidden = r.get("hidden", a.hidden, crate::models::DEFAULT_HIDDEN)?;
    let kernels_text = r.get("kernels", a.kernels, "3,5,7".to_string())?;
    let kernels: Vec<usize> = parse_list("kernels", &kernels_text)?;
    for &k in &kernels {
        check_kernel("kernels", k)?;
    }
    let seed = r.get("seed", a.seed, 0)?;
    let inject_fault = r.get("inject-fault", a.inject_fault.then_some(true), false)?;
    let out: Option<PathBuf> = r.optional("out", a.out)?;
    let mut archs: Vec<_> = kernels
        .iter()
        .map(|&k| ModelFamily::Ncae.architecture(Some(k), hidden, channels))
        .collect();
    archs.push(ModelFamily::Baseline.architecture(None, hidden, channels));
    for arch in &archs {
        arch.validate()
            .map_err(|e| usage(format!("--hidden: {e}")))?;
    }

    Ok(Box::new(move |r: Resolver| {
        let config = r.finish()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..steps * channels)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let x = Tensor2D::from_vec(steps, channels, data)?;
        let start = Instant::now();
        let mut worst = 0.0f64;
        let mut entries = Vec::new();
        for arch in archs {
            let mut model = build_model(arch, seed)?;
            model.compute_gradients(&x)?;
            if inject_fault {
                model
                    .params_mut()
                    .get_mut(0)
                    .grad
                    .iter_mut()
                    .for_each(|g| *g *= 1.1);
            }
            let report = model.check_stored_gradients(&x, step)?;
            let label = match arch.kernel_size() {
                Some(k) => format!("{} k={k}", arch.tag()),
                None => arch.tag().to_string(),
            };
            println!("{label}: max rel err {:.3e}", report.max_rel_error);
            for t in &report.tensors {
                println!(
                    "  {:<24} {:>7} coords  max rel err {:.3e}",
                    t.name, t.coordinates, t.max_rel_error
                );
                entries.push(GradCheckEntry {
                    model: label.clone(),
                    tensor: t.name.clone(),
                    coordinates: t.coordinates,
                    max_rel_error: t.max_rel_error,
                });
            }
            worst = worst.max(report.max_rel_error);
        }
        let passed = worst < tolerance;
        println!(
            "overall max rel err {worst:.3e} {} {tolerance:e} ({:.1} s)",
            if passed { "<" } else { ">=" },
            start.elapsed().as_secs_f64()
        );
        if let Some(dir) = &out {
            create_dir(dir)?;
            let report = serde_json::json!({
                "max_rel_error": worst,
                "tolerance": tolerance,
                "passed": passed,
                "tensors": entries,
            });
            let text =
                serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
            fs::write(dir.join("report.json"), text).map_err(Error::from)?;
            write_manifest(name, config, seed, dir)?;
        }
        if passed {
            Ok(())
        } else {
            Err(CliError::Failed(format!(
                "gradient check failed: max rel err {worst:e} >= {tolerance:e}"
            )))
        }
    }))
}
