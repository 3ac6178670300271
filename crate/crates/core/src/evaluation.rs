//! AUROC, inference timing, and seeded Monte Carlo hyperparameter sweeps.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{build_model, Architecture, BaselineSpec, Model, NcaeSpec};
use crate::nn::Tensor2D;
use crate::pipeline::{
    calibrate_threshold, score_windows, train, ThresholdCalibration, TrainConfig,
};
use crate::synth::DatasetBundle;

/// Probability that a random abnormal score exceeds a random normal one,
/// ties counted as one half (the Mann-Whitney form of the ROC area).
pub fn auroc(normal_scores: &[f64], abnormal_scores: &[f64]) -> Result<f64> {
    if normal_scores.is_empty() || abnormal_scores.is_empty() {
        return Err(Error::Empty("AUROC needs both normal and abnormal scores"));
    }
    if normal_scores
        .iter()
        .chain(abnormal_scores)
        .any(|s| s.is_nan())
    {
        return Err(Error::NonFinite("NaN score passed to AUROC".into()));
    }
    let mut sorted = normal_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    // twice the pair count, so ties stay integral
    let mut doubled: u128 = 0;
    for &a in abnormal_scores {
        let below = sorted.partition_point(|&n| n < a);
        let not_above = sorted.partition_point(|&n| n <= a);
        doubled += 2 * below as u128 + (not_above - below) as u128;
    }
    let pairs = normal_scores.len() as f64 * abnormal_scores.len() as f64;
    Ok(doubled as f64 / 2.0 / pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Arithmetic mean and population standard deviation.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let (mean, std) = crate::pipeline::mean_and_std(values);
        Some(Self { mean, std })
    }
}

/// Seconds per single-window forward pass, over `repetitions` passes through
/// every window. One warm-up pass runs first and is not counted.
pub fn time_inference(model: &Model, windows: &[Tensor2D], repetitions: usize) -> Result<MeanStd> {
    let first = windows.first().ok_or(Error::Empty("no windows to time"))?;
    if repetitions == 0 {
        return Err(Error::InvalidArgument(
            "repetitions must be at least 1".into(),
        ));
    }
    std::hint::black_box(model.forward(first)?);
    let mut samples = Vec::with_capacity(windows.len() * repetitions);
    for _ in 0..repetitions {
        for w in windows {
            let start = Instant::now();
            std::hint::black_box(model.forward(w)?);
            samples.push(start.elapsed().as_secs_f64());
        }
    }
    Ok(MeanStd::of(&samples).expect("non-empty"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Ncae,
    Baseline,
}

impl ModelFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelFamily::Ncae => "ncae",
            ModelFamily::Baseline => "baseline",
        }
    }

    pub fn architecture(
        &self,
        kernel_size: Option<usize>,
        hidden: usize,
        channels: usize,
    ) -> Architecture {
        match self {
            ModelFamily::Ncae => {
                Architecture::Ncae(NcaeSpec::new(kernel_size.unwrap_or(3), hidden, channels))
            }
            ModelFamily::Baseline => Architecture::Baseline(BaselineSpec::new(hidden, channels)),
        }
    }
}

impl std::str::FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ncae" => Ok(ModelFamily::Ncae),
            "baseline" => Ok(ModelFamily::Baseline),
            other => Err(Error::InvalidArgument(format!(
                "unknown model family {other:?} (expected ncae or baseline)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub kernel_sizes: Vec<usize>,
    pub learning_rates: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            kernel_sizes: vec![3, 5, 7],
            learning_rates: vec![1e-2, 1e-3, 1e-4],
        }
    }
}

/// Everything a sweep needs besides the grid and the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub trials: usize,
    pub master_seed: u64,
    pub hidden_width: usize,
    /// Epochs, batch size, window and stride; learning rate and seed are
    /// overridden per point.
    pub train: TrainConfig,
    /// Run grid points on the rayon pool. Timings are noisier when set.
    pub parallel: bool,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            trials: 10,
            master_seed: 0,
            hidden_width: crate::models::DEFAULT_HIDDEN,
            train: TrainConfig::default(),
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// `None` for families without a kernel axis.
    pub kernel_size: Option<usize>,
    pub learning_rate: f64,
    pub trial: usize,
    pub seed: u64,
    /// `None` when training diverged.
    pub auroc: Option<f64>,
    pub train_seconds: f64,
    pub infer_seconds_per_window: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSurface {
    pub family: ModelFamily,
    pub trials: usize,
    pub points: Vec<SweepPoint>,
}

/// SplitMix64 finalizer, used to derive independent trial seeds.
pub fn mix_seed(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for trial `trial` of a sweep. Every grid cell shares the same trial
/// seeds, so cells differ only in their hyperparameters.
pub fn trial_seed(master_seed: u64, trial: usize) -> u64 {
    mix_seed(mix_seed(master_seed) ^ trial as u64)
}

/// Outcome of one train/calibrate/score cycle.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub model: Model,
    pub calibration: Option<ThresholdCalibration>,
    pub auroc: Option<f64>,
    pub normal_scores: Vec<f64>,
    pub abnormal_scores: Vec<f64>,
    pub train_seconds: f64,
    pub infer_seconds_per_window: f64,
    pub loss_history: Vec<f64>,
}

/// Fresh seeded model, trained on the normal windows, calibrated on the
/// training scores and evaluated on the held-out windows. Divergence yields
/// an outcome with `auroc == None` rather than an error.
pub fn run_trial(
    arch: Architecture,
    data: &DatasetBundle,
    config: &TrainConfig,
) -> Result<TrialOutcome> {
    let mut model = build_model(arch, config.seed)?;
    let train_cfg = TrainConfig {
        seed: mix_seed(config.seed),
        ..*config
    };
    let start = Instant::now();
    let trained = train(&mut model, &data.train_normal, &train_cfg);
    let train_seconds = start.elapsed().as_secs_f64();
    let loss_history = match trained {
        Ok(h) => h,
        Err(Error::Diverged { .. }) => {
            return Ok(TrialOutcome {
                model,
                calibration: None,
                auroc: None,
                normal_scores: Vec::new(),
                abnormal_scores: Vec::new(),
                train_seconds,
                infer_seconds_per_window: 0.0,
                loss_history: Vec::new(),
            })
        }
        Err(e) => return Err(e),
    };
    let train_scores = score_windows(&model, &data.train_normal)?;
    let calibration = calibrate_threshold(&train_scores).ok();

    let start = Instant::now();
    let normal_scores = score_windows(&model, &data.test_normal)?;
    let abnormal_scores = score_windows(&model, &data.test_abnormal)?;
    let count = (normal_scores.len() + abnormal_scores.len()).max(1);
    let infer_seconds_per_window = start.elapsed().as_secs_f64() / count as f64;

    let finite = normal_scores
        .iter()
        .chain(&abnormal_scores)
        .all(|s| s.is_finite());
    let auroc = if finite {
        Some(auroc(&normal_scores, &abnormal_scores)?)
    } else {
        None
    };
    Ok(TrialOutcome {
        model,
        calibration,
        auroc,
        normal_scores,
        abnormal_scores,
        train_seconds,
        infer_seconds_per_window,
        loss_history,
    })
}

/// Trains and evaluates `settings.trials` models for every grid cell.
///
/// The baseline family ignores the kernel axis and produces a single kernel
/// coordinate. Points come back ordered by (kernel, learning rate, trial)
/// in grid order regardless of execution order.
pub fn monte_carlo_sweep(
    family: ModelFamily,
    grid: &SweepGrid,
    settings: &SweepSettings,
    data: &DatasetBundle,
) -> Result<SweepSurface> {
    if settings.trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    if grid.learning_rates.is_empty() {
        return Err(Error::InvalidArgument("learning-rate grid is empty".into()));
    }
    if data.train_normal.is_empty() || data.test_normal.is_empty() || data.test_abnormal.is_empty()
    {
        return Err(Error::Empty(
            "dataset needs training, normal test and abnormal test windows",
        ));
    }
    let kernels: Vec<Option<usize>> = match family {
        ModelFamily::Ncae => {
            if grid.kernel_sizes.is_empty() {
                return Err(Error::InvalidArgument("kernel grid is empty".into()));
            }
            grid.kernel_sizes.iter().map(|&k| Some(k)).collect()
        }
        ModelFamily::Baseline => vec![None],
    };
    let channels = data.train_normal[0].channels();
    let mut jobs = Vec::new();
    for &k in &kernels {
        let arch = family.architecture(k, settings.hidden_width, channels);
        arch.validate()?;
        for &lr in &grid.learning_rates {
            for trial in 0..settings.trials {
                jobs.push((k, arch, lr, trial));
            }
        }
    }
    let run =
        |&(kernel_size, arch, learning_rate, trial): &(Option<usize>, Architecture, f64, usize)| {
            let seed = trial_seed(settings.master_seed, trial);
            let cfg = TrainConfig {
                learning_rate,
                seed,
                ..settings.train
            };
            let outcome = run_trial(arch, data, &cfg)?;
            Ok(SweepPoint {
                kernel_size,
                learning_rate,
                trial,
                seed,
                auroc: outcome.auroc,
                train_seconds: outcome.train_seconds,
                infer_seconds_per_window: outcome.infer_seconds_per_window,
            })
        };
    let points = if settings.parallel {
        jobs.par_iter().map(run).collect::<Result<Vec<_>>>()?
    } else {
        jobs.iter().map(run).collect::<Result<Vec<_>>>()?
    };
    Ok(SweepSurface {
        family,
        trials: settings.trials,
        points,
    })
}

pub const SURFACE_CSV_HEADER: &str =
    "kernel_size,learning_rate,trial,seed,auroc,train_seconds,infer_seconds_per_window";

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn surface_to_csv(surface: &SweepSurface) -> String {
    let mut out = String::from(SURFACE_CSV_HEADER);
    out.push('\n');
    for p in &surface.points {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.kernel_size.map(|k| k.to_string()).unwrap_or_default(),
            fmt_f64(p.learning_rate),
            p.trial,
            p.seed,
            p.auroc.map(fmt_f64).unwrap_or_else(|| "nan".into()),
            fmt_f64(p.train_seconds),
            fmt_f64(p.infer_seconds_per_window),
        )
        .expect("writing to a String");
    }
    out
}

pub fn export_surface_csv(surface: &SweepSurface, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, surface_to_csv(surface))?;
    Ok(())
}

/// Parses rows written by [`surface_to_csv`].
pub fn parse_surface_csv(text: &str) -> Result<Vec<SweepPoint>> {
    let mut lines = text.lines();
    if lines.next() != Some(SURFACE_CSV_HEADER) {
        return Err(Error::InvalidArgument("surface CSV header mismatch".into()));
    }
    let bad = |line: usize, what: &str| {
        Error::InvalidArgument(format!("surface CSV line {line}: {what}"))
    };
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(i + 2, "expected 7 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 2, "bad number"));
            Ok(SweepPoint {
                kernel_size: if f[0].is_empty() {
                    None
                } else {
                    Some(f[0].parse().map_err(|_| bad(i + 2, "bad kernel"))?)
                },
                learning_rate: num(f[1])?,
                trial: f[2].parse().map_err(|_| bad(i + 2, "bad trial"))?,
                seed: f[3].parse().map_err(|_| bad(i + 2, "bad seed"))?,
                auroc: if f[4] == "nan" {
                    None
                } else {
                    Some(num(f[4])?)
                },
                train_seconds: num(f[5])?,
                infer_seconds_per_window: num(f[6])?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub kernel_size: Option<usize>,
    pub learning_rate: f64,
    pub valid: usize,
    pub invalid: usize,
    /// `None` when every trial in the cell diverged.
    pub auroc: Option<MeanStd>,
    pub train_seconds: Option<MeanStd>,
    pub infer_seconds: Option<MeanStd>,
}

impl CellSummary {
    pub fn all_invalid(&self) -> bool {
        self.valid == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub family: ModelFamily,
    pub cells: Vec<CellSummary>,
    /// Index into `cells` of the highest mean AUROC (ties: lower mean
    /// inference time). `None` if every cell is invalid.
    pub best: Option<usize>,
}

impl SweepSummary {
    pub fn best_cell(&self) -> Option<&CellSummary> {
        self.best.map(|i| &self.cells[i])
    }
}

pub fn summarize(surface: &SweepSurface) -> Result<SweepSummary> {
    if surface.points.is_empty() {
        return Err(Error::Empty("surface has no points"));
    }
    let mut keys: Vec<(Option<usize>, f64)> = Vec::new();
    for p in &surface.points {
        let key = (p.kernel_size, p.learning_rate);
        if !keys
            .iter()
            .any(|k| k.0 == key.0 && k.1.to_bits() == key.1.to_bits())
        {
            keys.push(key);
        }
    }
    let cells: Vec<CellSummary> = keys
        .into_iter()
        .map(|(kernel_size, learning_rate)| {
            let members: Vec<&SweepPoint> = surface
                .points
                .iter()
                .filter(|p| {
                    p.kernel_size == kernel_size
                        && p.learning_rate.to_bits() == learning_rate.to_bits()
                })
                .collect();
            let valid: Vec<&&SweepPoint> = members.iter().filter(|p| p.auroc.is_some()).collect();
            let collect = |f: &dyn Fn(&SweepPoint) -> f64| {
                MeanStd::of(&valid.iter().map(|p| f(p)).collect::<Vec<_>>())
            };
            CellSummary {
                kernel_size,
                learning_rate,
                valid: valid.len(),
                invalid: members.len() - valid.len(),
                auroc: collect(&|p| p.auroc.expect("filtered")),
                train_seconds: collect(&|p| p.train_seconds),
                infer_seconds: collect(&|p| p.infer_seconds_per_window),
            }
        })
        .collect();
    let best = cells
        .iter()
        .enumerate()
        .filter_map(|(i, c)| Some((i, c.auroc?.mean, c.infer_seconds?.mean)))
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.2.total_cmp(&a.2)))
        .map(|(i, _, _)| i);
    Ok(SweepSummary {
        family: surface.family,
        cells,
        best,
    })
}

fn fmt_ms(m: Option<MeanStd>, digits: usize) -> String {
    match m {
        Some(m) => format!("{:.*} ± {:.*}", digits, m.mean, digits, m.std),
        None => "invalid".into(),
    }
}

/// Aligned plain-text table, one row per cell, best cell marked with `*`.
pub fn summary_table(summary: &SweepSummary) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<9} {:>6} {:>10} {:>7}  {:<22} {:<26} {:<26}",
        "family", "kernel", "lr", "valid", "auroc", "train_s", "infer_s_per_window"
    )
    .expect("string");
    for (i, c) in summary.cells.iter().enumerate() {
        let mark = if summary.best == Some(i) { "*" } else { " " };
        writeln!(
            out,
            "{:<9} {:>6} {:>10.1e} {:>3}/{:<3}  {:<22} {:<26} {:<26}{}",
            summary.family.as_str(),
            c.kernel_size
                .map(|k| k.to_string())
                .unwrap_or_else(|| "-".into()),
            c.learning_rate,
            c.valid,
            c.valid + c.invalid,
            fmt_ms(c.auroc, 5),
            fmt_ms(c.train_seconds, 3),
            fmt_ms(c.infer_seconds, 7),
            mark
        )
        .expect("string");
    }
    out
}

pub const SUMMARY_CSV_HEADER: &str = "family,kernel_size,learning_rate,valid,invalid,auroc_mean,auroc_std,train_seconds_mean,train_seconds_std,infer_seconds_mean,infer_seconds_std,best";

pub fn summary_to_csv(summary: &SweepSummary) -> String {
    let mut out = String::from(SUMMARY_CSV_HEADER);
    out.push('\n');
    let pair = |m: Option<MeanStd>| match m {
        Some(m) => format!("{},{}", fmt_f64(m.mean), fmt_f64(m.std)),
        None => "nan,nan".into(),
    };
    for (i, c) in summary.cells.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            summary.family.as_str(),
            c.kernel_size.map(|k| k.to_string()).unwrap_or_default(),
            fmt_f64(c.learning_rate),
            c.valid,
            c.invalid,
            pair(c.auroc),
            pair(c.train_seconds),
            pair(c.infer_seconds),
            u8::from(summary.best == Some(i)),
        )
        .expect("string");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(normal: &[f64], abnormal: &[f64]) -> f64 {
        let mut s = 0.0;
        for &n in normal {
            for &a in abnormal {
                s += if a > n {
                    1.0
                } else if a == n {
                    0.5
                } else {
                    0.0
                };
            }
        }
        s / (normal.len() as f64 * abnormal.len() as f64)
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.2], &[0.3, 0.4]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.1, 0.3], &[0.2, 0.4]).unwrap(), 0.75);
        assert_eq!(brute(&[0.1, 0.3], &[0.2, 0.4]), 0.75);
        assert_eq!(auroc(&[0.5, 0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.5);
        assert!(auroc(&[], &[1.0]).is_err());
        assert!(auroc(&[1.0], &[f64::NAN]).is_err());
    }

    #[test]
    fn mean_std() {
        let m = MeanStd::of(&[0.9, 1.0]).unwrap();
        assert!((m.mean - 0.95).abs() < 1e-15 && (m.std - 0.05).abs() < 1e-15);
        assert_eq!(MeanStd::of(&[0.7]).unwrap().std, 0.0);
        assert!(MeanStd::of(&[]).is_none());
    }

    fn point(
        k: Option<usize>,
        lr: f64,
        trial: usize,
        auroc: Option<f64>,
        infer: f64,
    ) -> SweepPoint {
        SweepPoint {
            kernel_size: k,
            learning_rate: lr,
            trial,
            seed: trial as u64,
            auroc,
            train_seconds: 1.0,
            infer_seconds_per_window: infer,
        }
    }

    #[test]
    fn summary_best_and_invalid_cells() {
        let surface = SweepSurface {
            family: ModelFamily::Ncae,
            trials: 2,
            points: vec![
                point(Some(3), 1e-3, 0, Some(0.9), 0.002),
                point(Some(3), 1e-3, 1, Some(1.0), 0.002),
                point(Some(5), 1e-3, 0, Some(1.0), 0.001),
                point(Some(5), 1e-3, 1, Some(0.9), 0.001),
                point(Some(7), 1e-3, 0, None, 0.0),
                point(Some(7), 1e-3, 1, None, 0.0),
            ],
        };
        let s = summarize(&surface).unwrap();
        assert_eq!(s.cells.len(), 3);
        let a = s.cells[0].auroc.unwrap();
        assert!((a.mean - 0.95).abs() < 1e-15 && (a.std - 0.05).abs() < 1e-15);
        assert_eq!(s.best, Some(1), "tie broken by faster inference");
        assert!(s.cells[2].all_invalid());
        assert!(summary_table(&s).contains("invalid"));
        assert_eq!(summary_to_csv(&s).lines().count(), 4);
        assert!(summarize(&SweepSurface {
            points: vec![],
            ..surface
        })
        .is_err());
    }

    #[test]
    fn surface_csv_round_trip() {
        let surface = SweepSurface {
            family: ModelFamily::Baseline,
            trials: 1,
            points: vec![
                point(None, 1e-3, 0, Some(0.123_456_789_012_345_67), 3.3e-5),
                point(Some(5), 1e-2, 1, None, 1.0 / 3.0),
            ],
        };
        let csv = surface_to_csv(&surface);
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(parse_surface_csv(&csv).unwrap(), surface.points);
        let empty = SweepSurface {
            points: vec![],
            ..surface
        };
        assert_eq!(surface_to_csv(&empty), format!("{SURFACE_CSV_HEADER}\n"));
    }

    #[test]
    fn trial_seeds_differ() {
        let seeds: Vec<u64> = (0..100).map(|t| trial_seed(7, t)).collect();
        let mut dedup = seeds.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), 100);
        assert_eq!(trial_seed(7, 3), trial_seed(7, 3));
        assert_ne!(trial_seed(7, 3), trial_seed(8, 3));
    }

    #[test]
    fn timing_single_sample() {
        let m = crate::models::build_ncae(NcaeSpec::new(3, 13, 13), 0).unwrap();
        let w = vec![Tensor2D::filled(32, 13, 0.1)];
        let t = time_inference(&m, &w, 1).unwrap();
        assert_eq!(t.std, 0.0);
        assert!(t.mean > 0.0);
        assert!(time_inference(&m, &[], 1).is_err());
        assert!(time_inference(&m, &w, 0).is_err());
    }
}
