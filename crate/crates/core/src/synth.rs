//! Seeded synthetic road noise standing in for real dry/wet recordings.
//!
//! Dry road: pink-ish rolling noise plus an engine harmonic stack with slow
//! amplitude modulation. Wet road: the same recipe with added
//! high-frequency-tilted hiss and short spray bursts. Every clip is
//! peak-normalized to [`PEAK`].

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio::{AudioClip, CANONICAL_RATE};
use crate::error::{Error, Result};
use crate::mfcc::{extract_mfcc, window_sequences, MfccConfig};
use crate::nn::Tensor2D;

pub const PEAK: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoadCondition {
    Dry,
    Wet,
}

impl RoadCondition {
    pub fn as_str(&self) -> &'static str {
        match self {
            RoadCondition::Dry => "dry",
            RoadCondition::Wet => "wet",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub duration_seconds: f64,
    pub seed: u64,
    pub sample_rate: u32,
    pub wet_hiss_gain: f64,
    pub wet_tilt_db_per_octave: f64,
    pub engine_f0: f64,
    pub harmonics: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            duration_seconds: 120.0,
            seed: 0,
            sample_rate: CANONICAL_RATE,
            wet_hiss_gain: 0.15,
            wet_tilt_db_per_octave: 3.0,
            engine_f0: 95.0,
            harmonics: 8,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_seconds > 0.0) || !self.duration_seconds.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "duration must be positive, got {}",
                self.duration_seconds
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidArgument(
                "sample rate must be positive".into(),
            ));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.engine_f0 > 0.0 && self.engine_f0 < nyquist) {
            return Err(Error::InvalidArgument(format!(
                "engine f0 {} must lie in (0, {nyquist})",
                self.engine_f0
            )));
        }
        if !(self.wet_hiss_gain >= 0.0) || !self.wet_tilt_db_per_octave.is_finite() {
            return Err(Error::InvalidArgument(
                "wet hiss gain must be >= 0 and tilt finite".into(),
            ));
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        (self.duration_seconds * self.sample_rate as f64).round() as usize
    }
}

/// Independent generator for one signal component; the dry components of
/// a wet clip are bit-identical to the dry clip with the same seed.
fn component_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Pink-ish noise from a bank of one-pole low-pass sections (approximately
/// -3 dB/octave above a few Hz).
fn pink_noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    const POLES: [(f64, f64); 6] = [
        (0.99886, 0.0555179),
        (0.99332, 0.0750759),
        (0.96900, 0.1538520),
        (0.86650, 0.3104856),
        (0.55000, 0.5329522),
        (-0.7616, -0.0168980),
    ];
    let mut state = [0.0f64; 6];
    let mut last_white = 0.0;
    (0..n)
        .map(|_| {
            let white: f64 = StandardNormal.sample(rng);
            let mut acc = 0.0;
            for (s, &(a, g)) in state.iter_mut().zip(&POLES) {
                *s = a * *s + white * g;
                acc += *s;
            }
            let out = acc + last_white * 0.5362 + white * 0.115926;
            last_white = white;
            out * 0.11
        })
        .collect()
}

fn engine(config: &SynthConfig, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = config.sample_rate as f64;
    let nyquist = sr / 2.0;
    let phases: Vec<f64> = (0..config.harmonics)
        .map(|_| rng.gen_range(0.0..2.0 * PI))
        .collect();
    let mod_rate = rng.gen_range(0.1..0.3);
    let mod_phase = rng.gen_range(0.0..2.0 * PI);
    let harmonics: Vec<(f64, f64, f64)> = phases
        .iter()
        .enumerate()
        .map(|(h, &ph)| ((h + 1) as f64 * config.engine_f0, 0.12 / (h + 1) as f64, ph))
        .filter(|&(f, _, _)| f < nyquist)
        .collect();
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let am = 1.0 + 0.3 * (2.0 * PI * mod_rate * t + mod_phase).sin();
            am * harmonics
                .iter()
                .map(|&(f, a, ph)| a * (2.0 * PI * f * t + ph).sin())
                .sum::<f64>()
        })
        .collect()
}

/// White noise tilted upward by `tilt_db` per octave: a blend of the raw
/// noise and its first difference (+6 dB/octave), weighted by `tilt_db / 6`.
fn tilted_hiss(n: usize, tilt_db: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let alpha = (tilt_db / 6.0).clamp(0.0, 1.0);
    let mut prev = 0.0;
    (0..n)
        .map(|_| {
            let w: f64 = StandardNormal.sample(rng);
            let diff = (w - prev) / 2.0;
            prev = w;
            (1.0 - alpha) * w + alpha * diff
        })
        .collect()
}

/// Short decaying bursts of differenced noise at random onsets.
fn spray_bursts(n: usize, sample_rate: u32, gain: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = sample_rate as f64;
    let mut out = vec![0.0; n];
    let rate_hz = 3.0;
    let mut t = 0usize;
    loop {
        let gap: f64 = -(1.0 - rng.gen::<f64>()).ln() / rate_hz;
        t += (gap * sr).ceil() as usize;
        if t >= n {
            break;
        }
        let len = (rng.gen_range(0.02..0.08) * sr) as usize;
        let amp = gain * rng.gen_range(0.5..1.5);
        let tau = len as f64 / 3.0;
        let mut prev = 0.0;
        for j in 0..len.min(n - t) {
            let w: f64 = StandardNormal.sample(rng);
            out[t + j] += amp * (-(j as f64) / tau).exp() * (w - prev) / 2.0;
            prev = w;
        }
        t += len;
    }
    out
}

pub fn gen_road_noise(condition: RoadCondition, config: &SynthConfig) -> Result<AudioClip> {
    config.validate()?;
    let n = config.sample_count();
    if n == 0 {
        return Err(Error::InvalidArgument(
            "duration rounds to zero samples".into(),
        ));
    }
    let mut signal = pink_noise(n, &mut component_rng(config.seed, 1));
    for (s, e) in signal
        .iter_mut()
        .zip(engine(config, n, &mut component_rng(config.seed, 2)))
    {
        *s += e;
    }
    if condition == RoadCondition::Wet {
        let hiss = tilted_hiss(
            n,
            config.wet_tilt_db_per_octave,
            &mut component_rng(config.seed, 3),
        );
        let spray = spray_bursts(
            n,
            config.sample_rate,
            config.wet_hiss_gain,
            &mut component_rng(config.seed, 4),
        );
        for ((s, h), b) in signal.iter_mut().zip(hiss).zip(spray) {
            *s += config.wet_hiss_gain * h + b;
        }
    }
    let peak = signal.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        let gain = PEAK / peak;
        signal
            .iter_mut()
            .for_each(|s| *s = (*s * gain).clamp(-PEAK, PEAK));
    }
    AudioClip::new(signal, config.sample_rate)
}

/// How synthetic clips become model windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub synth: SynthConfig,
    pub mfcc: MfccConfig,
    pub window: usize,
    pub stride: usize,
    pub train_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            mfcc: MfccConfig::default(),
            window: 32,
            stride: 16,
            train_fraction: 0.75,
        }
    }
}

/// Normal training windows plus held-out normal and abnormal test windows.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub train_normal: Vec<Tensor2D>,
    pub test_normal: Vec<Tensor2D>,
    pub test_abnormal: Vec<Tensor2D>,
    /// Sample index where the dry clip was cut into train and test.
    pub split_sample: usize,
}

/// Seeds used for the dry and wet clips of a dataset built from `seed`.
pub fn clip_seeds(seed: u64) -> (u64, u64) {
    (seed, seed ^ 0x9E37_79B9_7F4A_7C15)
}

pub fn clip_windows(clip: &AudioClip, config: &DatasetConfig) -> Result<Vec<Tensor2D>> {
    let seq = extract_mfcc(clip, &config.mfcc)?;
    window_sequences(&seq.frames, config.window, config.stride)
}

/// Splits a dry clip time-contiguously at `train_fraction` and windows a
/// separately seeded wet clip wholly into the abnormal test set.
pub fn make_dataset(config: &DatasetConfig) -> Result<DatasetBundle> {
    let (dry_seed, wet_seed) = clip_seeds(config.synth.seed);
    let dry = gen_road_noise(
        RoadCondition::Dry,
        &SynthConfig {
            seed: dry_seed,
            ..config.synth
        },
    )?;
    let wet = gen_road_noise(
        RoadCondition::Wet,
        &SynthConfig {
            seed: wet_seed,
            ..config.synth
        },
    )?;
    dataset_from_clips(&dry, &wet, config)
}

/// Splits an existing dry clip time-contiguously into train and test parts
/// and windows both clips. The synth part of `config` is not used.
pub fn dataset_from_clips(
    dry: &AudioClip,
    wet: &AudioClip,
    config: &DatasetConfig,
) -> Result<DatasetBundle> {
    let f = config.train_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must lie in (0, 1), got {f}"
        )));
    }
    let split_sample = (dry.len() as f64 * f).floor() as usize;
    let train = dry.slice(0, split_sample);
    let test = dry.slice(split_sample, dry.len());
    let windows = |clip: &AudioClip, what: &str| {
        clip_windows(clip, config).map_err(|e| {
            Error::InvalidArgument(format!("{what} segment too short for one window: {e}"))
        })
    };
    Ok(DatasetBundle {
        train_normal: windows(&train, "dry training")?,
        test_normal: windows(&test, "dry test")?,
        test_abnormal: windows(wet, "wet")?,
        split_sample,
    })
}

/// Mean power in FFT bins above `cutoff_hz`, averaged over consecutive
/// rectangular `n_fft`-sample blocks.
pub fn band_power_above(clip: &AudioClip, cutoff_hz: f64, n_fft: usize) -> Result<f64> {
    let mut analyzer = crate::mfcc::SpectrumAnalyzer::new(n_fft)?;
    let bin_hz = clip.sample_rate() as f64 / n_fft as f64;
    let first = (cutoff_hz / bin_hz).ceil() as usize;
    let mut total = 0.0;
    let mut blocks = 0usize;
    for block in clip.samples().chunks_exact(n_fft) {
        let p = analyzer.power(block, None)?;
        total += p[first.min(p.len())..].iter().sum::<f64>();
        blocks += 1;
    }
    if blocks == 0 {
        return Err(Error::InvalidArgument(
            "clip shorter than one FFT block".into(),
        ));
    }
    Ok(total / blocks as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(seed: u64) -> SynthConfig {
        SynthConfig {
            duration_seconds: 3.0,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = gen_road_noise(RoadCondition::Wet, &short(5)).unwrap();
        let b = gen_road_noise(RoadCondition::Wet, &short(5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, gen_road_noise(RoadCondition::Wet, &short(6)).unwrap());
    }

    #[test]
    fn sample_count_and_peak() {
        let cfg = SynthConfig {
            duration_seconds: 20.0 * 60.0,
            ..SynthConfig::default()
        };
        assert_eq!(cfg.sample_count(), 19_200_000);
        for cond in [RoadCondition::Dry, RoadCondition::Wet] {
            let clip = gen_road_noise(cond, &short(1)).unwrap();
            assert_eq!(clip.len(), 48_000);
            let peak = clip.samples().iter().fold(0.0f64, |m, s| m.max(s.abs()));
            assert!((peak - PEAK).abs() < 1e-12);
        }
    }

    #[test]
    fn wet_has_more_high_band_power() {
        let cfg = short(2);
        let dry = gen_road_noise(RoadCondition::Dry, &cfg).unwrap();
        let wet = gen_road_noise(RoadCondition::Wet, &cfg).unwrap();
        let (pd, pw) = (
            band_power_above(&dry, 4000.0, 512).unwrap(),
            band_power_above(&wet, 4000.0, 512).unwrap(),
        );
        assert!(pw > 1.5 * pd, "wet {pw} dry {pd}");
    }

    #[test]
    fn invalid_configs() {
        for bad in [
            SynthConfig {
                duration_seconds: 0.0,
                ..short(0)
            },
            SynthConfig {
                engine_f0: 9000.0,
                ..short(0)
            },
            SynthConfig {
                wet_hiss_gain: -1.0,
                ..short(0)
            },
        ] {
            assert!(gen_road_noise(RoadCondition::Dry, &bad).is_err());
        }
    }

    #[test]
    fn dataset_split() {
        let cfg = DatasetConfig {
            synth: SynthConfig {
                duration_seconds: 8.0,
                ..short(3)
            },
            ..DatasetConfig::default()
        };
        let bundle = make_dataset(&cfg).unwrap();
        assert_eq!(bundle.split_sample, 96_000);
        // 6 s of training audio: 1 + (96000 - 400) / 160 = 598 frames
        assert_eq!(bundle.train_normal.len(), 1 + (598 - 32) / 16);
        assert_eq!(bundle.test_normal.len(), 1 + (198 - 32) / 16);
        assert!(!bundle.test_abnormal.is_empty());
        assert_eq!(make_dataset(&cfg).unwrap(), bundle);
        assert!(make_dataset(&DatasetConfig {
            train_fraction: 1.0,
            ..cfg
        })
        .is_err());
    }
}
