//! MFCC front end: Hann window, power spectrum, mel filterbank, log, DCT-II.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::{frame_signal, AudioClip};
use crate::error::{Error, Result};
use crate::nn::Tensor2D;

/// Added to mel energies before the log so silence stays finite.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MfccConfig {
    pub n_fft: usize,
    pub n_mels: usize,
    pub n_coeffs: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub frame_len: usize,
    pub hop: usize,
}

impl Default for MfccConfig {
    /// 25 ms frames with a 10 ms hop at 16 kHz, 40 mel bands, 13 coefficients.
    fn default() -> Self {
        Self {
            n_fft: 512,
            n_mels: 40,
            n_coeffs: 13,
            fmin: 20.0,
            fmax: 8000.0,
            frame_len: 400,
            hop: 160,
        }
    }
}

impl MfccConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !self.n_fft.is_power_of_two() {
            return bad(format!("n_fft {} is not a power of two", self.n_fft));
        }
        if self.frame_len == 0 || self.frame_len > self.n_fft {
            return bad(format!(
                "frame length {} must be in 1..=n_fft ({})",
                self.frame_len, self.n_fft
            ));
        }
        if self.hop == 0 || self.hop > self.frame_len {
            return bad(format!("hop {} must be in 1..=frame_len", self.hop));
        }
        if self.n_mels == 0 || self.n_coeffs == 0 || self.n_coeffs > self.n_mels {
            return bad(format!(
                "need 0 < n_coeffs ({}) <= n_mels ({})",
                self.n_coeffs, self.n_mels
            ));
        }
        if !(self.fmin >= 0.0) || !(self.fmin < self.fmax) {
            return bad(format!(
                "need 0 <= fmin ({}) < fmax ({})",
                self.fmin, self.fmax
            ));
        }
        if self.fmax > sample_rate as f64 / 2.0 {
            return bad(format!(
                "fmax {} exceeds Nyquist for {sample_rate} Hz",
                self.fmax
            ));
        }
        Ok(())
    }
}

/// Time-ordered MFCC frames (`T x n_coeffs`).
#[derive(Debug, Clone, PartialEq)]
pub struct MfccSequence {
    pub frames: Tensor2D,
    pub config: MfccConfig,
}

impl MfccSequence {
    pub fn len(&self) -> usize {
        self.frames.steps()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Headerless CSV, one row per frame, 17 significant digits per value.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for t in 0..self.frames.steps() {
            let row = self.frames.row(t);
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write!(out, "{v:.16e}").expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Symmetric Hann window, `w[i] = 0.5 (1 - cos(2 pi i / (n - 1)))`.
pub fn hann_window(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "Hann window needs at least 2 points, got {n}"
        )));
    }
    let denom = (n - 1) as f64;
    Ok((0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / denom).cos()))
        .collect())
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Computes `|FFT(frame * window)|^2` for bins `0..=n_fft/2`, zero-padding the
/// frame to `n_fft`. With `window = None` the frame is used as-is.
pub struct SpectrumAnalyzer {
    n_fft: usize,
    fft: Arc<dyn Fft<f64>>,
    buffer: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl SpectrumAnalyzer {
    pub fn new(n_fft: usize) -> Result<Self> {
        if !n_fft.is_power_of_two() || n_fft < 2 {
            return Err(Error::InvalidArgument(format!(
                "n_fft {n_fft} is not a power of two"
            )));
        }
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        let scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
        Ok(Self {
            n_fft,
            fft,
            buffer: vec![Complex::default(); n_fft],
            scratch,
        })
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn power(&mut self, frame: &[f64], window: Option<&[f64]>) -> Result<Vec<f64>> {
        if frame.len() > self.n_fft {
            return Err(Error::InvalidArgument(format!(
                "frame of {} samples exceeds n_fft {}",
                frame.len(),
                self.n_fft
            )));
        }
        if let Some(w) = window {
            if w.len() != frame.len() {
                return Err(Error::ShapeMismatch(format!(
                    "window has {} points, frame has {}",
                    w.len(),
                    frame.len()
                )));
            }
        }
        for (i, slot) in self.buffer.iter_mut().enumerate() {
            let v = match (frame.get(i), window) {
                (Some(&s), Some(w)) => s * w[i],
                (Some(&s), None) => s,
                (None, _) => 0.0,
            };
            *slot = Complex::new(v, 0.0);
        }
        self.fft
            .process_with_scratch(&mut self.buffer, &mut self.scratch);
        Ok(self.buffer[..=self.n_fft / 2]
            .iter()
            .map(|c| c.norm_sqr())
            .collect())
    }
}

/// Hann-windowed power spectrum of one frame.
pub fn power_spectrum(frame: &[f64], n_fft: usize) -> Result<Vec<f64>> {
    let mut analyzer = SpectrumAnalyzer::new(n_fft)?;
    if frame.len() < 2 {
        return analyzer.power(frame, None);
    }
    let window = hann_window(frame.len())?;
    analyzer.power(frame, Some(&window))
}

/// Power spectrum without windowing.
pub fn power_spectrum_rect(frame: &[f64], n_fft: usize) -> Result<Vec<f64>> {
    SpectrumAnalyzer::new(n_fft)?.power(frame, None)
}

/// Triangular mel filters, one row per band, over bins `0..=n_fft/2`.
///
/// Band edges are `n_mels + 2` points uniform on the mel scale between
/// `fmin` and `fmax`; row `m` rises from edge `m` to a peak of 1 at edge
/// `m + 1` and falls to zero at edge `m + 2`.
pub fn mel_filterbank(config: &MfccConfig, sample_rate: u32) -> Result<Vec<Vec<f64>>> {
    if !(config.fmin < config.fmax) {
        return Err(Error::InvalidArgument(format!(
            "fmin {} must be below fmax {}",
            config.fmin, config.fmax
        )));
    }
    config.validate(sample_rate)?;
    let edges = filter_edges_hz(config);
    let bins = config.n_fft / 2 + 1;
    let bin_hz = sample_rate as f64 / config.n_fft as f64;
    let mut bank = Vec::with_capacity(config.n_mels);
    for m in 0..config.n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let row: Vec<f64> = (0..bins)
            .map(|k| {
                let f = k as f64 * bin_hz;
                let rising = (f - lo) / (mid - lo);
                let falling = (hi - f) / (hi - mid);
                rising.min(falling).max(0.0)
            })
            .collect();
        if row.iter().all(|&w| w == 0.0) {
            return Err(Error::InvalidArgument(format!(
                "mel band {m} ({lo:.1}-{hi:.1} Hz) covers no FFT bin; use fewer mels or a larger n_fft"
            )));
        }
        bank.push(row);
    }
    Ok(bank)
}

/// Band edges in Hz: `n_mels + 2` points uniform in mel.
pub fn filter_edges_hz(config: &MfccConfig) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(config.fmin), hz_to_mel(config.fmax));
    let n = config.n_mels + 1;
    (0..=n)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / n as f64))
        .collect()
}

/// Orthonormal DCT-II basis rows `0..n_coeffs` for length-`n` inputs.
pub fn dct_matrix(n: usize, n_coeffs: usize) -> Vec<Vec<f64>> {
    let nf = n as f64;
    (0..n_coeffs)
        .map(|k| {
            let scale = if k == 0 {
                (1.0 / nf).sqrt()
            } else {
                (2.0 / nf).sqrt()
            };
            (0..n)
                .map(|i| scale * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * nf)).cos())
                .collect()
        })
        .collect()
}

/// Reusable per-frame MFCC computation: plan, window, filterbank and DCT are
/// built once.
pub struct MfccExtractor {
    config: MfccConfig,
    analyzer: SpectrumAnalyzer,
    window: Vec<f64>,
    filterbank: Vec<Vec<f64>>,
    dct: Vec<Vec<f64>>,
    log_mel: Vec<f64>,
}

impl MfccExtractor {
    pub fn new(config: MfccConfig, sample_rate: u32) -> Result<Self> {
        config.validate(sample_rate)?;
        Ok(Self {
            analyzer: SpectrumAnalyzer::new(config.n_fft)?,
            window: hann_window(config.frame_len.max(2))?,
            filterbank: mel_filterbank(&config, sample_rate)?,
            dct: dct_matrix(config.n_mels, config.n_coeffs),
            log_mel: vec![0.0; config.n_mels],
            config,
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.config
    }

    /// Coefficients for one frame of exactly `frame_len` samples.
    pub fn frame_coeffs(&mut self, frame: &[f64]) -> Result<Vec<f64>> {
        if frame.len() != self.config.frame_len {
            return Err(Error::ShapeMismatch(format!(
                "frame has {} samples, config expects {}",
                frame.len(),
                self.config.frame_len
            )));
        }
        let window = (frame.len() >= 2).then_some(&self.window[..]);
        let spectrum = self.analyzer.power(frame, window)?;
        for (slot, filter) in self.log_mel.iter_mut().zip(&self.filterbank) {
            let energy: f64 = filter.iter().zip(&spectrum).map(|(w, p)| w * p).sum();
            *slot = (energy + LOG_FLOOR).ln();
        }
        Ok(self
            .dct
            .iter()
            .map(|basis| basis.iter().zip(&self.log_mel).map(|(b, v)| b * v).sum())
            .collect())
    }
}

pub fn extract_mfcc(clip: &AudioClip, config: &MfccConfig) -> Result<MfccSequence> {
    if clip.len() < config.frame_len {
        return Err(Error::InvalidArgument(format!(
            "clip of {} samples is shorter than one {}-sample frame",
            clip.len(),
            config.frame_len
        )));
    }
    let mut extractor = MfccExtractor::new(*config, clip.sample_rate())?;
    let frames = frame_signal(clip, config.frame_len, config.hop)?;
    let mut data = Vec::with_capacity(frames.len() * config.n_coeffs);
    for frame in &frames.frames {
        data.extend(extractor.frame_coeffs(frame)?);
    }
    Ok(MfccSequence {
        frames: Tensor2D::from_vec(frames.len(), config.n_coeffs, data)?,
        config: *config,
    })
}

/// Sliding `window x n_coeffs` slices of `seq` at `stride`; a trailing partial
/// window is dropped.
pub fn window_sequences(seq: &Tensor2D, window: usize, stride: usize) -> Result<Vec<Tensor2D>> {
    if stride == 0 || window == 0 {
        return Err(Error::InvalidArgument(format!(
            "window ({window}) and stride ({stride}) must be positive"
        )));
    }
    if window > seq.steps() {
        return Err(Error::InvalidArgument(format!(
            "window of {window} frames exceeds sequence of {}",
            seq.steps()
        )));
    }
    let c = seq.channels();
    let count = 1 + (seq.steps() - window) / stride;
    (0..count)
        .map(|w| {
            let start = w * stride * c;
            Tensor2D::from_vec(
                window,
                c,
                seq.as_slice()[start..start + window * c].to_vec(),
            )
        })
        .collect()
}
