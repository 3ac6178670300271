//! Training, threshold calibration, scoring and streaming detection.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Model;
use crate::nn::{adam_step, l2_distance, AdamState, Tensor2D};

/// Fence multiplier applied to the training-score standard deviation.
pub const FENCE_MULTIPLIER: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub window: usize,
    pub stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            window: 32,
            stride: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "batch size must be at least 1".into(),
            ));
        }
        if self.window == 0 || self.stride == 0 {
            return Err(Error::InvalidArgument(
                "window and stride must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-epoch mean window loss.
pub type LossHistory = Vec<f64>;

/// Minimizes the mean per-window reconstruction distance with Adam.
///
/// Window order is reshuffled every epoch from `config.seed`. If the loss or
/// gradients become non-finite, the model is rolled back to the parameters
/// at the end of the last completed epoch and [`Error::Diverged`] is returned.
pub fn train(model: &mut Model, windows: &[Tensor2D], config: &TrainConfig) -> Result<LossHistory> {
    config.validate()?;
    let first = windows.first().ok_or(Error::Empty("no training windows"))?;
    if let Some(bad) = windows.iter().find(|w| !w.same_shape(first)) {
        return Err(Error::ShapeMismatch(format!(
            "training windows must share one shape: {:?} vs {:?}",
            first.shape(),
            bad.shape()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = AdamState::new(model.params(), config.learning_rate);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut last_good = model.params().clone();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let result: Result<()> = (|| {
            for batch in order.chunks(config.batch_size) {
                model.params_mut().zero_grad();
                let scale = 1.0 / batch.len() as f64;
                for &i in batch {
                    let loss = model.accumulate_gradients(&windows[i], scale)?;
                    if !loss.is_finite() {
                        return Err(Error::NonFinite(format!("loss {loss} on window {i}")));
                    }
                    total += loss;
                }
                adam_step(model.params_mut(), &mut optimizer)?;
            }
            Ok(())
        })();
        let mean = total / windows.len() as f64;
        if let Err(e) = result.and_then(|_| {
            if mean.is_finite() && model.params().values_finite() {
                Ok(())
            } else {
                Err(Error::NonFinite(format!("epoch mean loss {mean}")))
            }
        }) {
            *model.params_mut() = last_good;
            return Err(Error::Diverged {
                epoch,
                reason: e.to_string(),
            });
        }
        history.push(mean);
        last_good.clone_from(model.params());
    }
    model.params_mut().zero_grad();
    Ok(history)
}

/// Reconstruction distance `||X - f(X)||_2` of one window.
pub fn anomaly_score(model: &Model, window: &Tensor2D) -> Result<f64> {
    let recon = model.forward(window)?;
    l2_distance(window, &recon)
}

pub fn score_windows(model: &Model, windows: &[Tensor2D]) -> Result<Vec<f64>> {
    windows.iter().map(|w| anomaly_score(model, w)).collect()
}

/// Decision boundary from training scores: `theta = mu + 1.5 sigma` with the
/// population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCalibration {
    pub mu: f64,
    pub sigma: f64,
    pub theta: f64,
}

impl ThresholdCalibration {
    pub fn from_moments(mu: f64, sigma: f64) -> Self {
        Self {
            mu,
            sigma,
            theta: mu + FENCE_MULTIPLIER * sigma,
        }
    }

    /// Strictly above the boundary is anomalous; equality counts as normal.
    pub fn is_anomalous(&self, score: f64) -> bool {
        score > self.theta
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("calibration JSON: {e}")))?;
        if !(c.sigma >= 0.0) || !c.mu.is_finite() || !c.theta.is_finite() {
            return Err(Error::InvalidArgument(
                "calibration values out of range".into(),
            ));
        }
        Ok(c)
    }
}

pub fn calibrate_threshold(training_scores: &[f64]) -> Result<ThresholdCalibration> {
    if training_scores.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "calibration needs at least 2 scores, got {}",
            training_scores.len()
        )));
    }
    if training_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("calibration score".into()));
    }
    let (mu, sigma) = mean_and_std(training_scores);
    Ok(ThresholdCalibration::from_moments(mu, sigma))
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        carry += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
    }
    sum + carry
}

/// Mean and population standard deviation (two-pass, compensated sums).
/// Returns NaNs for an empty slice.
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = compensated_sum(values.iter().copied()) / n;
    let var = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean))) / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Normal,
    Anomalous,
}

impl Decision {
    pub fn as_str(&self) -> &'static str {
        match self {
            Decision::Normal => "normal",
            Decision::Anomalous => "anomalous",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub window_index: usize,
    pub score: f64,
    pub decision: Decision,
    /// Wall-clock seconds from the frame becoming available to the decision.
    pub latency_seconds: f64,
}

/// Streams MFCC frames through a rolling `window`-frame buffer.
///
/// After warm-up (the first `window - 1` frames) a record is emitted on
/// every `stride`-th new frame. A source that ends during warm-up yields no
/// records.
pub fn detect_stream<I>(
    model: &Model,
    calibration: &ThresholdCalibration,
    frames: I,
    window: usize,
    stride: usize,
) -> Result<Vec<DetectionRecord>>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut detector = StreamDetector::new(model, *calibration, window, stride)?;
    let mut records = Vec::new();
    for frame in frames {
        if let Some(r) = detector.push(frame)? {
            records.push(r);
        }
    }
    Ok(records)
}

/// Incremental form of [`detect_stream`].
pub struct StreamDetector<'m> {
    model: &'m Model,
    calibration: ThresholdCalibration,
    window: usize,
    stride: usize,
    buffer: VecDeque<Vec<f64>>,
    seen: usize,
    emitted: usize,
}

impl<'m> StreamDetector<'m> {
    pub fn new(
        model: &'m Model,
        calibration: ThresholdCalibration,
        window: usize,
        stride: usize,
    ) -> Result<Self> {
        if window == 0 || stride == 0 {
            return Err(Error::InvalidArgument(
                "window and stride must be positive".into(),
            ));
        }
        Ok(Self {
            model,
            calibration,
            window,
            stride,
            buffer: VecDeque::with_capacity(window),
            seen: 0,
            emitted: 0,
        })
    }

    pub fn push(&mut self, frame: Vec<f64>) -> Result<Option<DetectionRecord>> {
        let arrived = Instant::now();
        let channels = self.model.arch().input_channels();
        if frame.len() != channels {
            return Err(Error::ShapeMismatch(format!(
                "frame has {} coefficients, model expects {channels}",
                frame.len()
            )));
        }
        if self.buffer.len() == self.window {
            self.buffer.pop_front();
        }
        self.buffer.push_back(frame);
        self.seen += 1;
        if self.seen < self.window || !(self.seen - self.window).is_multiple_of(self.stride) {
            return Ok(None);
        }
        let data = self.buffer.iter().flatten().copied().collect();
        let x = Tensor2D::from_vec(self.window, channels, data)?;
        let score = anomaly_score(self.model, &x)?;
        let decision = if self.calibration.is_anomalous(score) {
            Decision::Anomalous
        } else {
            Decision::Normal
        };
        let record = DetectionRecord {
            window_index: self.emitted,
            score,
            decision,
            latency_seconds: arrived.elapsed().as_secs_f64(),
        };
        self.emitted += 1;
        Ok(Some(record))
    }
}

pub const DETECTION_CSV_HEADER: &str = "window_index,score,theta,decision,latency_seconds";

pub fn detections_to_csv(
    records: &[DetectionRecord],
    calibration: &ThresholdCalibration,
) -> String {
    let mut out = String::from(DETECTION_CSV_HEADER);
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{:.16e},{:.16e},{},{:.9e}",
            r.window_index,
            r.score,
            calibration.theta,
            r.decision.as_str(),
            r.latency_seconds
        )
        .expect("writing to a String");
    }
    out
}

pub fn write_detections_csv(
    records: &[DetectionRecord],
    calibration: &ThresholdCalibration,
    path: impl AsRef<Path>,
) -> Result<()> {
    fs::write(path, detections_to_csv(records, calibration))?;
    Ok(())
}

pub fn anomalous_fraction(records: &[DetectionRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let n = records
        .iter()
        .filter(|r| r.decision == Decision::Anomalous)
        .count();
    n as f64 / records.len() as f64
}
