//! Python bindings. Windows and feature sequences cross the boundary as
//! lists of rows (`list[list[float]]`, one row per time step).

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use ncae::audio::{self, AudioClip};
use ncae::evaluation::{self, ModelFamily};
use ncae::mfcc::{self as features, MfccConfig};
use ncae::models::{self, Architecture, BaselineSpec, NcaeSpec};
use ncae::nn::Tensor2D;
use ncae::pipeline::{self, ThresholdCalibration, TrainConfig};
use ncae::synth::{self, RoadCondition, SynthConfig};

fn to_py(err: ncae::Error) -> PyErr {
    match err {
        ncae::Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

pub fn tensor_from_rows(rows: Vec<Vec<f64>>) -> ncae::Result<Tensor2D> {
    Tensor2D::from_rows(&rows)
}

fn tensors(windows: Vec<Vec<Vec<f64>>>) -> PyResult<Vec<Tensor2D>> {
    windows
        .into_iter()
        .map(|w| tensor_from_rows(w).map_err(to_py))
        .collect()
}

/// A reconstruction model (NCAE or recurrent baseline).
#[pyclass(name = "Model", module = "ncae", skip_from_py_object)]
#[derive(Clone)]
pub struct PyModel {
    inner: models::Model,
}

#[pymethods]
impl PyModel {
    /// Convolutional auto-encoder with odd `kernel` and `hidden >= channels`.
    #[staticmethod]
    #[pyo3(signature = (kernel=3, hidden=64, channels=13, seed=0))]
    fn ncae(kernel: usize, hidden: usize, channels: usize, seed: u64) -> PyResult<Self> {
        let inner =
            models::build_ncae(NcaeSpec::new(kernel, hidden, channels), seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (hidden=64, channels=13, seed=0))]
    fn baseline(hidden: usize, channels: usize, seed: u64) -> PyResult<Self> {
        let inner =
            models::build_baseline(BaselineSpec::new(hidden, channels), seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: models::load_model(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        models::save_model(&self.inner, path).map_err(to_py)
    }

    #[getter]
    fn family(&self) -> &'static str {
        self.inner.arch().tag()
    }

    #[getter]
    fn kernel_size(&self) -> Option<usize> {
        self.inner.arch().kernel_size()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn forward(&self, window: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = tensor_from_rows(window).map_err(to_py)?;
        Ok(self.inner.forward(&x).map_err(to_py)?.to_rows())
    }

    /// Reconstruction distance `||x - f(x)||_2`.
    fn score(&self, window: Vec<Vec<f64>>) -> PyResult<f64> {
        let x = tensor_from_rows(window).map_err(to_py)?;
        pipeline::anomaly_score(&self.inner, &x).map_err(to_py)
    }

    fn score_windows(&self, windows: Vec<Vec<Vec<f64>>>) -> PyResult<Vec<f64>> {
        pipeline::score_windows(&self.inner, &tensors(windows)?).map_err(to_py)
    }

    /// Trains in place with Adam and returns the per-epoch mean loss.
    #[pyo3(signature = (windows, lr=1e-3, epochs=30, batch_size=32, seed=0))]
    fn train(
        &mut self,
        py: Python<'_>,
        windows: Vec<Vec<Vec<f64>>>,
        lr: f64,
        epochs: usize,
        batch_size: usize,
        seed: u64,
    ) -> PyResult<Vec<f64>> {
        let windows = tensors(windows)?;
        let config = TrainConfig {
            learning_rate: lr,
            epochs,
            batch_size,
            seed,
            ..TrainConfig::default()
        };
        let inner = &mut self.inner;
        py.detach(|| pipeline::train(inner, &windows, &config))
            .map_err(to_py)
    }

    /// Worst relative gradient error against central differences.
    #[pyo3(signature = (window, step=1e-6))]
    fn grad_check(&mut self, window: Vec<Vec<f64>>, step: f64) -> PyResult<f64> {
        let x = tensor_from_rows(window).map_err(to_py)?;
        Ok(self
            .inner
            .grad_check(&x, step)
            .map_err(to_py)?
            .max_rel_error)
    }

    fn __repr__(&self) -> String {
        let a = self.inner.arch();
        match a {
            Architecture::Ncae(s) => format!(
                "Model.ncae(kernel={}, hidden={}, channels={})",
                s.kernel_size, s.hidden_width, s.input_channels
            ),
            Architecture::Baseline(s) => format!(
                "Model.baseline(hidden={}, channels={})",
                s.hidden_width, s.input_channels
            ),
        }
    }
}

/// Decision threshold `theta = mu + 1.5 sigma` over training scores.
#[pyclass(name = "Calibration", module = "ncae", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyCalibration {
    inner: ThresholdCalibration,
}

#[pymethods]
impl PyCalibration {
    #[staticmethod]
    fn from_scores(scores: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: pipeline::calibrate_threshold(&scores).map_err(to_py)?,
        })
    }

    #[getter]
    fn mu(&self) -> f64 {
        self.inner.mu
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.inner.theta
    }

    fn is_anomalous(&self, score: f64) -> bool {
        self.inner.is_anomalous(score)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn __repr__(&self) -> String {
        format!(
            "Calibration(mu={}, sigma={}, theta={})",
            self.inner.mu, self.inner.sigma, self.inner.theta
        )
    }
}

/// MFCC frames (`n_coeffs` per row) of a mono signal, resampled to 16 kHz.
#[pyfunction]
#[pyo3(signature = (samples, sample_rate=16000))]
fn mfcc(samples: Vec<f64>, sample_rate: u32) -> PyResult<Vec<Vec<f64>>> {
    let clip = AudioClip::new(samples, sample_rate).map_err(to_py)?;
    let clip = audio::to_canonical(&clip).map_err(to_py)?;
    let seq = features::extract_mfcc(&clip, &MfccConfig::default()).map_err(to_py)?;
    Ok(seq.frames.to_rows())
}

/// Sliding windows over a frame sequence; a trailing partial window is dropped.
#[pyfunction]
#[pyo3(signature = (frames, window=32, stride=16))]
fn windows(frames: Vec<Vec<f64>>, window: usize, stride: usize) -> PyResult<Vec<Vec<Vec<f64>>>> {
    let seq = tensor_from_rows(frames).map_err(to_py)?;
    let out = features::window_sequences(&seq, window, stride).map_err(to_py)?;
    Ok(out.iter().map(Tensor2D::to_rows).collect())
}

#[pyfunction]
fn auroc(normal: Vec<f64>, abnormal: Vec<f64>) -> PyResult<f64> {
    evaluation::auroc(&normal, &abnormal).map_err(to_py)
}

#[pyfunction]
fn calibrate_threshold(scores: Vec<f64>) -> PyResult<PyCalibration> {
    PyCalibration::from_scores(scores)
}

/// Synthetic tire noise for `condition` ("dry" or "wet").
#[pyfunction]
#[pyo3(signature = (condition, seconds=120.0, seed=0))]
fn gen_road_noise(condition: &str, seconds: f64, seed: u64) -> PyResult<Vec<f64>> {
    let condition = match condition {
        "dry" => RoadCondition::Dry,
        "wet" => RoadCondition::Wet,
        other => {
            return Err(PyValueError::new_err(format!(
                "condition must be 'dry' or 'wet', got {other:?}"
            )))
        }
    };
    let config = SynthConfig {
        duration_seconds: seconds,
        seed,
        ..SynthConfig::default()
    };
    Ok(synth::gen_road_noise(condition, &config)
        .map_err(to_py)?
        .into_samples())
}

/// Returns `(samples, sample_rate)`.
#[pyfunction]
fn read_wav(path: &str) -> PyResult<(Vec<f64>, u32)> {
    let clip = audio::read_wav(path).map_err(to_py)?;
    let rate = clip.sample_rate();
    Ok((clip.into_samples(), rate))
}

#[pyfunction]
fn write_wav(path: &str, samples: Vec<f64>, sample_rate: u32) -> PyResult<()> {
    let clip = AudioClip::new(samples, sample_rate).map_err(to_py)?;
    audio::write_wav(&clip, path).map_err(to_py)
}

/// One seeded train/score cycle on a synthetic dataset; returns the AUROC
/// (None if training diverged).
#[pyfunction]
#[pyo3(signature = (family="ncae", kernel=3, lr=1e-3, seed=0, minutes=2.0, epochs=30))]
fn run_trial(
    py: Python<'_>,
    family: &str,
    kernel: usize,
    lr: f64,
    seed: u64,
    minutes: f64,
    epochs: usize,
) -> PyResult<Option<f64>> {
    let family: ModelFamily = family.parse().map_err(to_py)?;
    py.detach(|| {
        let mut dc = synth::DatasetConfig::default();
        dc.synth.seed = seed;
        dc.synth.duration_seconds = minutes * 60.0;
        let data = synth::make_dataset(&dc)?;
        let channels = dc.mfcc.n_coeffs;
        let arch = family.architecture(Some(kernel), models::DEFAULT_HIDDEN, channels);
        let config = TrainConfig {
            learning_rate: lr,
            epochs,
            seed,
            ..TrainConfig::default()
        };
        Ok(evaluation::run_trial(arch, &data, &config)?.auroc)
    })
    .map_err(to_py)
}

#[pymodule]
#[pyo3(name = "ncae")]
fn ncae_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyCalibration>()?;
    m.add_function(wrap_pyfunction!(mfcc, m)?)?;
    m.add_function(wrap_pyfunction!(windows, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(gen_road_noise, m)?)?;
    m.add_function(wrap_pyfunction!(read_wav, m)?)?;
    m.add_function(wrap_pyfunction!(write_wav, m)?)?;
    m.add_function(wrap_pyfunction!(run_trial, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
