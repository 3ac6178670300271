//! Reconstruction networks: the non-compression convolutional auto-encoder
//! and a stacked recurrent baseline, plus checkpoint serialization.

mod baseline;
mod checkpoint;
mod ncae;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{decode_model, encode_model, load_model, save_model, FORMAT_VERSION, MAGIC};

use crate::error::{Error, Result};
use crate::nn::{grad_check_shifts, l2_loss, GradCheckReport, ParamStore, Tensor2D};

/// Both model families use exactly three layers.
pub const DEPTH: usize = 3;

pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NcaeSpec {
    pub kernel_size: usize,
    pub hidden_width: usize,
    pub input_channels: usize,
}

impl NcaeSpec {
    pub fn new(kernel_size: usize, hidden_width: usize, input_channels: usize) -> Self {
        Self {
            kernel_size,
            hidden_width,
            input_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.input_channels == 0 {
            return Err(Error::InvalidArgument(
                "input channels must be positive".into(),
            ));
        }
        if self.hidden_width < self.input_channels {
            return Err(Error::InvalidArgument(format!(
                "hidden width {} is below the input width {}; every layer must keep at least the input's channel count",
                self.hidden_width, self.input_channels
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub hidden_width: usize,
    pub input_channels: usize,
}

impl BaselineSpec {
    pub fn new(hidden_width: usize, input_channels: usize) -> Self {
        Self {
            hidden_width,
            input_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_width == 0 || self.input_channels == 0 {
            return Err(Error::InvalidArgument(
                "baseline widths must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Architecture {
    Ncae(NcaeSpec),
    Baseline(BaselineSpec),
}

impl Architecture {
    pub fn tag(&self) -> &'static str {
        match self {
            Architecture::Ncae(_) => "ncae",
            Architecture::Baseline(_) => "baseline",
        }
    }

    pub fn input_channels(&self) -> usize {
        match self {
            Architecture::Ncae(s) => s.input_channels,
            Architecture::Baseline(s) => s.input_channels,
        }
    }

    pub fn hidden_width(&self) -> usize {
        match self {
            Architecture::Ncae(s) => s.hidden_width,
            Architecture::Baseline(s) => s.hidden_width,
        }
    }

    pub fn kernel_size(&self) -> Option<usize> {
        match self {
            Architecture::Ncae(s) => Some(s.kernel_size),
            Architecture::Baseline(_) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Architecture::Ncae(s) => s.validate(),
            Architecture::Baseline(s) => s.validate(),
        }
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        match self {
            Architecture::Ncae(s) => ncae::layout(s),
            Architecture::Baseline(s) => baseline::layout(s),
        }
    }
}

/// A reconstruction network: architecture plus its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: Architecture,
    params: ParamStore,
}

/// Uniform `[-a, a]` weights with `a = sqrt(1 / fan_in)`, zero biases, drawn in
/// layout order from one seeded stream.
fn init_params(arch: &Architecture, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, shape) in arch.param_layout() {
        let mut p = crate::nn::Param::zeros(name, &shape);
        if shape.len() > 1 {
            // fan-in is every axis except the output one
            let fan_in: usize = shape[..shape.len() - 1].iter().product();
            let bound = (1.0 / fan_in as f64).sqrt();
            p.value
                .iter_mut()
                .for_each(|v| *v = rng.gen_range(-bound..=bound));
        }
        store.push(p);
    }
    store
}

pub fn build_ncae(spec: NcaeSpec, seed: u64) -> Result<Model> {
    let arch = Architecture::Ncae(spec);
    arch.validate()?;
    Ok(Model {
        params: init_params(&arch, seed),
        arch,
    })
}

pub fn build_baseline(spec: BaselineSpec, seed: u64) -> Result<Model> {
    let arch = Architecture::Baseline(spec);
    arch.validate()?;
    Ok(Model {
        params: init_params(&arch, seed),
        arch,
    })
}

pub fn build_model(arch: Architecture, seed: u64) -> Result<Model> {
    match arch {
        Architecture::Ncae(s) => build_ncae(s, seed),
        Architecture::Baseline(s) => build_baseline(s, seed),
    }
}

impl Model {
    /// Wraps existing parameters, checking them against the architecture's layout.
    pub fn from_parts(arch: Architecture, params: ParamStore) -> Result<Self> {
        arch.validate()?;
        let layout = arch.param_layout();
        if layout.len() != params.len()
            || layout
                .iter()
                .zip(params.iter())
                .any(|((name, shape), p)| *name != p.name || *shape != p.shape)
        {
            return Err(Error::ShapeMismatch(format!(
                "parameters do not match the {} layout",
                arch.tag()
            )));
        }
        params.check_shapes()?;
        Ok(Self { arch, params })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    fn check_input(&self, x: &Tensor2D) -> Result<()> {
        if x.channels() != self.arch.input_channels() {
            return Err(Error::ShapeMismatch(format!(
                "{} model expects {} channels, window has {}",
                self.arch.tag(),
                self.arch.input_channels(),
                x.channels()
            )));
        }
        Ok(())
    }

    /// Reconstructs `x` with this model's parameters.
    pub fn forward(&self, x: &Tensor2D) -> Result<Tensor2D> {
        self.forward_with(&self.params, x)
    }

    /// Reconstructs `x` using `params` in place of the model's own parameters.
    /// `params` must follow this model's layout.
    pub fn forward_with(&self, params: &ParamStore, x: &Tensor2D) -> Result<Tensor2D> {
        self.check_input(x)?;
        match &self.arch {
            Architecture::Ncae(s) => ncae::forward(s, params, x),
            Architecture::Baseline(s) => Ok(baseline::forward(s, params, x)?.output),
        }
    }

    /// Shape of every layer's output for input `x`, in order.
    pub fn layer_shapes(&self, x: &Tensor2D) -> Result<Vec<(usize, usize)>> {
        self.check_input(x)?;
        match &self.arch {
            Architecture::Ncae(s) => ncae::layer_shapes(s, &self.params, x),
            Architecture::Baseline(s) => {
                let trace = baseline::forward(s, &self.params, x)?;
                Ok(trace
                    .hidden
                    .iter()
                    .map(Tensor2D::shape)
                    .chain(std::iter::once(trace.output.shape()))
                    .collect())
            }
        }
    }

    /// Adds `scale * dL/dparams` for `L = ||x - f(x)||_2` into the gradient
    /// buffers and returns `L`.
    pub fn accumulate_gradients(&mut self, x: &Tensor2D, scale: f64) -> Result<f64> {
        self.check_input(x)?;
        match self.arch {
            Architecture::Ncae(s) => ncae::loss_and_backward(&s, &mut self.params, x, scale),
            Architecture::Baseline(s) => {
                let trace = baseline::forward(&s, &self.params, x)?;
                let (loss, mut up) = l2_loss(x, &trace.output)?;
                up.as_mut_slice().iter_mut().for_each(|g| *g *= scale);
                baseline::backward(&s, &mut self.params, x, &trace, &up);
                Ok(loss)
            }
        }
    }

    /// Zeroes gradients, then fills them with `dL/dparams` for a single window.
    pub fn compute_gradients(&mut self, x: &Tensor2D) -> Result<f64> {
        self.params.zero_grad();
        self.accumulate_gradients(x, 1.0)
    }

    /// Checks the backward pass on window `x` against central differences
    /// with step `step` on every parameter coordinate.
    pub fn grad_check(&mut self, x: &Tensor2D, step: f64) -> Result<GradCheckReport> {
        self.compute_gradients(x)?;
        self.check_stored_gradients(x, step)
    }

    /// Like [`Model::grad_check`] but compares against whatever is currently
    /// in the gradient buffers instead of recomputing them.
    pub fn check_stored_gradients(&self, x: &Tensor2D, step: f64) -> Result<GradCheckReport> {
        self.check_input(x)?;
        let params = &self.params;
        match &self.arch {
            Architecture::Ncae(s) => {
                let oracle = ncae::ShiftOracle::new(s, params, x)?;
                grad_check_shifts(params, x, oracle.output(), step, |pi, j, d| {
                    Ok(oracle.shift(pi, j, d))
                })
            }
            Architecture::Baseline(s) => {
                let oracle = baseline::ShiftOracle::new(s, params, x)?;
                grad_check_shifts(params, x, oracle.output(), step, |pi, j, d| {
                    Ok(oracle.shift(pi, j, d))
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ncae_parameter_count() {
        let m = build_ncae(NcaeSpec::new(3, 64, 13), 0).unwrap();
        assert_eq!(
            m.param_count(),
            3 * 13 * 64 + 64 + 3 * 64 * 64 + 64 + 3 * 64 * 13 + 13
        );
        assert_eq!(m.param_count(), 17_421);
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = build_ncae(NcaeSpec::new(5, 32, 13), 9).unwrap();
        let b = build_ncae(NcaeSpec::new(5, 32, 13), 9).unwrap();
        let c = build_ncae(NcaeSpec::new(5, 32, 13), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let r1 = build_baseline(BaselineSpec::new(16, 13), 4).unwrap();
        let r2 = build_baseline(BaselineSpec::new(16, 13), 4).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn init_bounds_and_zero_bias() {
        let m = build_ncae(NcaeSpec::new(3, 64, 13), 1).unwrap();
        let w = m.params().by_name("conv2.weight").unwrap();
        let bound = (1.0f64 / (3.0 * 64.0)).sqrt();
        assert!(w.value.iter().all(|v| v.abs() <= bound));
        assert!(m
            .params()
            .by_name("conv2.bias")
            .unwrap()
            .value
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn narrow_hidden_rejected() {
        assert!(build_ncae(NcaeSpec::new(3, 8, 13), 0).is_err());
        assert!(build_ncae(NcaeSpec::new(4, 64, 13), 0).is_err());
        assert!(build_baseline(BaselineSpec::new(0, 13), 0).is_err());
    }

    #[test]
    fn baseline_readout_shape_and_forward() {
        let m = build_baseline(BaselineSpec::new(64, 13), 2).unwrap();
        assert_eq!(
            m.params().by_name("readout.weight").unwrap().shape,
            vec![64, 13]
        );
        let x = Tensor2D::filled(32, 13, 0.25);
        assert_eq!(m.forward(&x).unwrap().shape(), (32, 13));
    }

    #[test]
    fn ncae_shape_and_zero_input() {
        let m = build_ncae(NcaeSpec::new(3, 64, 13), 3).unwrap();
        let x = Tensor2D::filled(32, 13, -0.5);
        assert_eq!(m.forward(&x).unwrap().shape(), (32, 13));
        let zero = m.forward(&Tensor2D::zeros(32, 13)).unwrap();
        assert!(zero.as_slice().iter().all(|&v| v == 0.0));
        assert!(m.forward(&Tensor2D::zeros(32, 12)).is_err());
    }

    #[test]
    fn layer_shapes_never_compress() {
        let m = build_ncae(NcaeSpec::new(7, 20, 13), 3).unwrap();
        let shapes = m.layer_shapes(&Tensor2D::zeros(11, 13)).unwrap();
        assert_eq!(shapes, vec![(11, 20), (11, 20), (11, 13)]);
    }

    #[test]
    fn from_parts_checks_layout() {
        let m = build_ncae(NcaeSpec::new(3, 16, 4), 3).unwrap();
        assert!(Model::from_parts(*m.arch(), m.params().clone()).is_ok());
        let other = Architecture::Ncae(NcaeSpec::new(5, 16, 4));
        assert!(Model::from_parts(other, m.params().clone()).is_err());
    }

    fn window(steps: usize, channels: usize, seed: u64) -> Tensor2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..steps * channels)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        Tensor2D::from_vec(steps, channels, v).unwrap()
    }

    fn naive_shift(m: &Model, x: &Tensor2D, pi: usize, j: usize, delta: f64) -> Tensor2D {
        let base = m.forward(x).unwrap();
        let mut p = m.params().clone();
        p.get_mut(pi).value[j] += delta;
        let mut out = m.forward_with(&p, x).unwrap();
        for (o, b) in out.as_mut_slice().iter_mut().zip(base.as_slice()) {
            *o -= b;
        }
        out
    }

    fn assert_close(a: &Tensor2D, b: &Tensor2D) {
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() <= 1e-12 + 1e-9 * y.abs(), "{x} vs {y}");
        }
    }

    #[test]
    fn difference_oracles_match_recomputation() {
        let x = window(9, 3, 2);
        let ncae_spec = NcaeSpec::new(3, 5, 3);
        let m = build_ncae(ncae_spec, 4).unwrap();
        let oracle = ncae::ShiftOracle::new(&ncae_spec, m.params(), &x).unwrap();
        for (pi, p) in m.params().iter().enumerate() {
            for j in 0..p.len() {
                let exact = naive_shift(&m, &x, pi, j, 0.05);
                assert_close(&oracle.shift(pi, j, 0.05), &exact);
            }
        }

        let rnn_spec = BaselineSpec::new(4, 3);
        let m = build_baseline(rnn_spec, 4).unwrap();
        let oracle = baseline::ShiftOracle::new(&rnn_spec, m.params(), &x).unwrap();
        for (pi, p) in m.params().iter().enumerate() {
            for j in 0..p.len() {
                let exact = naive_shift(&m, &x, pi, j, -0.05);
                assert_close(&oracle.shift(pi, j, -0.05), &exact);
            }
        }
    }

    #[test]
    fn model_grad_check_small_shapes() {
        let x = window(8, 3, 5);
        for arch in [
            Architecture::Ncae(NcaeSpec::new(5, 6, 3)),
            Architecture::Baseline(BaselineSpec::new(5, 3)),
        ] {
            let mut m = build_model(arch, 1).unwrap();
            let report = m.grad_check(&x, 1e-6).unwrap();
            assert!(report.passes(1e-6), "{arch:?}: {:e}", report.max_rel_error);
            assert_eq!(report.tensors.len(), m.params().len());

            m.params_mut()
                .get_mut(0)
                .grad
                .iter_mut()
                .for_each(|g| *g *= 1.1);
            let faulty = m.check_stored_gradients(&x, 1e-6).unwrap();
            assert!(faulty.max_rel_error > 1e-2);
        }
    }
}
