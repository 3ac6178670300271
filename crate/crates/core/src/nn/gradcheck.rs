//! Central finite-difference verification of analytic gradients.

use rayon::prelude::*;

use super::{ParamStore, Tensor2D};
use crate::error::{Error, Result};

/// Worst disagreement found inside one named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Central difference of `L = ||x - f(x)||_2` from the two output shifts
/// `d+ = f_{p+h}(x) - f_p(x)` and `d- = f_{p-h}(x) - f_p(x)`.
///
/// `L+ - L-` is formed as `sum (d-_j - d+_j)(2 r_j - d+_j - d-_j) / (L+ + L-)`
/// with `r = x - f_p(x)`, so no two nearly equal reconstructions are ever
/// subtracted.
fn central_difference(
    residual: &[f64],
    plus: &Tensor2D,
    minus: &Tensor2D,
    span: f64,
) -> Result<f64> {
    let mut sq_diff = 0.0;
    let (mut sq_plus, mut sq_minus) = (0.0, 0.0);
    for ((&r, &dp), &dm) in residual.iter().zip(plus.as_slice()).zip(minus.as_slice()) {
        let (rp, rm) = (r - dp, r - dm);
        sq_diff += (dm - dp) * (rp + rm);
        sq_plus += rp * rp;
        sq_minus += rm * rm;
    }
    let (lp, lm) = (sq_plus.sqrt(), sq_minus.sqrt());
    if !lp.is_finite() || !lm.is_finite() || !sq_diff.is_finite() {
        return Err(Error::NonFinite("loss during finite differencing".into()));
    }
    let denom = lp + lm;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(sq_diff / denom / span)
}

/// Compares the gradients stored in `params` with central differences of
/// `L = ||input - f(input)||_2`, perturbing every coordinate by `+-step`.
///
/// `shift(param, index, delta)` must return `f_{p + delta e}(input) - f_p(input)`
/// where `e` is the unit vector of coordinate `index` of parameter `param`,
/// and `base_output` must be `f_p(input)`.
pub fn grad_check_shifts<F>(
    params: &ParamStore,
    input: &Tensor2D,
    base_output: &Tensor2D,
    step: f64,
    shift: F,
) -> Result<GradCheckReport>
where
    F: Fn(usize, usize, f64) -> Result<Tensor2D> + Sync,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step must be positive, got {step}"
        )));
    }
    if !input.same_shape(base_output) {
        return Err(Error::ShapeMismatch(
            "base output does not match input".into(),
        ));
    }
    if !base_output.is_finite() {
        return Err(Error::NonFinite(
            "loss at the unperturbed parameters".into(),
        ));
    }
    let residual: Vec<f64> = input
        .as_slice()
        .iter()
        .zip(base_output.as_slice())
        .map(|(x, y)| x - y)
        .collect();

    let coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| (0..p.len()).map(move |j| (pi, j)))
        .collect();

    let numeric: Vec<f64> = coords
        .par_iter()
        .map(|&(pi, j)| {
            let theta = params.get(pi).value[j];
            // the perturbed values actually representable in f64
            let (up, down) = (theta + step, theta - step);
            let plus = shift(pi, j, up - theta)?;
            let minus = shift(pi, j, down - theta)?;
            central_difference(&residual, &plus, &minus, up - down)
        })
        .collect::<Result<_>>()?;

    let mut tensors: Vec<TensorCheck> = params
        .iter()
        .map(|p| TensorCheck {
            name: p.name.clone(),
            coordinates: p.len(),
            max_rel_error: f64::NEG_INFINITY,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        })
        .collect();
    for (&(pi, j), &n) in coords.iter().zip(&numeric) {
        let a = params.get(pi).grad[j];
        let err = relative_error(a, n);
        let entry = &mut tensors[pi];
        if err > entry.max_rel_error {
            entry.max_rel_error = err;
            entry.worst_index = j;
            entry.analytic = a;
            entry.numeric = n;
        }
    }
    for t in tensors.iter_mut().filter(|t| t.coordinates == 0) {
        t.max_rel_error = 0.0;
    }
    let max_rel_error = tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        tensors,
        max_rel_error,
    })
}

/// Black-box variant: `forward(params, input)` is re-run at every perturbed
/// parameter set and the shifts are taken against the unperturbed output.
/// Its resolution is limited by the rounding of the reconstruction itself.
pub fn grad_check<F>(
    params: &ParamStore,
    input: &Tensor2D,
    step: f64,
    forward: F,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &Tensor2D) -> Result<Tensor2D> + Sync,
{
    let base = forward(params, input)?;
    grad_check_shifts(params, input, &base, step, |pi, j, delta| {
        let mut local = params.clone();
        local.get_mut(pi).value[j] += delta;
        let mut out = forward(&local, input)?;
        for (o, b) in out.as_mut_slice().iter_mut().zip(base.as_slice()) {
            *o -= b;
        }
        Ok(out)
    })
}
