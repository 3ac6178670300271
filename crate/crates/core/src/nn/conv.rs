//! Same-padded, stride-1 1-D convolution along the time axis.
//!
//! Kernel weights are stored flat in `k x C_in x C_out` order, i.e. the
//! weight for tap `d`, input channel `i`, output channel `o` lives at
//! `(d * C_in + i) * C_out + o`. Tap `d` reads input step `t + d - (k-1)/2`;
//! steps outside `[0, T)` read zero.

use super::Tensor2D;
use crate::error::{Error, Result};

/// Gradients of [`conv1d_forward`] with respect to its three inputs.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor2D,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

fn check_shapes(input: &Tensor2D, weights: &[f64], bias: &[f64], kernel: usize) -> Result<usize> {
    if kernel.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "kernel size must be odd, got {kernel}"
        )));
    }
    let cout = bias.len();
    if cout == 0 {
        return Err(Error::ShapeMismatch(
            "convolution needs at least one output channel".into(),
        ));
    }
    let expected = kernel * input.channels() * cout;
    if weights.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "kernel {kernel} x {} in x {cout} out needs {expected} weights, got {}",
            input.channels(),
            weights.len()
        )));
    }
    Ok(cout)
}

/// Valid tap range for output step `t`: taps `d` with `0 <= t + d - pad < steps`.
#[inline]
fn taps(t: usize, pad: usize, kernel: usize, steps: usize) -> std::ops::Range<usize> {
    let lo = pad.saturating_sub(t);
    let hi = (steps + pad - t).min(kernel);
    lo..hi
}

pub fn conv1d_forward(
    input: &Tensor2D,
    weights: &[f64],
    bias: &[f64],
    kernel: usize,
) -> Result<Tensor2D> {
    let cout = check_shapes(input, weights, bias, kernel)?;
    let (steps, cin) = input.shape();
    let pad = (kernel - 1) / 2;
    let mut out = Tensor2D::zeros(steps, cout);
    for t in 0..steps {
        let out_row = out.row_mut(t);
        out_row.copy_from_slice(bias);
        for d in taps(t, pad, kernel, steps) {
            let in_row = input.row(t + d - pad);
            for (i, &x) in in_row.iter().enumerate() {
                let w = &weights[(d * cin + i) * cout..(d * cin + i + 1) * cout];
                for (acc, &wv) in out_row.iter_mut().zip(w) {
                    *acc += x * wv;
                }
            }
        }
    }
    Ok(out)
}

/// Accumulates weight and bias gradients into `weight_grad` / `bias_grad` and,
/// when requested, returns the gradient with respect to the input.
pub(crate) fn conv1d_backward_accumulate(
    input: &Tensor2D,
    weights: &[f64],
    kernel: usize,
    upstream: &Tensor2D,
    weight_grad: &mut [f64],
    bias_grad: &mut [f64],
    want_input_grad: bool,
) -> Option<Tensor2D> {
    let (steps, cin) = input.shape();
    let cout = upstream.channels();
    let pad = (kernel - 1) / 2;
    let mut input_grad = want_input_grad.then(|| Tensor2D::zeros(steps, cin));
    for t in 0..steps {
        let up = upstream.row(t);
        for (b, &u) in bias_grad.iter_mut().zip(up) {
            *b += u;
        }
        for d in taps(t, pad, kernel, steps) {
            let src = t + d - pad;
            let in_row = input.row(src);
            for (i, &x) in in_row.iter().enumerate() {
                let base = (d * cin + i) * cout;
                let wg = &mut weight_grad[base..base + cout];
                for (g, &u) in wg.iter_mut().zip(up) {
                    *g += x * u;
                }
            }
            if let Some(ig) = input_grad.as_mut() {
                let ig_row = ig.row_mut(src);
                for (i, slot) in ig_row.iter_mut().enumerate() {
                    let w = &weights[(d * cin + i) * cout..(d * cin + i + 1) * cout];
                    *slot += w.iter().zip(up).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
    }
    input_grad
}

pub fn conv1d_backward(
    input: &Tensor2D,
    weights: &[f64],
    kernel: usize,
    upstream: &Tensor2D,
) -> Result<ConvGrads> {
    let cout = upstream.channels();
    if upstream.steps() != input.steps() {
        return Err(Error::ShapeMismatch(format!(
            "upstream has {} steps, input has {}",
            upstream.steps(),
            input.steps()
        )));
    }
    check_shapes(input, weights, &vec![0.0; cout], kernel)?;
    let mut weight = vec![0.0; weights.len()];
    let mut bias = vec![0.0; cout];
    let input_grad = conv1d_backward_accumulate(
        input,
        weights,
        kernel,
        upstream,
        &mut weight,
        &mut bias,
        true,
    )
    .expect("input gradient requested");
    Ok(ConvGrads {
        input: input_grad,
        weight,
        bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, steps: usize, channels: usize) -> Tensor2D {
        let data = (0..steps * channels)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        Tensor2D::from_vec(steps, channels, data).unwrap()
    }

    /// Direct summation straight from the definition, zero outside `[0, T)`.
    fn naive_conv(input: &Tensor2D, w: &[f64], b: &[f64], k: usize) -> Tensor2D {
        let (steps, cin) = input.shape();
        let cout = b.len();
        let pad = (k - 1) as isize / 2;
        let mut out = Tensor2D::zeros(steps, cout);
        for t in 0..steps {
            for o in 0..cout {
                let mut acc = b[o];
                for d in 0..k {
                    let s = t as isize + d as isize - pad;
                    if s < 0 || s >= steps as isize {
                        continue;
                    }
                    for i in 0..cin {
                        acc += w[(d * cin + i) * cout + o] * input.get(s as usize, i);
                    }
                }
                out.set(t, o, acc);
            }
        }
        out
    }

    #[test]
    fn identity_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, 7, 1);
        assert_eq!(conv1d_forward(&x, &[1.0], &[0.0], 1).unwrap(), x);
        assert_eq!(conv1d_forward(&x, &[0.0, 1.0, 0.0], &[0.0], 3).unwrap(), x);
    }

    #[test]
    fn matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&mut rng, 8, 3);
        let w: Vec<f64> = (0..5 * 3 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fast = conv1d_forward(&x, &w, &b, 5).unwrap();
        let slow = naive_conv(&x, &w, &b, 5);
        for (a, e) in fast.as_slice().iter().zip(slow.as_slice()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_wider_than_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, 2, 2);
        let w: Vec<f64> = (0..7 * 2 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = vec![0.1, 0.2, 0.3];
        let fast = conv1d_forward(&x, &w, &b, 7).unwrap();
        let slow = naive_conv(&x, &w, &b, 7);
        for (a, e) in fast.as_slice().iter().zip(slow.as_slice()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_even_kernel_and_bad_shapes() {
        let x = Tensor2D::zeros(4, 2);
        assert!(conv1d_forward(&x, &[0.0; 8], &[0.0; 2], 2).is_err());
        assert!(conv1d_forward(&x, &[0.0; 5], &[0.0; 2], 3).is_err());
        let up = Tensor2D::zeros(3, 2);
        assert!(conv1d_backward(&x, &[0.0; 12], 3, &up).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&mut rng, 6, 2);
        let w: Vec<f64> = (0..3 * 2 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = conv1d_backward(&x, &w, 3, &Tensor2D::zeros(6, 3)).unwrap();
        assert!(g.input.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.weight.iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_kernel_passes_gradient_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&mut rng, 5, 1);
        let up = random(&mut rng, 5, 1);
        let g = conv1d_backward(&x, &[1.0], 1, &up).unwrap();
        assert_eq!(g.input, up);
        let bias_sum: f64 = up.as_slice().iter().sum();
        assert!((g.bias[0] - bias_sum).abs() < 1e-15);
    }

    /// Central differences on the scalar `sum(upstream * conv(x))`.
    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (steps, cin, cout, k) = (9, 3, 4, 5);
        let x = random(&mut rng, steps, cin);
        let w: Vec<f64> = (0..k * cin * cout)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let b: Vec<f64> = (0..cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let up = random(&mut rng, steps, cout);
        let objective = |x: &Tensor2D, w: &[f64], b: &[f64]| -> f64 {
            naive_conv(x, w, b, k)
                .as_slice()
                .iter()
                .zip(up.as_slice())
                .map(|(a, u)| a * u)
                .sum()
        };
        let g = conv1d_backward(&x, &w, k, &up).unwrap();
        let h = 1e-6;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-12);
        let mut worst: f64 = 0.0;
        for j in 0..w.len() {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[j] += h;
            wm[j] -= h;
            let n = (objective(&x, &wp, &b) - objective(&x, &wm, &b)) / (2.0 * h);
            worst = worst.max(rel(g.weight[j], n));
        }
        for j in 0..b.len() {
            let (mut bp, mut bm) = (b.clone(), b.clone());
            bp[j] += h;
            bm[j] -= h;
            let n = (objective(&x, &w, &bp) - objective(&x, &w, &bm)) / (2.0 * h);
            worst = worst.max(rel(g.bias[j], n));
        }
        for j in 0..steps * cin {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.as_mut_slice()[j] += h;
            xm.as_mut_slice()[j] -= h;
            let n = (objective(&xp, &w, &b) - objective(&xm, &w, &b)) / (2.0 * h);
            worst = worst.max(rel(g.input.as_slice()[j], n));
        }
        assert!(worst < 1e-6, "worst relative error {worst}");
    }
}
