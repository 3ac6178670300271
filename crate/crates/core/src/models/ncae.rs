//! Three same-padded convolutions: `C_in -> H` (ReLU), `H -> H` (ReLU),
//! `H -> C_in` (linear). Every layer keeps the full time length.

use super::NcaeSpec;
use crate::error::Result;
use crate::nn::{
    conv1d_backward_accumulate, conv1d_forward, l2_loss, relu, relu_backward, ParamStore, Tensor2D,
};

pub(super) fn layout(s: &NcaeSpec) -> Vec<(String, Vec<usize>)> {
    let (k, c, h) = (s.kernel_size, s.input_channels, s.hidden_width);
    vec![
        ("conv1.weight".into(), vec![k, c, h]),
        ("conv1.bias".into(), vec![h]),
        ("conv2.weight".into(), vec![k, h, h]),
        ("conv2.bias".into(), vec![h]),
        ("conv3.weight".into(), vec![k, h, c]),
        ("conv3.bias".into(), vec![c]),
    ]
}

struct Trace {
    pre1: Tensor2D,
    act1: Tensor2D,
    pre2: Tensor2D,
    act2: Tensor2D,
    output: Tensor2D,
}

fn run(s: &NcaeSpec, p: &ParamStore, x: &Tensor2D) -> Result<Trace> {
    let k = s.kernel_size;
    let pre1 = conv1d_forward(x, &p.get(0).value, &p.get(1).value, k)?;
    let act1 = relu(&pre1);
    let pre2 = conv1d_forward(&act1, &p.get(2).value, &p.get(3).value, k)?;
    let act2 = relu(&pre2);
    let output = conv1d_forward(&act2, &p.get(4).value, &p.get(5).value, k)?;
    Ok(Trace {
        pre1,
        act1,
        pre2,
        act2,
        output,
    })
}

pub(super) fn forward(s: &NcaeSpec, p: &ParamStore, x: &Tensor2D) -> Result<Tensor2D> {
    Ok(run(s, p, x)?.output)
}

pub(super) fn layer_shapes(
    s: &NcaeSpec,
    p: &ParamStore,
    x: &Tensor2D,
) -> Result<Vec<(usize, usize)>> {
    let t = run(s, p, x)?;
    Ok(vec![t.act1.shape(), t.act2.shape(), t.output.shape()])
}

pub(super) fn loss_and_backward(
    s: &NcaeSpec,
    p: &mut ParamStore,
    x: &Tensor2D,
    scale: f64,
) -> Result<f64> {
    let k = s.kernel_size;
    let t = run(s, p, x)?;
    let (loss, mut up) = l2_loss(x, &t.output)?;
    up.as_mut_slice().iter_mut().for_each(|g| *g *= scale);

    let d_act2 = backward_layer(p, 4, &t.act2, k, &up, true).expect("requested");
    let d_pre2 = relu_backward(&t.pre2, &d_act2);
    let d_act1 = backward_layer(p, 2, &t.act1, k, &d_pre2, true).expect("requested");
    let d_pre1 = relu_backward(&t.pre1, &d_act1);
    backward_layer(p, 0, x, k, &d_pre1, false);
    Ok(loss)
}

/// Backward through the conv whose weight sits at `index` and bias at `index + 1`.
fn backward_layer(
    p: &mut ParamStore,
    index: usize,
    input: &Tensor2D,
    k: usize,
    upstream: &Tensor2D,
    want_input_grad: bool,
) -> Option<Tensor2D> {
    let mut wgrad = std::mem::take(&mut p.get_mut(index).grad);
    let mut bgrad = std::mem::take(&mut p.get_mut(index + 1).grad);
    let d_input = conv1d_backward_accumulate(
        input,
        &p.get(index).value,
        k,
        upstream,
        &mut wgrad,
        &mut bgrad,
        want_input_grad,
    );
    p.get_mut(index).grad = wgrad;
    p.get_mut(index + 1).grad = bgrad;
    d_input
}

/// Exact output differences under single-coordinate parameter shifts, used by
/// the gradient checker. The shift is pushed forward as a difference so the
/// result never involves cancelling two full reconstructions.
pub(super) struct ShiftOracle<'a> {
    spec: &'a NcaeSpec,
    params: &'a ParamStore,
    input: &'a Tensor2D,
    trace: Trace,
}

impl<'a> ShiftOracle<'a> {
    pub(super) fn new(
        spec: &'a NcaeSpec,
        params: &'a ParamStore,
        input: &'a Tensor2D,
    ) -> Result<Self> {
        let trace = run(spec, params, input)?;
        Ok(Self {
            spec,
            params,
            input,
            trace,
        })
    }

    pub(super) fn output(&self) -> &Tensor2D {
        &self.trace.output
    }

    /// `f(p + delta e) - f(p)` for coordinate `index` of parameter `param`.
    pub(super) fn shift(&self, param: usize, index: usize, delta: f64) -> Tensor2D {
        let k = self.spec.kernel_size;
        let layer = param / 2;
        let layer_input = match layer {
            0 => self.input,
            1 => &self.trace.act1,
            _ => &self.trace.act2,
        };
        let cout = self.params.get(2 * layer + 1).len();
        let steps = layer_input.steps();
        let mut d = Tensor2D::zeros(steps, cout);
        if param % 2 == 1 {
            for t in 0..steps {
                d.row_mut(t)[index] = delta;
            }
        } else {
            let cin = layer_input.channels();
            let o = index % cout;
            let i = (index / cout) % cin;
            let tap = index / (cout * cin);
            let pad = (k - 1) / 2;
            for t in 0..steps {
                if let Some(src) = (t + tap).checked_sub(pad).filter(|&s| s < steps) {
                    d.row_mut(t)[o] = delta * layer_input.get(src, i);
                }
            }
        }
        for next in layer + 1..3 {
            let pre = if next == 1 {
                &self.trace.pre1
            } else {
                &self.trace.pre2
            };
            relu_difference(pre, &mut d);
            d = conv_difference(&d, &self.params.get(2 * next).value, k);
        }
        d
    }
}

/// Replaces `d` by `relu(z + d) - relu(z)` elementwise.
fn relu_difference(z: &Tensor2D, d: &mut Tensor2D) {
    for (dv, &zv) in d.as_mut_slice().iter_mut().zip(z.as_slice()) {
        let moved = zv + *dv;
        *dv = match (zv > 0.0, moved > 0.0) {
            (true, true) => *dv,
            (false, false) => 0.0,
            _ => moved.max(0.0) - zv.max(0.0),
        };
    }
}

/// Bias-free convolution of a sparse difference tensor.
fn conv_difference(d: &Tensor2D, weights: &[f64], k: usize) -> Tensor2D {
    let (steps, cin) = d.shape();
    let cout = weights.len() / (k * cin);
    let pad = (k - 1) / 2;
    let mut out = Tensor2D::zeros(steps, cout);
    for s in 0..steps {
        for (i, &v) in d.row(s).iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            for tap in 0..k {
                // output step t reads input step t + tap - pad
                let Some(t) = (s + pad).checked_sub(tap).filter(|&t| t < steps) else {
                    continue;
                };
                let w = &weights[(tap * cin + i) * cout..(tap * cin + i + 1) * cout];
                for (o, &wv) in out.row_mut(t).iter_mut().zip(w) {
                    *o += v * wv;
                }
            }
        }
    }
    out
}
