//! Three stacked tanh recurrent layers (`C_in -> H -> H -> H`) followed by a
//! per-step affine readout back to `C_in`.

use super::BaselineSpec;
use crate::error::Result;
use crate::nn::{
    recurrent_cell_backward, recurrent_cell_forward, CellGrads, CellWeights, ParamStore, Tensor2D,
};

const LAYERS: usize = super::DEPTH;

pub(super) fn layout(s: &BaselineSpec) -> Vec<(String, Vec<usize>)> {
    let (c, h) = (s.input_channels, s.hidden_width);
    let mut out = Vec::new();
    for l in 0..LAYERS {
        let fan = if l == 0 { c } else { h };
        out.push((format!("rnn{}.input_weight", l + 1), vec![fan, h]));
        out.push((format!("rnn{}.recurrent_weight", l + 1), vec![h, h]));
        out.push((format!("rnn{}.bias", l + 1), vec![h]));
    }
    out.push(("readout.weight".into(), vec![h, c]));
    out.push(("readout.bias".into(), vec![c]));
    out
}

pub(super) struct Trace {
    /// Hidden state sequence of each recurrent layer.
    pub hidden: Vec<Tensor2D>,
    pub output: Tensor2D,
}

fn cell(p: &ParamStore, layer: usize) -> CellWeights<'_> {
    CellWeights {
        input: &p.get(3 * layer).value,
        recurrent: &p.get(3 * layer + 1).value,
        bias: &p.get(3 * layer + 2).value,
    }
}

pub(super) fn forward(s: &BaselineSpec, p: &ParamStore, x: &Tensor2D) -> Result<Trace> {
    let (steps, c, h) = (x.steps(), s.input_channels, s.hidden_width);
    let mut hidden = Vec::with_capacity(LAYERS);
    for layer in 0..LAYERS {
        let src = if layer == 0 { x } else { &hidden[layer - 1] };
        let w = cell(p, layer);
        let mut seq = Tensor2D::zeros(steps, h);
        let mut prev = vec![0.0; h];
        for t in 0..steps {
            let next = recurrent_cell_forward(src.row(t), &prev, w)?;
            seq.row_mut(t).copy_from_slice(&next);
            prev = next;
        }
        hidden.push(seq);
    }
    let (rw, rb) = (&p.get(3 * LAYERS).value, &p.get(3 * LAYERS + 1).value);
    let top = &hidden[LAYERS - 1];
    let mut output = Tensor2D::zeros(steps, c);
    for t in 0..steps {
        let out = output.row_mut(t);
        out.copy_from_slice(rb);
        for (i, &hv) in top.row(t).iter().enumerate() {
            for (o, &w) in out.iter_mut().zip(&rw[i * c..(i + 1) * c]) {
                *o += hv * w;
            }
        }
    }
    Ok(Trace { hidden, output })
}

/// Backpropagation through time; accumulates into the gradient buffers.
pub(super) fn backward(
    s: &BaselineSpec,
    p: &mut ParamStore,
    x: &Tensor2D,
    trace: &Trace,
    upstream: &Tensor2D,
) {
    let (steps, c, h) = (x.steps(), s.input_channels, s.hidden_width);
    let top = &trace.hidden[LAYERS - 1];

    let mut d_hidden = Tensor2D::zeros(steps, h);
    {
        let rw = p.get(3 * LAYERS).value.clone();
        let mut rw_grad = std::mem::take(&mut p.get_mut(3 * LAYERS).grad);
        let rb_grad = &mut p.get_mut(3 * LAYERS + 1).grad;
        for t in 0..steps {
            let up = upstream.row(t);
            for (b, &u) in rb_grad.iter_mut().zip(up) {
                *b += u;
            }
            for (i, &hv) in top.row(t).iter().enumerate() {
                for (g, &u) in rw_grad[i * c..(i + 1) * c].iter_mut().zip(up) {
                    *g += hv * u;
                }
                d_hidden.row_mut(t)[i] = rw[i * c..(i + 1) * c]
                    .iter()
                    .zip(up)
                    .map(|(w, u)| w * u)
                    .sum();
            }
        }
        p.get_mut(3 * LAYERS).grad = rw_grad;
    }

    for layer in (0..LAYERS).rev() {
        let src = if layer == 0 {
            x
        } else {
            &trace.hidden[layer - 1]
        };
        let seq = &trace.hidden[layer];
        let mut gx = std::mem::take(&mut p.get_mut(3 * layer).grad);
        let mut gh = std::mem::take(&mut p.get_mut(3 * layer + 1).grad);
        let mut gb = std::mem::take(&mut p.get_mut(3 * layer + 2).grad);
        let mut d_src = Tensor2D::zeros(steps, src.channels());
        let zeros = vec![0.0; h];
        let mut carry = vec![0.0; h];
        {
            let w = cell(p, layer);
            let mut grads = CellGrads {
                input: &mut gx,
                recurrent: &mut gh,
                bias: &mut gb,
            };
            for t in (0..steps).rev() {
                let dh: Vec<f64> = d_hidden
                    .row(t)
                    .iter()
                    .zip(&carry)
                    .map(|(a, b)| a + b)
                    .collect();
                let h_prev = if t == 0 { &zeros[..] } else { seq.row(t - 1) };
                let (dx, dh_prev) =
                    recurrent_cell_backward(src.row(t), h_prev, seq.row(t), w, &dh, &mut grads);
                d_src.row_mut(t).copy_from_slice(&dx);
                carry = dh_prev;
            }
        }
        p.get_mut(3 * layer).grad = gx;
        p.get_mut(3 * layer + 1).grad = gh;
        p.get_mut(3 * layer + 2).grad = gb;
        d_hidden = d_src;
    }
}

/// Exact output differences under single-coordinate parameter shifts,
/// propagated through time as differences rather than recomputed outputs.
pub(super) struct ShiftOracle<'a> {
    spec: &'a BaselineSpec,
    params: &'a ParamStore,
    input: &'a Tensor2D,
    trace: Trace,
}

/// `tanh(a + da) - tanh(a)` given `h = tanh(a)`.
fn tanh_difference(h: f64, da: f64) -> f64 {
    let u = da.tanh();
    u * (1.0 - h) * (1.0 + h) / (1.0 + h * u)
}

impl<'a> ShiftOracle<'a> {
    pub(super) fn new(
        spec: &'a BaselineSpec,
        params: &'a ParamStore,
        input: &'a Tensor2D,
    ) -> Result<Self> {
        let trace = forward(spec, params, input)?;
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

    pub(super) fn shift(&self, param: usize, index: usize, delta: f64) -> Tensor2D {
        let (steps, c, h) = (
            self.input.steps(),
            self.spec.input_channels,
            self.spec.hidden_width,
        );
        let perturbed_layer = param / 3;
        // difference of the source sequence feeding the current layer
        let mut d_src: Option<Tensor2D> = None;
        for layer in perturbed_layer..LAYERS {
            let src = if layer == 0 {
                self.input
            } else {
                &self.trace.hidden[layer - 1]
            };
            let seq = &self.trace.hidden[layer];
            let w = cell(self.params, layer);
            let mut d_seq = Tensor2D::zeros(steps, h);
            let mut d_prev = vec![0.0; h];
            for t in 0..steps {
                let mut da = vec![0.0; h];
                if let Some(ds) = &d_src {
                    accumulate_transpose(&mut da, ds.row(t), w.input, h);
                }
                accumulate_transpose(&mut da, &d_prev, w.recurrent, h);
                if layer == perturbed_layer {
                    let (row, col) = (index / h, index % h);
                    da[col] += match param % 3 {
                        0 => delta * src.get(t, row),
                        1 if t == 0 => 0.0,
                        1 => delta * (seq.get(t - 1, row) + d_prev[row]),
                        _ => delta,
                    };
                }
                for ((out, &hv), &a) in d_seq.row_mut(t).iter_mut().zip(seq.row(t)).zip(&da) {
                    *out = tanh_difference(hv, a);
                }
                d_prev.copy_from_slice(d_seq.row(t));
            }
            d_src = Some(d_seq);
        }

        let mut out = Tensor2D::zeros(steps, c);
        if let Some(dh) = &d_src {
            let rw = &self.params.get(3 * LAYERS).value;
            for t in 0..steps {
                accumulate_transpose(out.row_mut(t), dh.row(t), rw, c);
            }
        } else if param == 3 * LAYERS {
            let top = &self.trace.hidden[LAYERS - 1];
            let (row, col) = (index / c, index % c);
            for t in 0..steps {
                out.row_mut(t)[col] = delta * top.get(t, row);
            }
        } else {
            for t in 0..steps {
                out.row_mut(t)[index] = delta;
            }
        }
        out
    }
}

/// `acc += W^T v` for a row-major `W` of shape `v.len() x width`, skipping zeros.
fn accumulate_transpose(acc: &mut [f64], v: &[f64], w: &[f64], width: usize) {
    for (i, &x) in v.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (a, &wv) in acc.iter_mut().zip(&w[i * width..(i + 1) * width]) {
            *a += x * wv;
        }
    }
}
