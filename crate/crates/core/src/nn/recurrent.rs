//! Elman-style tanh cell: `h_t = tanh(x_t Wx + h_{t-1} Wh + b)`.
//!
//! `Wx` is stored row-major as `in x hidden`, `Wh` as `hidden x hidden`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct CellWeights<'a> {
    pub input: &'a [f64],
    pub recurrent: &'a [f64],
    pub bias: &'a [f64],
}

impl CellWeights<'_> {
    pub fn hidden(&self) -> usize {
        self.bias.len()
    }

    fn check(&self, input_dim: usize, h_prev: usize) -> Result<()> {
        let h = self.hidden();
        if self.input.len() != input_dim * h
            || self.recurrent.len() != h * h
            || h_prev != h
            || h == 0
        {
            return Err(Error::ShapeMismatch(format!(
                "cell with hidden {h}: Wx has {} (need {}), Wh has {} (need {}), h_prev has {h_prev}",
                self.input.len(),
                input_dim * h,
                self.recurrent.len(),
                h * h
            )));
        }
        Ok(())
    }
}

/// Gradient buffers matching [`CellWeights`]; backward passes accumulate into them.
#[derive(Debug)]
pub struct CellGrads<'a> {
    pub input: &'a mut [f64],
    pub recurrent: &'a mut [f64],
    pub bias: &'a mut [f64],
}

/// `acc[j] += sum_i v[i] * m[i, j]` for row-major `m` with `acc.len()` columns.
#[inline]
fn vec_mat_acc(v: &[f64], m: &[f64], acc: &mut [f64]) {
    let cols = acc.len();
    for (i, &vi) in v.iter().enumerate() {
        if vi == 0.0 {
            continue;
        }
        for (a, &w) in acc.iter_mut().zip(&m[i * cols..(i + 1) * cols]) {
            *a += vi * w;
        }
    }
}

pub fn recurrent_cell_forward(x: &[f64], h_prev: &[f64], w: CellWeights<'_>) -> Result<Vec<f64>> {
    w.check(x.len(), h_prev.len())?;
    let mut pre = w.bias.to_vec();
    vec_mat_acc(x, w.input, &mut pre);
    vec_mat_acc(h_prev, w.recurrent, &mut pre);
    pre.iter_mut().for_each(|v| *v = v.tanh());
    Ok(pre)
}

/// Backpropagates `dh` (gradient w.r.t. the cell output `h`) through one step.
///
/// Accumulates parameter gradients into `grads` and returns
/// `(d_input, d_h_prev)`.
pub fn recurrent_cell_backward(
    x: &[f64],
    h_prev: &[f64],
    h: &[f64],
    w: CellWeights<'_>,
    dh: &[f64],
    grads: &mut CellGrads<'_>,
) -> (Vec<f64>, Vec<f64>) {
    let hidden = w.hidden();
    let da: Vec<f64> = dh.iter().zip(h).map(|(g, y)| g * (1.0 - y * y)).collect();
    for (b, d) in grads.bias.iter_mut().zip(&da) {
        *b += d;
    }
    for (i, &xi) in x.iter().enumerate() {
        for (g, d) in grads.input[i * hidden..(i + 1) * hidden]
            .iter_mut()
            .zip(&da)
        {
            *g += xi * d;
        }
    }
    for (i, &hi) in h_prev.iter().enumerate() {
        for (g, d) in grads.recurrent[i * hidden..(i + 1) * hidden]
            .iter_mut()
            .zip(&da)
        {
            *g += hi * d;
        }
    }
    let row_dot = |m: &[f64], i: usize| -> f64 {
        m[i * hidden..(i + 1) * hidden]
            .iter()
            .zip(&da)
            .map(|(a, b)| a * b)
            .sum()
    };
    let dx = (0..x.len()).map(|i| row_dot(w.input, i)).collect();
    let dh_prev = (0..hidden).map(|i| row_dot(w.recurrent, i)).collect();
    (dx, dh_prev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_weights_give_zero_state() {
        let (wx, wh, b) = (vec![0.0; 6], vec![0.0; 4], vec![0.0; 2]);
        let w = CellWeights {
            input: &wx,
            recurrent: &wh,
            bias: &b,
        };
        assert_eq!(
            recurrent_cell_forward(&[1.0, 2.0, 3.0], &[0.5, -0.5], w).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn saturates_but_stays_finite() {
        let (wx, wh, b) = (vec![0.0; 2], vec![0.0; 4], vec![1e6, -1e6]);
        let w = CellWeights {
            input: &wx,
            recurrent: &wh,
            bias: &b,
        };
        let h = recurrent_cell_forward(&[1.0], &[0.3, 0.3], w).unwrap();
        assert_eq!(h, vec![1.0, -1.0]);
        assert!(h.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn matches_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (n_in, hid) = (5, 7);
        let (wx, wh, b) = (
            rand_vec(&mut rng, n_in * hid),
            rand_vec(&mut rng, hid * hid),
            rand_vec(&mut rng, hid),
        );
        let x = rand_vec(&mut rng, n_in);
        let hp = rand_vec(&mut rng, hid);
        let got = recurrent_cell_forward(
            &x,
            &hp,
            CellWeights {
                input: &wx,
                recurrent: &wh,
                bias: &b,
            },
        )
        .unwrap();
        for j in 0..hid {
            let mut acc = b[j];
            for i in 0..n_in {
                acc += x[i] * wx[i * hid + j];
            }
            for i in 0..hid {
                acc += hp[i] * wh[i * hid + j];
            }
            assert!((got[j] - acc.tanh()).abs() < 1e-12);
            assert!(got[j].abs() < 1.0);
        }
    }

    #[test]
    fn shape_mismatch() {
        let (wx, wh, b) = (vec![0.0; 6], vec![0.0; 4], vec![0.0; 2]);
        let w = CellWeights {
            input: &wx,
            recurrent: &wh,
            bias: &b,
        };
        assert!(recurrent_cell_forward(&[1.0, 2.0], &[0.0, 0.0], w).is_err());
        assert!(recurrent_cell_forward(&[1.0, 2.0, 3.0], &[0.0], w).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let (n_in, hid) = (3, 4);
        let wx = rand_vec(&mut rng, n_in * hid);
        let wh = rand_vec(&mut rng, hid * hid);
        let b = rand_vec(&mut rng, hid);
        let x = rand_vec(&mut rng, n_in);
        let hp = rand_vec(&mut rng, hid);
        let up = rand_vec(&mut rng, hid);
        let f = |wx: &[f64], wh: &[f64], b: &[f64], x: &[f64], hp: &[f64]| -> f64 {
            let h = recurrent_cell_forward(
                x,
                hp,
                CellWeights {
                    input: wx,
                    recurrent: wh,
                    bias: b,
                },
            )
            .unwrap();
            h.iter().zip(&up).map(|(a, u)| a * u).sum()
        };
        let h = recurrent_cell_forward(
            &x,
            &hp,
            CellWeights {
                input: &wx,
                recurrent: &wh,
                bias: &b,
            },
        )
        .unwrap();
        let (mut gwx, mut gwh, mut gb) = (vec![0.0; wx.len()], vec![0.0; wh.len()], vec![0.0; hid]);
        let (dx, dhp) = recurrent_cell_backward(
            &x,
            &hp,
            &h,
            CellWeights {
                input: &wx,
                recurrent: &wh,
                bias: &b,
            },
            &up,
            &mut CellGrads {
                input: &mut gwx,
                recurrent: &mut gwh,
                bias: &mut gb,
            },
        );
        let step = 1e-6;
        let fd = |which: usize, j: usize| -> f64 {
            let mut args = [wx.clone(), wh.clone(), b.clone(), x.clone(), hp.clone()];
            args[which][j] += step;
            let plus = f(&args[0], &args[1], &args[2], &args[3], &args[4]);
            args[which][j] -= 2.0 * step;
            let minus = f(&args[0], &args[1], &args[2], &args[3], &args[4]);
            (plus - minus) / (2.0 * step)
        };
        let analytic = [gwx, gwh, gb, dx, dhp];
        for (which, grads) in analytic.iter().enumerate() {
            for (j, &a) in grads.iter().enumerate() {
                let n = fd(which, j);
                assert!(
                    (a - n).abs() / a.abs().max(n.abs()).max(1e-12) < 1e-6,
                    "arg {which}[{j}]: {a} vs {n}"
                );
            }
        }
    }
}
