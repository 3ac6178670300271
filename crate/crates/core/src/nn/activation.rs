use super::Tensor2D;

pub fn relu(x: &Tensor2D) -> Tensor2D {
    let mut y = x.clone();
    y.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Passes `upstream` where `x > 0`; the subgradient at zero is taken as 0.
pub fn relu_backward(x: &Tensor2D, upstream: &Tensor2D) -> Tensor2D {
    debug_assert!(x.same_shape(upstream));
    let mut g = upstream.clone();
    for (gv, &xv) in g.as_mut_slice().iter_mut().zip(x.as_slice()) {
        if xv <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}
