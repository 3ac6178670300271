use super::Tensor2D;
use crate::error::{Error, Result};

/// Euclidean reconstruction distance `||X - X_hat||_2` over all entries,
/// with its gradient with respect to `X_hat`.
///
/// At `L = 0` the gradient is the zero tensor.
pub fn l2_loss(target: &Tensor2D, recon: &Tensor2D) -> Result<(f64, Tensor2D)> {
    let loss = l2_distance(target, recon)?;
    let mut grad = recon.clone();
    if loss == 0.0 {
        grad.as_mut_slice().iter_mut().for_each(|g| *g = 0.0);
    } else {
        for (g, &x) in grad.as_mut_slice().iter_mut().zip(target.as_slice()) {
            *g = (*g - x) / loss;
        }
    }
    Ok((loss, grad))
}

/// The loss value alone.
pub fn l2_distance(target: &Tensor2D, recon: &Tensor2D) -> Result<f64> {
    if !target.same_shape(recon) {
        return Err(Error::ShapeMismatch(format!(
            "target {:?} vs reconstruction {:?}",
            target.shape(),
            recon.shape()
        )));
    }
    Ok(target
        .as_slice()
        .iter()
        .zip(recon.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_is_zero_with_zero_grad() {
        let x = Tensor2D::from_vec(2, 2, vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let (l, g) = l2_loss(&x, &x).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn three_four_five() {
        let x = Tensor2D::from_vec(2, 2, vec![3.0, 4.0, 0.0, 0.0]).unwrap();
        let zero = Tensor2D::zeros(2, 2);
        assert_eq!(l2_loss(&x, &zero).unwrap().0, 5.0);
    }

    #[test]
    fn shape_mismatch() {
        assert!(l2_loss(&Tensor2D::zeros(2, 3), &Tensor2D::zeros(3, 2)).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = |rng: &mut ChaCha8Rng| (0..24).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x = Tensor2D::from_vec(6, 4, data(&mut rng)).unwrap();
        let y = Tensor2D::from_vec(6, 4, data(&mut rng)).unwrap();
        let (_, g) = l2_loss(&x, &y).unwrap();
        let h = 1e-6;
        for j in 0..24 {
            let (mut yp, mut ym) = (y.clone(), y.clone());
            yp.as_mut_slice()[j] += h;
            ym.as_mut_slice()[j] -= h;
            let n = (l2_distance(&x, &yp).unwrap() - l2_distance(&x, &ym).unwrap()) / (2.0 * h);
            let a = g.as_slice()[j];
            assert!((a - n).abs() / a.abs().max(n.abs()).max(1e-12) < 1e-6);
        }
    }
}
