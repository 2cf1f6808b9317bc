//! Central finite-difference verification of analytic gradients, run in
//! 64-bit mode. Layer backwards are validated against the numeric gradient
//! of a fixed random weighting of the layer output.

use super::tensor::Tensor;
use crate::rng::Rng;
use rand::Rng as _;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-3;

pub fn random_tensor(shape: &[usize], rng: &mut Rng, lo: f64, hi: f64) -> Tensor<f64> {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(lo..hi);
    }
    t
}

/// Fixed random upstream weights turning a tensor-valued op into a scalar.
pub fn weighted_sum(t: &Tensor<f64>, weights: &Tensor<f64>) -> f64 {
    debug_assert_eq!(t.shape(), weights.shape());
    t.data().iter().zip(weights.data()).map(|(a, w)| a * w).sum()
}

/// Central-difference gradient of `f` at `x`, one coordinate at a time.
pub fn numeric_gradient(
    mut f: impl FnMut(&Tensor<f64>) -> f64,
    x: &Tensor<f64>,
    step: f64,
) -> Tensor<f64> {
    let mut grad = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let v = x.data()[i];
        probe.data_mut()[i] = v + step;
        let hi = f(&probe);
        probe.data_mut()[i] = v - step;
        let lo = f(&probe);
        probe.data_mut()[i] = v;
        grad.data_mut()[i] = (hi - lo) / (2.0 * step);
    }
    grad
}

/// Worst relative disagreement; near-zero pairs compare absolutely.
pub fn max_rel_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    debug_assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn numeric_gradient_matches_a_known_quadratic() {
        // f(x) = sum x_i^2 has gradient 2x.
        let mut rng = seeded(5);
        let x = random_tensor(&[7], &mut rng, -2.0, 2.0);
        let num = numeric_gradient(|t| t.data().iter().map(|v| v * v).sum(), &x, FD_STEP);
        let analytic = x.scale(2.0);
        assert!(max_rel_error(&analytic, &num) < 1e-6);
    }

    #[test]
    fn rel_error_handles_near_zero_pairs() {
        let a = Tensor::from_vec(&[2], vec![0.0, 1.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![1e-9, 1.0]).unwrap();
        assert!(max_rel_error(&a, &b) < 1e-2);
    }
}
