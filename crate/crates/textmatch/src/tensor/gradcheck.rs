use super::Tensor;

/// Central-difference gradient oracle: (f(x+he) − f(x−he)) / 2h per
/// coordinate. `f` must be deterministic and finite near `x`.
pub fn finite_difference_gradient(
    f: impl Fn(&Tensor) -> f64,
    x: &Tensor,
    step: f64,
) -> Tensor {
    let mut probe = x.clone();
    let mut grad = vec![0.0; x.numel()];
    for i in 0..x.numel() {
        let original = probe.data()[i];
        probe.data_mut()[i] = original + step;
        let plus = f(&probe);
        probe.data_mut()[i] = original - step;
        let minus = f(&probe);
        probe.data_mut()[i] = original;
        grad[i] = (plus - minus) / (2.0 * step);
    }
    Tensor::new(x.shape().to_vec(), grad).expect("gradient mirrors input shape")
}

/// Norm-based relative error between an analytic gradient and a reference:
/// ‖a − r‖₂ / max(‖r‖₂, floor). Zero reference with zero analytic is 0.
pub fn relative_error(analytic: &[f64], reference: &[f64]) -> f64 {
    assert_eq!(analytic.len(), reference.len(), "relative_error lengths");
    let diff: f64 = analytic
        .iter()
        .zip(reference.iter())
        .map(|(&a, &r)| (a - r) * (a - r))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = reference.iter().map(|&r| r * r).sum::<f64>().sqrt();
    if norm == 0.0 && diff == 0.0 {
        return 0.0;
    }
    diff / norm.max(1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let g = finite_difference_gradient(|t| t.data().iter().map(|v| v * v).sum(), &x, 1e-5);
        assert!((g.data()[0] - 2.0).abs() < 1e-8);
        assert!((g.data()[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = Tensor::new(vec![3], vec![0.3, -0.7, 2.0]).unwrap();
        let g = finite_difference_gradient(|_| 42.0, &x, 1e-5);
        assert!(g.data().iter().all(|&v| v.abs() < 1e-12));
    }
}
