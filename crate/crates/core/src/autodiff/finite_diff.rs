use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Central-difference gradient of a scalar function at `point`.
///
/// Each coordinate is perturbed by `±eps` in turn:
/// `(f(x + eps·e_i) − f(x − eps·e_i)) / (2·eps)`.
pub fn finite_difference_gradient<F>(mut f: F, point: &Tensor, eps: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be > 0, got {eps}")));
    }
    let mut probe = point.clone();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let x = point.data()[i];
        probe.data_mut()[i] = x + eps;
        let plus = f(&probe)?;
        probe.data_mut()[i] = x - eps;
        let minus = f(&probe)?;
        probe.data_mut()[i] = x;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite {
                op: "finite_difference_gradient",
            });
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Tensor::new(point.shape().to_vec(), grad)
}

/// `max_i |a_i − b_i| / max(max_i |b_i|, floor)`: error relative to the
/// reference gradient's scale.
pub fn max_relative_error(a: &Tensor, reference: &Tensor, floor: f64) -> f64 {
    let scale = reference.max_abs().max(floor);
    a.data()
        .iter()
        .zip(reference.data())
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}
