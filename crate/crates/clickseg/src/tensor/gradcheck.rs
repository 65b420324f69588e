//! Central-difference verification harness for the autodiff core.

use super::Tensor;

/// Compare the analytic gradient of a scalar-valued function against
/// central differences `(f(x+eps·e_i) − f(x−eps·e_i)) / (2·eps)`.
///
/// Returns the max over elements of
/// `|analytic − numeric| / (|analytic| + |numeric| + 1e-8)`.
/// A NaN on either side (or a failed backward) reports +∞.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f32) -> f32
where
    F: Fn(&Tensor) -> Tensor,
{
    assert!(eps > 0.0, "grad_check eps must be positive");

    let leaf = match Tensor::param(x.shape(), x.to_vec()) {
        Ok(t) => t,
        Err(_) => return f32::INFINITY,
    };
    let loss = f(&leaf);
    if loss.backward().is_err() {
        return f32::INFINITY;
    }
    let analytic = leaf.grad_or_zeros();

    let base = x.to_vec();
    let mut max_err = 0.0f64;
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += eps;
        let mut minus = base.clone();
        minus[i] -= eps;
        let fp = f(&Tensor::from_vec(x.shape(), plus).unwrap()).item() as f64;
        let fm = f(&Tensor::from_vec(x.shape(), minus).unwrap()).item() as f64;
        let numeric = (fp - fm) / (2.0 * eps as f64);
        let a = analytic[i] as f64;
        if !numeric.is_finite() || !a.is_finite() {
            return f32::INFINITY;
        }
        let err = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-8);
        max_err = max_err.max(err);
    }
    max_err as f32
}
