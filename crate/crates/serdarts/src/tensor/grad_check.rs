//! Finite-difference verification of reverse-mode gradients.
//!
//! Runs at `f64`: the checks need headroom the training dtype does not have.

use super::Tensor;
use crate::error::{Error, Result};

/// Compare the analytic gradient of a scalar-valued function against central
/// differences, returning the maximum relative error over coordinates of `x`:
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
///
/// `x` must be a tracked leaf; `f` is re-evaluated at `x ± eps` per
/// coordinate without recording. The closure must be deterministic.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid("grad_check", format!("eps must be positive, got {eps}")));
    }
    if !x.is_tracked() {
        return Err(Error::invalid("grad_check", "x must be a tracked leaf"));
    }

    let y = f(x)?;
    if !y.is_scalar() {
        return Err(Error::invalid(
            "grad_check",
            format!("f must be scalar-valued, got shape {:?}", y.shape()),
        ));
    }
    if !y.item().is_finite() {
        return Err(Error::NonFinite { context: "grad_check: f(x)".into() });
    }
    x.zero_grad();
    y.backward()?;
    let analytic = x.grad_or_zeros();

    let base = x.to_vec();
    let mut probe = base.clone();
    let mut max_rel = 0.0f64;
    for i in 0..base.len() {
        probe[i] = base[i] + eps;
        x.set_data(&probe);
        let up = super::no_grad(|| f(x).map(|t| t.item()))?;
        probe[i] = base[i] - eps;
        x.set_data(&probe);
        let down = super::no_grad(|| f(x).map(|t| t.item()))?;
        probe[i] = base[i];
        if !up.is_finite() || !down.is_finite() {
            x.set_data(&base);
            return Err(Error::NonFinite { context: format!("grad_check: probe at coordinate {i}") });
        }
        let numeric = (up - down) / (2.0 * eps);
        let rel = (analytic[i] - numeric).abs() / 1e-8f64.max(analytic[i].abs() + numeric.abs());
        if rel > max_rel {
            max_rel = rel;
        }
    }
    x.set_data(&base);
    Ok(max_rel)
}
