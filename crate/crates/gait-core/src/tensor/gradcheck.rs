//! Central-finite-difference gradient checker.

use crate::error::TensorError;
use crate::scalar::Scalar;

use super::Tensor;

/// Compare analytic gradients of a scalar-valued tensor function against
/// central finite differences.
///
/// Returns the maximum over all input coordinates of
/// |analytic - numeric| / max(1, |numeric|).
///
/// `f` must be deterministic; it is re-evaluated 2 * (total input
/// coordinates) times, so keep inputs small.
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], eps: f64) -> Result<f64, TensorError>
where
    T: Scalar,
    F: Fn(&[Tensor<T>]) -> Result<Tensor<T>, TensorError>,
{
    // Analytic pass: leaves that require gradients.
    let leaves: Vec<Tensor<T>> = inputs
        .iter()
        .map(|t| Tensor::param(t.shape(), t.to_vec()))
        .collect::<Result<_, _>>()?;
    let loss = f(&leaves)?;
    if !loss.is_scalar() {
        return Err(TensorError::NonScalarLoss {
            shape: loss.shape().to_vec(),
        });
    }
    loss.backward()?;
    let analytic: Vec<Vec<T>> = leaves.iter().map(|l| l.grad_or_zeros()).collect();

    let eval = |perturbed: &[Tensor<T>]| -> Result<f64, TensorError> {
        let y = f(perturbed)?;
        y.scalar_value()?
            .to_f64()
            .ok_or_else(|| TensorError::invalid("grad_check", "loss not convertible to f64"))
    };

    let step = T::from_f64(eps)
        .ok_or_else(|| TensorError::invalid("grad_check", "eps not representable"))?;
    let mut max_rel = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let base = input.to_vec();
        for j in 0..base.len() {
            let make = |delta: T| -> Result<Tensor<T>, TensorError> {
                let mut d = base.clone();
                d[j] += delta;
                Tensor::from_vec(input.shape(), d)
            };
            let plus = make(step)?;
            let minus = make(-step)?;
            let mut probe: Vec<Tensor<T>> = inputs.to_vec();
            probe[i] = plus;
            let fp = eval(&probe)?;
            probe[i] = minus;
            let fm = eval(&probe)?;
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic[i][j].to_f64().unwrap_or(f64::NAN);
            let rel = (a - numeric).abs() / numeric.abs().max(1.0);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
