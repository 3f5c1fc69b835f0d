//! Central finite-difference gradient checking at 64-bit precision.

use crate::error::Result;

use super::Tensor;

/// Outcome of a finite-difference comparison for one input tensor.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: String,
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||)`.
    pub rel_error: f64,
    pub analytic_norm: f64,
}

/// Compares analytic gradients of `loss(inputs)` against central differences
/// with step `h`. Every input must be a leaf with `requires_grad`.
///
/// At most `max_probes` coordinates per tensor are perturbed (evenly strided)
/// to bound the cost on larger models; the analytic side is compared on the
/// same coordinates.
pub fn check<F>(inputs: &[(String, Tensor<f64>)], loss: F, h: f64, max_probes: usize) -> Result<Vec<GradCheck>>
where
    F: Fn() -> Result<Tensor<f64>>,
{
    for (_, t) in inputs {
        t.zero_grad();
    }
    loss()?.backward()?;
    let mut out = Vec::with_capacity(inputs.len());
    for (name, t) in inputs {
        let analytic = t.grad().unwrap_or_else(|| vec![0.0; t.numel()]);
        let n = t.numel();
        let stride = (n / max_probes.max(1)).max(1);
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for i in (0..n).step_by(stride) {
            let orig = t.data()[i];
            t.update_data(|d| d[i] = orig + h);
            let up = loss()?.item()?;
            t.update_data(|d| d[i] = orig - h);
            let down = loss()?.item()?;
            t.update_data(|d| d[i] = orig);
            let numeric = (up - down) / (2.0 * h);
            diff2 += (analytic[i] - numeric).powi(2);
            a2 += analytic[i].powi(2);
            n2 += numeric.powi(2);
        }
        let denom = a2.sqrt().max(n2.sqrt());
        let rel_error = if denom == 0.0 { 0.0 } else { diff2.sqrt() / denom };
        out.push(GradCheck {
            name: name.clone(),
            rel_error,
            analytic_norm: a2.sqrt(),
        });
    }
    for (_, t) in inputs {
        t.zero_grad();
    }
    Ok(out)
}
