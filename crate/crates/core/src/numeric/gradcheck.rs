use super::params::{ModelParams, ParamId};
use crate::error::Result;

/// Compares the analytic gradient produced by `objective` against central
/// differences over every parameter element.
///
/// `objective` must compute the loss for the current parameter values and
/// leave the analytic gradient in the parameter grad buffers. Returns the
/// largest `|analytic - numeric| / max(|analytic| + |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(params: &mut ModelParams, eps: f64, mut objective: F) -> Result<f64>
where
    F: FnMut(&mut ModelParams) -> Result<f64>,
{
    objective(params)?;
    let analytic: Vec<Vec<f64>> = ParamId::ALL
        .iter()
        .map(|&id| {
            let t = params.get(id);
            t.grad().map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec)
        })
        .collect();

    let mut worst = 0.0f64;
    for (id, grads) in ParamId::ALL.iter().zip(&analytic) {
        for (j, &a) in grads.iter().enumerate() {
            let x = params.get(*id).values()[j];
            params.get_mut(*id).values_mut()[j] = x + eps;
            let plus = objective(params)?;
            params.get_mut(*id).values_mut()[j] = x - eps;
            let minus = objective(params)?;
            params.get_mut(*id).values_mut()[j] = x;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    for (id, grads) in ParamId::ALL.iter().zip(analytic) {
        params.get_mut(*id).grad_mut().copy_from_slice(&grads);
    }
    Ok(worst)
}
