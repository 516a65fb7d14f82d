//! Central finite differences, used to validate analytic gradients.

use crate::error::Result;

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Below this magnitude the comparison degrades to an absolute one, so that
/// gradients that are analytically zero are not judged on round-off noise.
pub const REL_ERR_FLOOR: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

/// Central-difference derivative of `f` at coordinate `index` of `x`.
pub fn central_difference<F>(f: &mut F, x: &mut [f64], index: usize, step: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let orig = x[index];
    x[index] = orig + step;
    let plus = f(x)?;
    x[index] = orig - step;
    let minus = f(x)?;
    x[index] = orig;
    Ok((plus - minus) / (2.0 * step))
}

/// Full numeric gradient of `f` at `x`.
pub fn numeric_gradient<F>(mut f: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut work = x.to_vec();
    (0..x.len())
        .map(|i| central_difference(&mut f, &mut work, i, step))
        .collect()
}
