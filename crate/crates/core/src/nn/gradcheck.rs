use crate::error::{Error, Result};

/// Central-difference step on 64-bit reals.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_abs_diff: f64,
    /// `max|a − n| / max(|a|, |n|, 1e-8)` with both maxima taken over all
    /// components.
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Central finite differences of `f` at `point`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> Result<f64>, point: &[f64]) -> Result<Vec<f64>> {
    let mut x = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let orig = x[i];
        x[i] = orig + FD_STEP;
        let plus = f(&x)?;
        x[i] = orig - FD_STEP;
        let minus = f(&x)?;
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("objective near component {i}")));
        }
        out.push((plus - minus) / (2.0 * FD_STEP));
    }
    Ok(out)
}

/// Compares an analytic gradient with central differences.
pub fn gradient_check(
    f: impl FnMut(&[f64]) -> Result<f64>,
    point: &[f64],
    analytic: &[f64],
    tolerance: f64,
) -> Result<GradCheckReport> {
    if analytic.len() != point.len() {
        return Err(Error::length("analytic gradient", point.len(), analytic.len()));
    }
    if analytic.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("analytic gradient".into()));
    }
    let numeric = numeric_gradient(f, point)?;
    let max_abs_diff = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(&numeric)
        .map(|v| v.abs())
        .fold(1e-8, f64::max);
    let max_rel_error = max_abs_diff / scale;
    Ok(GradCheckReport {
        max_abs_diff,
        max_rel_error,
        tolerance,
        passed: max_rel_error < tolerance,
    })
}
