use super::layers::sigmoid;
use super::Tensor;
use crate::error::{Error, Result};

fn check_same(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.is_empty() {
        return Err(Error::Empty(what.to_string()));
    }
    Ok(())
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    check_same(pred, target, "mse")?;
    let n = pred.len() as f64;
    let loss = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n;
    let grad = pred.zip_map(target, |p, t| 2.0 * (p - t) / n);
    Ok((loss, grad))
}

/// `max(x, 0) − x·y + ln(1 + e^{−|x|})` for one logit.
pub fn bce_with_logits_scalar(logit: f64, label: f64) -> f64 {
    logit.max(0.0) - logit * label + (-logit.abs()).exp().ln_1p()
}

/// Mean binary cross-entropy over logits and its gradient.
pub fn bce_with_logits(logits: &Tensor, labels: &Tensor) -> Result<(f64, Tensor)> {
    check_same(logits, labels, "bce")?;
    if labels.data().iter().any(|y| !(0.0..=1.0).contains(y)) {
        return Err(Error::Config("bce labels must lie in [0, 1]".into()));
    }
    let n = logits.len() as f64;
    let loss = logits
        .data()
        .iter()
        .zip(labels.data())
        .map(|(&x, &y)| bce_with_logits_scalar(x, y))
        .sum::<f64>()
        / n;
    let grad = logits.zip_map(labels, |x, y| (sigmoid(x) - y) / n);
    Ok((loss, grad))
}

const MOMENT_EPS: f64 = 1e-6;

/// Moment matching between a generated and a real batch, per time step and
/// feature: `mean_{t,f} [(μ̂ − μ)² + (σ̂ − σ)²]` with `σ = √(var + 1e-6)`
/// over the batch axis. Returns the gradient with respect to `generated`.
pub fn moment_loss(generated: &[Tensor], real: &[Tensor]) -> Result<(f64, Vec<Tensor>)> {
    if generated.len() != real.len() || generated.is_empty() {
        return Err(Error::length("moment loss steps", real.len(), generated.len()));
    }
    let features = generated[0].cols();
    let count = (generated.len() * features) as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(generated.len());
    for (g, r) in generated.iter().zip(real) {
        if g.cols() != r.cols() || g.cols() != features {
            return Err(Error::ShapeMismatch("moment loss feature counts differ".into()));
        }
        let (bg, br) = (g.rows() as f64, r.rows() as f64);
        let mut grad = Tensor::zeros(g.shape());
        for f in 0..features {
            let col_g = (0..g.rows()).map(|b| g.at(b, f));
            let col_r = (0..r.rows()).map(|b| r.at(b, f));
            let mean_g = col_g.clone().sum::<f64>() / bg;
            let mean_r = col_r.clone().sum::<f64>() / br;
            let var_g = col_g.map(|v| (v - mean_g).powi(2)).sum::<f64>() / bg;
            let var_r = col_r.map(|v| (v - mean_r).powi(2)).sum::<f64>() / br;
            let sd_g = (var_g + MOMENT_EPS).sqrt();
            let sd_r = (var_r + MOMENT_EPS).sqrt();
            total += (mean_g - mean_r).powi(2) + (sd_g - sd_r).powi(2);
            let cols = g.cols();
            for b in 0..g.rows() {
                let x = g.at(b, f);
                let d = 2.0 * (mean_g - mean_r) / bg + 2.0 * (sd_g - sd_r) * (x - mean_g) / (bg * sd_g);
                grad.data_mut()[b * cols + f] = d / count;
            }
        }
        grads.push(grad);
    }
    Ok((total / count, grads))
}
