//! Reconstruction and variational objectives.

use std::cell::Cell;

use crate::decoder::Trajectory;
use crate::error::{Error, Result};

/// Diagonal Gaussian over the latent space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatentGaussian {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
    pub kl_weight: f64,
}

thread_local! {
    static KL_EVALUATIONS: Cell<u64> = const { Cell::new(0) };
}

/// Number of KL evaluations performed on the current thread.
pub fn kl_evaluations() -> u64 {
    KL_EVALUATIONS.with(Cell::get)
}

/// Mean squared error over flattened vectors.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Usage(format!("mse: prediction has {} entries, target {}", pred.len(), target.len())));
    }
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.len() as f64)
}

/// Mean of squared errors over all `2P` coordinates.
pub fn mse_reconstruction(pred: &Trajectory, target: &[[f64; 2]]) -> Result<f64> {
    if pred.xs.len() != target.len() || pred.ys.len() != target.len() {
        return Err(Error::Usage(format!(
            "reconstruction: prediction has {} points, target {}",
            pred.xs.len(),
            target.len()
        )));
    }
    let flat: Vec<f64> = target.iter().map(|p| p[0]).chain(target.iter().map(|p| p[1])).collect();
    mse(&pred.flatten(), &flat)
}

/// KL divergence to the unit normal, parameterized by log-variance.
pub fn kl_from_logvar(mean: &[f64], logvar: &[f64]) -> f64 {
    KL_EVALUATIONS.with(|c| c.set(c.get() + 1));
    0.5 * mean.iter().zip(logvar).map(|(m, lv)| m * m + lv.exp() - 1.0 - lv).sum::<f64>()
}

pub fn kl_standard_normal(g: &LatentGaussian) -> f64 {
    let logvar: Vec<f64> = g.std.iter().map(|s| 2.0 * s.ln()).collect();
    kl_from_logvar(&g.mean, &logvar)
}

pub fn vae_objective(
    pred: &Trajectory,
    target: &[[f64; 2]],
    latent: &LatentGaussian,
    kl_weight: f64,
) -> Result<LossBreakdown> {
    let reconstruction = mse_reconstruction(pred, target)?;
    let kl = if kl_weight == 0.0 { 0.0 } else { kl_standard_normal(latent) };
    Ok(LossBreakdown { total: reconstruction + kl_weight * kl, reconstruction, kl, kl_weight })
}
