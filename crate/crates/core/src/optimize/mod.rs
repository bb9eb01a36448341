//! Losses, Adam and learning-rate schedules.

mod adam;
mod loss;
pub mod ssim;

pub use adam::{AdamGroup, BETA1, BETA2, EPSILON};
pub use loss::{
    dssim_from_ssim, dssim_loss, dssim_with_grads, l1_loss, opacity_reg, residual_reg, total_loss,
    LossBreakdown, LossGrads, LossMode, LossWeights,
};

use crate::error::{Error, Result};

/// Log-linear decay: `start * (end / start)^(step / total_steps)`.
pub fn lr_schedule(step: usize, total_steps: usize, lr_start: f64, lr_end: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::invalid("lr_schedule: total_steps must be positive"));
    }
    if step > total_steps {
        return Err(Error::invalid(format!(
            "lr_schedule: step {step} beyond total {total_steps}"
        )));
    }
    if !(lr_start > 0.0 && lr_end > 0.0) {
        return Err(Error::invalid("lr_schedule: rates must be positive"));
    }
    let t = step as f64 / total_steps as f64;
    Ok((lr_start.ln() * (1.0 - t) + lr_end.ln() * t).exp())
}
