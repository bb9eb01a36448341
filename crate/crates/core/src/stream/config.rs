use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimize::LossWeights;
use crate::scene::sh::MAX_SH_DEGREE;

/// Training hyperparameters for the whole stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    pub first_frame_iters: usize,
    pub densify_until: usize,
    pub densify_interval: usize,
    /// Mean screen-space gradient norm, in normalized device coordinates,
    /// above which a Gaussian is densified.
    pub densify_grad_threshold: f64,
    pub prune_opacity_threshold: f64,
    /// Fraction of the scene extent separating clones from splits.
    pub percent_dense: f64,
    pub sequential_iters_deform: usize,
    pub sequential_iters_new: usize,
    /// Also update SH, opacity and scale of old Gaussians in sequential
    /// frames (positions and rotations are always updated).
    pub sequential_optimize_appearance: bool,
    pub residual_freeze_until_densify: bool,
    pub use_residual_maps: bool,
    pub reuse_new_gaussians: bool,
    /// Clear residual Adam moments at every frame boundary.
    pub reset_residual_moments: bool,
    /// Clear Gaussian Adam moments at every frame boundary.
    pub reset_gaussian_moments: bool,
    pub lambda_dssim: f64,
    pub lambda_opacity: f64,
    pub lambda_residual: f64,
    pub residual_lr_first: [f64; 2],
    pub residual_lr_sequential: [f64; 2],
    /// Position learning rates are multiplied by the scene extent.
    pub position_lr_init: f64,
    pub position_lr_final: f64,
    /// Constant position learning rate of sequential frames.
    pub position_lr_sequential: f64,
    pub sh_lr: f64,
    pub opacity_lr: f64,
    pub scale_lr: f64,
    pub rotation_lr: f64,
    pub spawn_percentile: f64,
    /// Absolute per-pixel error floor for spawning.
    pub spawn_min_error: f64,
    pub spawn_cap: usize,
    pub sh_degree: u32,
    pub seed: u64,
    /// Fill `wall_ms` in the metrics log (makes logs run-dependent).
    pub record_timing: bool,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            first_frame_iters: 1500,
            densify_until: 750,
            densify_interval: 100,
            densify_grad_threshold: 2e-4,
            prune_opacity_threshold: 0.005,
            percent_dense: 0.01,
            sequential_iters_deform: 150,
            sequential_iters_new: 100,
            sequential_optimize_appearance: true,
            residual_freeze_until_densify: true,
            use_residual_maps: true,
            reuse_new_gaussians: true,
            reset_residual_moments: true,
            reset_gaussian_moments: false,
            lambda_dssim: 0.2,
            lambda_opacity: 0.01,
            lambda_residual: 0.01,
            residual_lr_first: [1e-4, 1e-6],
            residual_lr_sequential: [1e-5, 1e-7],
            position_lr_init: 1.6e-4,
            position_lr_final: 1.6e-6,
            position_lr_sequential: 1.6e-4,
            sh_lr: 2.5e-3,
            opacity_lr: 5e-2,
            scale_lr: 5e-3,
            rotation_lr: 1e-3,
            spawn_percentile: 99.5,
            spawn_min_error: 0.08,
            spawn_cap: 500,
            sh_degree: 3,
            seed: 0,
            record_timing: false,
        }
    }
}

impl StreamConfig {
    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_dssim: self.lambda_dssim,
            lambda_opacity: self.lambda_opacity,
            lambda_residual: self.lambda_residual,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.first_frame_iters == 0
            || self.densify_interval == 0
            || self.sequential_iters_deform == 0
            || self.sequential_iters_new == 0
        {
            return bad("iteration counts must be at least 1");
        }
        if self.densify_until > self.first_frame_iters {
            return bad("densify_until exceeds first_frame_iters");
        }
        if self.sh_degree > MAX_SH_DEGREE {
            return Err(Error::UnsupportedShDegree(self.sh_degree));
        }
        if !(0.0..=100.0).contains(&self.spawn_percentile) {
            return bad("spawn_percentile must lie in [0, 100]");
        }
        if !(0.0..=1.0).contains(&self.lambda_dssim) {
            return bad("lambda_dssim must lie in [0, 1]");
        }
        let rates = [
            self.residual_lr_first[0],
            self.residual_lr_first[1],
            self.residual_lr_sequential[0],
            self.residual_lr_sequential[1],
            self.position_lr_init,
            self.position_lr_final,
            self.position_lr_sequential,
        ];
        if rates.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return bad("scheduled learning rates must be positive");
        }
        let fixed = [self.sh_lr, self.opacity_lr, self.scale_lr, self.rotation_lr];
        if fixed.iter().any(|&r| !(r >= 0.0 && r.is_finite())) {
            return bad("learning rates must be non-negative");
        }
        Ok(())
    }
}
