//! Photometric losses and regularizers with analytic gradients.

use super::ssim;
use crate::error::Result;
use crate::image::Image;
use crate::scene::{sigmoid, GaussianSet};

/// Which total loss to assemble: the first frame adds the opacity penalty.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossMode {
    First,
    Sequential,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Weight of D-SSIM against L1.
    pub lambda_dssim: f64,
    pub lambda_opacity: f64,
    pub lambda_residual: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_dssim: 0.2,
            lambda_opacity: 0.01,
            lambda_residual: 0.01,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l1: f64,
    pub dssim: f64,
    pub opacity_reg: f64,
    pub residual_reg: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct LossGrads {
    pub pred: Image,
    pub opacity_logits: Vec<f64>,
    /// Present when a residual map took part.
    pub residual: Option<Image>,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute error and its gradient with respect to `pred`.
pub fn l1_loss(pred: &Image, target: &Image) -> Result<(f64, Image)> {
    pred.check_same_shape(target, "l1_loss")?;
    let count = pred.len() as f64;
    let mut sum = 0.0;
    let mut grad = Image::zeros(pred.width, pred.height);
    for ((g, &p), &t) in grad.data.iter_mut().zip(&pred.data).zip(&target.data) {
        let d = p - t;
        sum += d.abs();
        *g = sign(d) / count;
    }
    Ok((sum / count, grad))
}

/// `(1 - SSIM) / 2` and its gradient with respect to `pred`.
pub fn dssim_loss(pred: &Image, target: &Image) -> Result<(f64, Image)> {
    let (v, gp, _) = dssim_with_grads(pred, target)?;
    Ok((v, gp))
}

/// D-SSIM with gradients for both arguments.
pub fn dssim_with_grads(pred: &Image, target: &Image) -> Result<(f64, Image, Image)> {
    let (s, ga, gb) = ssim::ssim_with_grads(pred, target)?;
    Ok((dssim_from_ssim(s), ga.map(|g| -0.5 * g), gb.map(|g| -0.5 * g)))
}

pub fn dssim_from_ssim(s: f64) -> f64 {
    (1.0 - s) / 2.0
}

/// Mean activated opacity and its gradient (zero for an empty set).
pub fn opacity_reg(g: &GaussianSet) -> (f64, Vec<f64>) {
    let n = g.len().max(1) as f64;
    let mut total = 0.0;
    let grad = g
        .opacity_logits
        .iter()
        .map(|&l| {
            let s = sigmoid(l);
            total += s;
            s * (1.0 - s) / n
        })
        .collect();
    (total / n, grad)
}

/// Mean absolute residual value and its subgradient (0 at zero entries).
pub fn residual_reg(m: &Image) -> (f64, Image) {
    let count = m.len() as f64;
    let total: f64 = m.data.iter().map(|v| v.abs()).sum();
    (total / count, m.map(|v| sign(v) / count))
}

/// Assembles the per-iteration objective.
///
/// `restored` is the observation minus `residual`; the residual therefore
/// receives the negated target-side gradient of the photometric terms plus
/// the weighted L1 penalty.
pub fn total_loss(
    pred: &Image,
    restored: &Image,
    g: &GaussianSet,
    residual: Option<&Image>,
    mode: LossMode,
    weights: &LossWeights,
) -> Result<(LossBreakdown, LossGrads)> {
    let lambda = weights.lambda_dssim;
    let (l1, g_l1) = l1_loss(pred, restored)?;
    let (dssim, g_ds_pred, g_ds_target) = dssim_with_grads(pred, restored)?;

    let mut pred_grad = g_l1.clone();
    for (o, &d) in pred_grad.data.iter_mut().zip(&g_ds_pred.data) {
        *o = (1.0 - lambda) * *o + lambda * d;
    }

    let mut out = LossBreakdown {
        l1,
        dssim,
        ..Default::default()
    };
    let mut total = (1.0 - lambda) * l1 + lambda * dssim;

    let opacity_grad = match mode {
        LossMode::First => {
            let (reg, grad) = opacity_reg(g);
            out.opacity_reg = reg;
            total += weights.lambda_opacity * reg;
            grad.into_iter().map(|v| weights.lambda_opacity * v).collect()
        }
        LossMode::Sequential => vec![0.0; g.len()],
    };

    let residual_grad = match residual {
        Some(m) => {
            m.check_same_shape(pred, "residual map")?;
            let (reg, reg_grad) = residual_reg(m);
            out.residual_reg = reg;
            total += weights.lambda_residual * reg;
            let mut grad = reg_grad;
            for ((o, &gl1), &gds) in grad.data.iter_mut().zip(&g_l1.data).zip(&g_ds_target.data) {
                // d(l1)/d(target) = -d(l1)/d(pred); d(target)/d(residual) = -1
                let d_target = -(1.0 - lambda) * gl1 + lambda * gds;
                *o = weights.lambda_residual * *o - d_target;
            }
            Some(grad)
        }
        None => None,
    };
    out.total = total;
    Ok((
        out,
        LossGrads {
            pred: pred_grad,
            opacity_logits: opacity_grad,
            residual: residual_grad,
        },
    ))
}
