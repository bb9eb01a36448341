//! Adaptive density control: clone, split and opacity pruning.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::renderer::{GaussianGradients, RenderAux};
use crate::scene::{quat_to_matrix, sigmoid, GaussianSet};

/// Shrink factor applied to the scales of split children.
pub const SPLIT_SCALE_DIVISOR: f64 = 1.6;
pub const SPLIT_CHILDREN: usize = 2;

/// Screen-space gradient statistics since the last densification.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensifyStats {
    pub grad_accum: Vec<f64>,
    /// Number of views in which each Gaussian was visible.
    pub views: Vec<u32>,
    pub max_radius: Vec<f64>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        DensifyStats {
            grad_accum: vec![0.0; n],
            views: vec![0; n],
            max_radius: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.grad_accum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grad_accum.is_empty()
    }

    /// Adds one view's screen-space gradient norms for the visible
    /// Gaussians, measured in normalized device coordinates so the threshold
    /// does not depend on resolution.
    pub fn accumulate(&mut self, aux: &RenderAux, grads: &GaussianGradients) {
        let sx = 0.5 * aux.width as f64;
        let sy = 0.5 * aux.height as f64;
        for (i, s) in aux.splats.iter().enumerate() {
            if !s.culled {
                let gx = grads.mean2d[2 * i] * sx;
                let gy = grads.mean2d[2 * i + 1] * sy;
                self.grad_accum[i] += (gx * gx + gy * gy).sqrt();
                self.views[i] += 1;
                self.max_radius[i] = self.max_radius[i].max(s.radius);
            }
        }
    }

    pub fn mean_grad(&self, i: usize) -> f64 {
        if self.views[i] == 0 {
            0.0
        } else {
            self.grad_accum[i] / self.views[i] as f64
        }
    }
}

/// Outcome of [`densify_and_prune`]: `sources[j]` is the index of the
/// Gaussian that new Gaussian `j` was copied from when its optimizer state
/// should carry over, `None` for fresh clones and split children.
#[derive(Clone, Debug, PartialEq)]
pub struct DensifyOutcome {
    pub gaussians: GaussianSet,
    pub sources: Vec<Option<usize>>,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Clones small and splits large Gaussians whose mean screen-space gradient
/// reaches `grad_threshold`, then removes Gaussians with opacity below
/// `prune_opacity`. `dense_scale` is the world-space scale separating clone
/// from split.
pub fn densify_and_prune(
    g: &GaussianSet,
    stats: &DensifyStats,
    grad_threshold: f64,
    dense_scale: f64,
    prune_opacity: f64,
    rng: &mut impl Rng,
) -> DensifyOutcome {
    let n = g.len();
    let mut keep: Vec<usize> = Vec::with_capacity(n);
    let mut clones: Vec<usize> = Vec::new();
    let mut splits: Vec<usize> = Vec::new();
    for i in 0..n {
        if stats.mean_grad(i) >= grad_threshold {
            let max_scale = g.log_scale(i).iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v)).exp();
            if max_scale > dense_scale {
                splits.push(i);
                continue;
            }
            clones.push(i);
        }
        keep.push(i);
    }

    let mut out = g.select(&keep);
    let mut sources: Vec<Option<usize>> = keep.iter().map(|&i| Some(i)).collect();
    for &i in &clones {
        out.push_from(g, i);
        sources.push(None);
    }
    for &i in &splits {
        let rot = quat_to_matrix(normalized(g.rotation(i)));
        let ls = g.log_scale(i);
        let scales = ls.map(f64::exp);
        let mu = g.position(i);
        for _ in 0..SPLIT_CHILDREN {
            let z: [f64; 3] = [0; 3].map(|_| rng.sample::<f64, _>(StandardNormal));
            let local = nalgebra::Vector3::new(z[0] * scales[0], z[1] * scales[1], z[2] * scales[2]);
            let off = rot * local;
            out.push(
                [mu[0] + off.x, mu[1] + off.y, mu[2] + off.z],
                g.rotation(i),
                ls.map(|v| v - SPLIT_SCALE_DIVISOR.ln()),
                g.opacity_logits[i],
                g.sh(i),
            );
            sources.push(None);
        }
    }

    let survivors: Vec<usize> = (0..out.len())
        .filter(|&j| sigmoid(out.opacity_logits[j]) >= prune_opacity)
        .collect();
    let pruned = out.len() - survivors.len();
    let gaussians = out.select(&survivors);
    let sources = survivors.iter().map(|&j| sources[j]).collect();
    DensifyOutcome {
        gaussians,
        sources,
        cloned: clones.len(),
        split: splits.len(),
        pruned,
    }
}

fn normalized(q: [f64; 4]) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.map(|v| v / n)
}
