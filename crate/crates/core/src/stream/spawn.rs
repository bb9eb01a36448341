//! New Gaussians for content the propagated set cannot explain.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::Result;
use crate::image::Image;
use crate::renderer::{Camera, RenderAux};
use crate::scene::{logit, sh::rgb_to_dc, sh_len, GaussianSet, INIT_OPACITY};

/// Per-pixel error, averaged over channels.
pub fn error_map(pred: &Image, target: &Image) -> Result<Vec<f64>> {
    pred.check_same_shape(target, "error_map")?;
    Ok(pred
        .data
        .chunks_exact(3)
        .zip(target.data.chunks_exact(3))
        .map(|(p, t)| (0..3).map(|c| (p[c] - t[c]).abs()).sum::<f64>() / 3.0)
        .collect())
}

/// Nearest-rank percentile (`p` in `[0, 100]`).
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

/// One training view prepared for spawning.
pub struct SpawnView<'a> {
    pub camera: &'a Camera,
    pub observation: &'a Image,
    /// Per-pixel error from [`error_map`].
    pub error: &'a [f64],
    pub aux: &'a RenderAux,
    pub alpha: &'a [f64],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpawnParams {
    pub percentile: f64,
    pub min_error: f64,
    pub cap: usize,
    pub sh_degree: u32,
}

/// Pixel depth used for back-projection: contributor depths weighted by
/// `alpha * T`, or `fallback` where the pixel is mostly background.
pub fn pixel_depth(aux: &RenderAux, alpha: &[f64], x: usize, y: usize, fallback: f64) -> f64 {
    if alpha[y * aux.width + x] < 0.5 {
        return fallback;
    }
    let (list, recs) = aux.pixel_contributors(x, y);
    let mut wsum = 0.0;
    let mut dsum = 0.0;
    for r in recs {
        let w = r.alpha * r.t_before;
        wsum += w;
        dsum += w * aux.splats[list[r.slot as usize] as usize].depth;
    }
    if wsum > 0.0 {
        dsum / wsum
    } else {
        fallback
    }
}

/// Median depth of the Gaussians visible in a view.
pub fn median_depth(aux: &RenderAux) -> f64 {
    let mut d: Vec<f64> = aux
        .splats
        .iter()
        .filter(|s| !s.culled)
        .map(|s| s.depth)
        .collect();
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}

/// Selects high-error pixels in every view and back-projects each one to a
/// small isotropic Gaussian colored from the observation.
pub fn spawn_new_gaussians(
    views: &[SpawnView<'_>],
    params: &SpawnParams,
    rng: &mut impl Rng,
) -> GaussianSet {
    let mut candidates: Vec<(usize, usize, usize)> = Vec::new();
    for (v, view) in views.iter().enumerate() {
        let threshold = percentile(view.error, params.percentile);
        let w = view.aux.width;
        for (p, &e) in view.error.iter().enumerate() {
            if e >= threshold && e > params.min_error {
                candidates.push((v, p % w, p / w));
            }
        }
    }
    if candidates.len() > params.cap {
        let mut picked = sample(rng, candidates.len(), params.cap).into_vec();
        picked.sort_unstable();
        candidates = picked.into_iter().map(|i| candidates[i]).collect();
    }

    let fallbacks: Vec<f64> = views.iter().map(|v| median_depth(v.aux)).collect();
    let k = sh_len(params.sh_degree);
    let mut out = GaussianSet::empty(params.sh_degree);
    for (v, x, y) in candidates {
        let view = &views[v];
        let depth = pixel_depth(view.aux, view.alpha, x, y, fallbacks[v]);
        let pos = view.camera.unproject(x as f64, y as f64, depth);
        let rgb = view.observation.pixel(x, y);
        let mut sh = vec![0.0; 3 * k];
        for c in 0..3 {
            sh[c * k] = rgb_to_dc(rgb[c].clamp(0.0, 1.0));
        }
        let scale = depth / view.camera.fx;
        out.push(pos, [1.0, 0.0, 0.0, 0.0], [scale.ln(); 3], logit(INIT_OPACITY), &sh);
    }
    out.snap_to_f32();
    out
}
