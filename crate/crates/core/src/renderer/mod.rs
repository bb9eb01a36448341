//! Differentiable splatting of a [`GaussianSet`] through a pinhole camera.
//!
//! Splats are sorted once per view by view-space depth (ties broken by
//! Gaussian index) and binned into 16x16 pixel tiles. Each pixel composites
//! its tile's list front to back:
//!
//! ```text
//! alpha_i = min(0.99, opacity_i * exp(-0.5 d^T conic d))   (skipped if < 1/255)
//! C       = sum_i alpha_i T_i c_i,  T_i = prod_{j<i} (1 - alpha_j)
//! ```
//!
//! stopping before a contributor would push transmittance below `1e-4`.
//! The background is black.
//!
//! Tiles are independent, so they are rasterized in parallel. The backward
//! pass accumulates per-tile partial gradients and merges them in tile order,
//! which keeps results bit-identical for any worker count.

mod camera;
mod project;

pub use camera::Camera;
pub use project::{project, Splat, ALPHA_MIN, LOW_PASS};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scene::sh::{eval_raw, sh_basis, sh_basis_grad, sh_len};
use crate::scene::{ActivatedGaussians, GaussianSet};
use project::{project_backward, SplatGrad};

pub const TILE_SIZE: usize = 16;
pub const ALPHA_MAX: f64 = 0.99;
pub const TRANSMITTANCE_MIN: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage {
    pub rgb: Image,
    /// `1 - final transmittance` per pixel.
    pub alpha: Vec<f64>,
}

/// One composited contributor of one pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contributor {
    /// Position in the owning tile's list.
    pub slot: u32,
    pub alpha: f64,
    /// Unclamped Gaussian falloff `exp(-0.5 d^T conic d)`.
    pub weight: f64,
    /// Transmittance before this contributor.
    pub t_before: f64,
}

/// Forward state of one tile.
#[derive(Clone, Debug, Default)]
pub struct TileRecords {
    /// Gaussian indices overlapping the tile, in depth order.
    pub gaussians: Vec<u32>,
    /// `pixel_start[p]..pixel_start[p + 1]` indexes `contributors` for the
    /// tile's `p`-th pixel (row-major inside the tile).
    pub pixel_start: Vec<u32>,
    pub contributors: Vec<Contributor>,
}

/// State saved by [`render`] for [`render_backward`] and densification.
#[derive(Clone, Debug)]
pub struct RenderAux {
    pub n_gaussians: usize,
    pub width: usize,
    pub height: usize,
    pub splats: Vec<Splat>,
    /// Unclamped SH color (before `max(0, .)`).
    pub raw_colors: Vec<[f64; 3]>,
    pub opacities: Vec<f64>,
    pub tiles: Vec<TileRecords>,
}

impl RenderAux {
    pub fn tiles_x(&self) -> usize {
        self.width.div_ceil(TILE_SIZE)
    }

    /// Contributor records of pixel `(x, y)` together with the tile's index
    /// list used to resolve [`Contributor::slot`].
    pub fn pixel_contributors(&self, x: usize, y: usize) -> (&[u32], &[Contributor]) {
        let (tx, ty) = (x / TILE_SIZE, y / TILE_SIZE);
        let tile = &self.tiles[ty * self.tiles_x() + tx];
        let tw = TILE_SIZE.min(self.width - tx * TILE_SIZE);
        let p = (y - ty * TILE_SIZE) * tw + (x - tx * TILE_SIZE);
        let range = tile.pixel_start[p] as usize..tile.pixel_start[p + 1] as usize;
        (&tile.gaussians, &tile.contributors[range])
    }

    pub fn depths(&self) -> Vec<f64> {
        self.splats.iter().map(|s| s.depth).collect()
    }

    /// True for Gaussians that overlap at least one pixel.
    pub fn visible(&self) -> Vec<bool> {
        self.splats.iter().map(|s| !s.culled).collect()
    }
}

/// Gradients of a scalar loss with respect to every raw parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianGradients {
    pub positions: Vec<f64>,
    pub rotations: Vec<f64>,
    pub log_scales: Vec<f64>,
    pub opacity_logits: Vec<f64>,
    pub sh_coeffs: Vec<f64>,
    /// `|dL/d mean2d|` in pixel units, for densification.
    pub pixel_grad_norm: Vec<f64>,
    /// `dL/d mean2d` in pixel units, two entries per Gaussian.
    pub mean2d: Vec<f64>,
}

impl GaussianGradients {
    pub fn zeros_like(g: &GaussianSet) -> Self {
        GaussianGradients {
            positions: vec![0.0; g.positions.len()],
            rotations: vec![0.0; g.rotations.len()],
            log_scales: vec![0.0; g.log_scales.len()],
            opacity_logits: vec![0.0; g.opacity_logits.len()],
            sh_coeffs: vec![0.0; g.sh_coeffs.len()],
            pixel_grad_norm: vec![0.0; g.len()],
            mean2d: vec![0.0; 2 * g.len()],
        }
    }
}

fn view_dir(position: [f64; 3], camera: &Camera) -> ([f64; 3], f64) {
    let c = camera.center();
    let v = [position[0] - c.x, position[1] - c.y, position[2] - c.z];
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n == 0.0 {
        return ([0.0, 0.0, 1.0], 0.0);
    }
    (v.map(|x| x / n), n)
}

/// Renders `g` into `camera`.
pub fn render(g: &GaussianSet, camera: &Camera) -> Result<(RenderedImage, RenderAux)> {
    if g.is_empty() {
        return Err(Error::EmptyScene);
    }
    let act = g.activate()?;
    render_activated(g, &act, camera)
}

fn render_activated(
    g: &GaussianSet,
    act: &ActivatedGaussians,
    camera: &Camera,
) -> Result<(RenderedImage, RenderAux)> {
    let n = g.len();
    let degree = g.sh_degree;
    let k = sh_len(degree);
    let per_gaussian: Vec<(Splat, [f64; 3])> = (0..n)
        .into_par_iter()
        .map(|i| {
            let splat = project(
                act.positions[i],
                act.rotations[i],
                act.scales[i],
                act.opacities[i],
                camera,
            );
            let (dir, _) = view_dir(act.positions[i], camera);
            let basis = sh_basis(degree, dir);
            (splat, eval_raw(g.sh(i), &basis[..k]))
        })
        .collect();
    let (splats, raw_colors): (Vec<Splat>, Vec<[f64; 3]>) = per_gaussian.into_iter().unzip();

    let (w, h) = (camera.width, camera.height);
    let tiles_x = w.div_ceil(TILE_SIZE);
    let tiles_y = h.div_ceil(TILE_SIZE);
    let mut order: Vec<u32> = (0..n as u32).filter(|&i| !splats[i as usize].culled).collect();
    order.sort_by(|&a, &b| {
        splats[a as usize]
            .depth
            .total_cmp(&splats[b as usize].depth)
            .then(a.cmp(&b))
    });
    let mut lists: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for &i in &order {
        let s = &splats[i as usize];
        let x0 = (s.mean2d[0] - s.radius).ceil().max(0.0);
        let x1 = (s.mean2d[0] + s.radius).floor().min((w - 1) as f64);
        let y0 = (s.mean2d[1] - s.radius).ceil().max(0.0);
        let y1 = (s.mean2d[1] + s.radius).floor().min((h - 1) as f64);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        for ty in (y0 as usize / TILE_SIZE)..=(y1 as usize / TILE_SIZE) {
            for tx in (x0 as usize / TILE_SIZE)..=(x1 as usize / TILE_SIZE) {
                lists[ty * tiles_x + tx].push(i);
            }
        }
    }

    let colors: Vec<[f64; 3]> = raw_colors.iter().map(|c| c.map(|v| v.max(0.0))).collect();
    let opacities = &act.opacities;
    let tiles: Vec<(TileRecords, Vec<[f64; 4]>)> = lists
        .into_par_iter()
        .enumerate()
        .map(|(t, list)| {
            let (tx, ty) = (t % tiles_x, t / tiles_x);
            rasterize_tile(tx, ty, w, h, list, &splats, &colors, opacities)
        })
        .collect();

    let mut rgb = Image::zeros(w, h);
    let mut alpha = vec![0.0; w * h];
    let mut records = Vec::with_capacity(tiles.len());
    for (t, (rec, pixels)) in tiles.into_iter().enumerate() {
        let (tx, ty) = (t % tiles_x, t / tiles_x);
        let tw = TILE_SIZE.min(w - tx * TILE_SIZE);
        for (p, px) in pixels.iter().enumerate() {
            let x = tx * TILE_SIZE + p % tw;
            let y = ty * TILE_SIZE + p / tw;
            let i = rgb.index(x, y, 0);
            rgb.data[i..i + 3].copy_from_slice(&px[..3]);
            alpha[y * w + x] = 1.0 - px[3];
        }
        records.push(rec);
    }
    Ok((
        RenderedImage { rgb, alpha },
        RenderAux {
            n_gaussians: n,
            width: w,
            height: h,
            splats,
            raw_colors,
            opacities: opacities.clone(),
            tiles: records,
        },
    ))
}

#[allow(clippy::too_many_arguments)]
fn rasterize_tile(
    tx: usize,
    ty: usize,
    width: usize,
    height: usize,
    list: Vec<u32>,
    splats: &[Splat],
    colors: &[[f64; 3]],
    opacities: &[f64],
) -> (TileRecords, Vec<[f64; 4]>) {
    let x_start = tx * TILE_SIZE;
    let y_start = ty * TILE_SIZE;
    let tw = TILE_SIZE.min(width - x_start);
    let th = TILE_SIZE.min(height - y_start);
    let mut pixel_start = Vec::with_capacity(tw * th + 1);
    let mut contributors = Vec::new();
    let mut pixels = Vec::with_capacity(tw * th);
    pixel_start.push(0u32);
    for py in 0..th {
        for px in 0..tw {
            let (fx, fy) = ((x_start + px) as f64, (y_start + py) as f64);
            let mut t = 1.0;
            let mut c = [0.0; 3];
            for (slot, &gi) in list.iter().enumerate() {
                let gi = gi as usize;
                let s = &splats[gi];
                let dx = fx - s.mean2d[0];
                let dy = fy - s.mean2d[1];
                let [a, b, cc] = s.conic;
                let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + cc * dy * dy);
                let weight = power.exp();
                let alpha = (opacities[gi] * weight).min(ALPHA_MAX);
                if alpha < ALPHA_MIN {
                    continue;
                }
                let next_t = t * (1.0 - alpha);
                if next_t < TRANSMITTANCE_MIN {
                    break;
                }
                let col = colors[gi];
                for ch in 0..3 {
                    c[ch] += alpha * t * col[ch];
                }
                contributors.push(Contributor {
                    slot: slot as u32,
                    alpha,
                    weight,
                    t_before: t,
                });
                t = next_t;
            }
            pixels.push([c[0], c[1], c[2], t]);
            pixel_start.push(contributors.len() as u32);
        }
    }
    (
        TileRecords {
            gaussians: list,
            pixel_start,
            contributors,
        },
        pixels,
    )
}

/// Per-Gaussian splat-level gradients: mean2d (2), conic (3), opacity (1),
/// color (3).
type SplatAccum = [f64; 9];

/// Backpropagates `dl_dimage` through the render that produced `aux`.
pub fn render_backward(
    g: &GaussianSet,
    camera: &Camera,
    aux: &RenderAux,
    dl_dimage: &Image,
) -> Result<GaussianGradients> {
    if aux.n_gaussians != g.len() {
        return Err(Error::StaleAux {
            aux: aux.n_gaussians,
            scene: g.len(),
        });
    }
    if dl_dimage.width != aux.width || dl_dimage.height != aux.height {
        return Err(Error::ShapeMismatch(format!(
            "upstream gradient {}x{} vs render {}x{}",
            dl_dimage.width, dl_dimage.height, aux.width, aux.height
        )));
    }
    let act = g.activate()?;
    let n = g.len();
    let tiles_x = aux.tiles_x();

    let partials: Vec<Vec<SplatAccum>> = aux
        .tiles
        .par_iter()
        .enumerate()
        .map(|(t, tile)| {
            let (tx, ty) = (t % tiles_x, t / tiles_x);
            backward_tile(tx, ty, tile, aux, dl_dimage)
        })
        .collect();

    let mut acc = vec![[0.0f64; 9]; n];
    for (tile, local) in aux.tiles.iter().zip(&partials) {
        for (&gi, l) in tile.gaussians.iter().zip(local) {
            let a = &mut acc[gi as usize];
            for k in 0..9 {
                a[k] += l[k];
            }
        }
    }

    let degree = g.sh_degree;
    let k = sh_len(degree);
    let per_gaussian: Vec<_> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = &acc[i];
            let splat = &aux.splats[i];
            let stride = 3 * k;
            let mut d_sh = vec![0.0; stride];
            if splat.culled || a.iter().all(|&v| v == 0.0) {
                return (Default::default(), 0.0, d_sh, 0.0, [0.0; 2]);
            }
            let o = act.opacities[i];
            let d_logit = a[5] * o * (1.0 - o);

            // color = max(0, sum c_k Y_k(dir) + 0.5)
            let (dir, dist) = view_dir(act.positions[i], camera);
            let basis = sh_basis(degree, dir);
            let basis_grad = sh_basis_grad(degree, dir);
            let sh = g.sh(i);
            let raw = aux.raw_colors[i];
            let mut d_dir = [0.0; 3];
            for ch in 0..3 {
                if raw[ch] < 0.0 {
                    continue;
                }
                let dc = a[6 + ch];
                for kk in 0..k {
                    d_sh[ch * k + kk] = dc * basis[kk];
                    for ax in 0..3 {
                        d_dir[ax] += dc * sh[ch * k + kk] * basis_grad[kk][ax];
                    }
                }
            }
            let mut geo = project_backward(
                act.positions[i],
                g.rotation(i),
                act.scales[i],
                camera,
                &SplatGrad {
                    mean2d: [a[0], a[1]],
                    conic: [a[2], a[3], a[4]],
                },
            );
            if degree > 0 && dist > 0.0 {
                let dot = d_dir[0] * dir[0] + d_dir[1] * dir[1] + d_dir[2] * dir[2];
                for ax in 0..3 {
                    geo.position[ax] += (d_dir[ax] - dir[ax] * dot) / dist;
                }
            }
            let norm = (a[0] * a[0] + a[1] * a[1]).sqrt();
            (geo, d_logit, d_sh, norm, [a[0], a[1]])
        })
        .collect();

    let mut out = GaussianGradients::zeros_like(g);
    for (i, (geo, d_logit, d_sh, norm, mean2d)) in per_gaussian.into_iter().enumerate() {
        out.positions[3 * i..3 * i + 3].copy_from_slice(&geo.position);
        out.rotations[4 * i..4 * i + 4].copy_from_slice(&geo.rotation);
        out.log_scales[3 * i..3 * i + 3].copy_from_slice(&geo.log_scale);
        out.opacity_logits[i] = d_logit;
        out.sh_coeffs[i * 3 * k..(i + 1) * 3 * k].copy_from_slice(&d_sh);
        out.pixel_grad_norm[i] = norm;
        out.mean2d[2 * i..2 * i + 2].copy_from_slice(&mean2d);
    }
    Ok(out)
}

fn backward_tile(
    tx: usize,
    ty: usize,
    tile: &TileRecords,
    aux: &RenderAux,
    dl_dimage: &Image,
) -> Vec<SplatAccum> {
    let mut local = vec![[0.0f64; 9]; tile.gaussians.len()];
    if tile.contributors.is_empty() {
        return local;
    }
    let x_start = tx * TILE_SIZE;
    let y_start = ty * TILE_SIZE;
    let tw = TILE_SIZE.min(aux.width - x_start);
    let pixels = tile.pixel_start.len() - 1;
    for p in 0..pixels {
        let range = tile.pixel_start[p] as usize..tile.pixel_start[p + 1] as usize;
        if range.is_empty() {
            continue;
        }
        let x = x_start + p % tw;
        let y = y_start + p / tw;
        let gpix = dl_dimage.pixel(x, y);
        let (fx, fy) = (x as f64, y as f64);
        let mut behind = [0.0; 3];
        for rec in tile.contributors[range].iter().rev() {
            let slot = rec.slot as usize;
            let gi = tile.gaussians[slot] as usize;
            let col = aux.raw_colors[gi].map(|v| v.max(0.0));
            let l = &mut local[slot];
            let wt = rec.alpha * rec.t_before;
            let mut d_alpha = 0.0;
            for ch in 0..3 {
                l[6 + ch] += wt * gpix[ch];
                d_alpha += gpix[ch] * (col[ch] - behind[ch]);
            }
            d_alpha *= rec.t_before;
            for ch in 0..3 {
                behind[ch] = rec.alpha * col[ch] + (1.0 - rec.alpha) * behind[ch];
            }
            let o = aux.opacities[gi];
            if o * rec.weight > ALPHA_MAX {
                continue;
            }
            l[5] += rec.weight * d_alpha;
            // alpha = o * exp(-q / 2)
            let d_q = -0.5 * o * rec.weight * d_alpha;
            let s = &aux.splats[gi];
            let dx = fx - s.mean2d[0];
            let dy = fy - s.mean2d[1];
            let [a, b, c] = s.conic;
            l[0] -= d_q * (2.0 * a * dx + 2.0 * b * dy);
            l[1] -= d_q * (2.0 * b * dx + 2.0 * c * dy);
            l[2] += d_q * dx * dx;
            l[3] += d_q * 2.0 * dx * dy;
            l[4] += d_q * dy * dy;
        }
    }
    local
}
