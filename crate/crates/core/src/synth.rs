//! Synthetic dynamic multi-view scenes with known static regions, clean
//! rendering and sensor-like noise.

use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, StaticMask};
use crate::io::{write_pgm, write_ppm, write_rig, Rig};
use crate::renderer::{project, render, Camera};
use crate::scene::sh::{eval_sh, rgb_to_dc};
use crate::scene::{logit, sh_len, GaussianSet, PointCloudInit};

/// Dilation (pixels) applied to dynamic footprints when building masks.
pub const MASK_DILATION: usize = 5;

const ARC_RADIUS: f64 = 4.0;
const ARC_HALF_ANGLE: f64 = std::f64::consts::PI / 6.0;
const BACKDROP_FRACTION: f64 = 0.6;

/// Ground truth for a synthetic multi-view video.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    /// Gaussians at frame 0.
    pub gaussians: GaussianSet,
    pub dynamic: Vec<usize>,
    /// `offsets[t]`: translation of the dynamic subset at frame `t`.
    pub offsets: Vec<[f64; 3]>,
    pub cameras: Vec<Camera>,
    pub frames: usize,
    pub masks: Vec<StaticMask>,
}

/// Noise model: Poisson shot noise plus additive Gaussian read noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub gaussian_sigma: f64,
    pub poisson_photons: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            gaussian_sigma: 0.02,
            poisson_photons: 500.0,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_sigma >= 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(Error::InvalidArgument("noise sigma must be >= 0".into()));
        }
        if !(self.poisson_photons > 0.0 && self.poisson_photons.is_finite()) {
            return Err(Error::InvalidArgument("photon count must be > 0".into()));
        }
        Ok(())
    }
}

/// Cameras on a horizontal arc facing the origin.
pub fn arc_rig(n_cameras: usize, resolution: usize) -> Vec<Camera> {
    (0..n_cameras)
        .map(|c| {
            let u = if n_cameras == 1 {
                0.0
            } else {
                c as f64 / (n_cameras - 1) as f64
            };
            let theta = -ARC_HALF_ANGLE + 2.0 * ARC_HALF_ANGLE * u;
            let eye = [
                ARC_RADIUS * theta.sin(),
                0.4,
                -ARC_RADIUS * theta.cos(),
            ];
            Camera::look_at(
                eye,
                [0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                1.6 * resolution as f64,
                resolution,
                resolution,
            )
        })
        .collect()
}

fn random_quat(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let q: [f64; 4] = [0; 4].map(|_| rng.sample(StandardNormal));
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.map(|v| v / n)
}

fn dc_color(rgb: [f64; 3], k: usize) -> Vec<f64> {
    let mut sh = vec![0.0; 3 * k];
    for c in 0..3 {
        sh[c * k] = rgb_to_dc(rgb[c]);
    }
    sh
}

/// Builds a deterministic scene: a textured backdrop slab, static clutter
/// and a rigid dynamic cluster drifting along a smooth seeded path.
pub fn make_scene(
    seed: u64,
    n_static: usize,
    n_dynamic: usize,
    n_cameras: usize,
    frames: usize,
    resolution: usize,
) -> Result<SyntheticScene> {
    if n_static < 10 {
        return Err(Error::InvalidArgument("n_static must be at least 10".into()));
    }
    if n_cameras < 2 {
        return Err(Error::InsufficientViews(n_cameras));
    }
    if frames == 0 {
        return Err(Error::InvalidArgument("frames must be at least 1".into()));
    }
    if resolution < 16 {
        return Err(Error::InvalidArgument("resolution must be at least 16".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let degree = 0;
    let k = sh_len(degree);
    let mut g = GaussianSet::empty(degree);

    let n_back = ((n_static as f64) * BACKDROP_FRACTION).round() as usize;
    let cols = ((n_back as f64) * 1.45).sqrt().ceil() as usize;
    let rows = n_back.div_ceil(cols);
    let (half_w, half_h) = (2.6, 1.8);
    let tint = [0; 3].map(|_| rng.random_range(0.0..std::f64::consts::TAU));
    for i in 0..n_back {
        let (r, c) = (i / cols, i % cols);
        let x = -half_w + (c as f64 + 0.5 + rng.random_range(-0.3..0.3)) * 2.0 * half_w / cols as f64;
        let y = -half_h + (r as f64 + 0.5 + rng.random_range(-0.3..0.3)) * 2.0 * half_h / rows as f64;
        let z = 1.2 + rng.random_range(-0.1..0.1);
        let rgb = [0, 1, 2].map(|ch| {
            let wave = 0.5 + 0.3 * (1.7 * x + 1.1 * y * (ch as f64 + 1.0) + tint[ch]).sin();
            (wave + rng.random_range(-0.1..0.1)).clamp(0.05, 0.95)
        });
        let sx = 1.1 * half_w / cols as f64;
        let sy = 1.1 * half_h / rows as f64;
        let angle: f64 = rng.random_range(-0.3..0.3);
        g.push(
            [x, y, z],
            [(angle / 2.0).cos(), 0.0, 0.0, (angle / 2.0).sin()],
            [sx.ln(), sy.ln(), 0.03f64.ln()],
            logit(0.95),
            &dc_color(rgb, k),
        );
    }
    for _ in n_back..n_static {
        let pos = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.8..0.8),
            rng.random_range(-0.4..0.8),
        ];
        let s = [0; 3].map(|_| rng.random_range(0.04f64..0.12).ln());
        let rgb = [0; 3].map(|_| rng.random_range(0.05..0.95));
        let q = random_quat(&mut rng);
        g.push(pos, q, s, logit(rng.random_range(0.6..0.95)), &dc_color(rgb, k));
    }

    let center = [
        rng.random_range(-0.4..0.4),
        rng.random_range(-0.3..0.3),
        rng.random_range(-0.9..-0.6),
    ];
    let mut dynamic = Vec::with_capacity(n_dynamic);
    let base_rgb: [f64; 3] = [0; 3].map(|_| rng.random_range(0.2..1.0));
    for _ in 0..n_dynamic {
        let off: [f64; 3] = [0; 3].map(|_| rng.random_range(-0.12..0.12));
        let pos = [center[0] + off[0], center[1] + off[1], center[2] + off[2]];
        let s = [0; 3].map(|_| rng.random_range(0.04f64..0.07).ln());
        let rgb = base_rgb.map(|v| (v + rng.random_range(-0.15..0.15)).clamp(0.0, 1.0));
        dynamic.push(g.len());
        g.push(pos, random_quat(&mut rng), s, logit(0.9), &dc_color(rgb, k));
    }
    g.snap_to_f32();

    // Smooth drift; peak speed stays near 0.03 world units per frame.
    let amp = [0.25, 0.12, 0.05];
    let omega = [0.12, 0.17, 0.09];
    let phase = [0; 3].map(|_| rng.random_range(0.0..std::f64::consts::TAU));
    let offsets = (0..frames)
        .map(|t| {
            [0, 1, 2].map(|a| {
                let v = amp[a] * ((omega[a] * t as f64 + phase[a]).sin() - phase[a].sin());
                v as f32 as f64
            })
        })
        .collect();

    let cameras = arc_rig(n_cameras, resolution);
    let mut scene = SyntheticScene {
        gaussians: g,
        dynamic,
        offsets,
        cameras,
        frames,
        masks: Vec::new(),
    };
    scene.masks = (0..n_cameras).map(|c| scene.static_mask(c)).collect();
    Ok(scene)
}

impl SyntheticScene {
    /// Ground-truth Gaussians at frame `t`.
    pub fn gaussians_at(&self, t: usize) -> GaussianSet {
        let mut g = self.gaussians.clone();
        let off = self.offsets[t];
        for &i in &self.dynamic {
            for a in 0..3 {
                g.positions[3 * i + a] += off[a];
            }
        }
        g
    }

    /// Complement of the dilated union of every dynamic Gaussian's footprint
    /// over all frames.
    fn static_mask(&self, camera: usize) -> StaticMask {
        let cam = &self.cameras[camera];
        let (w, h) = (cam.width, cam.height);
        let mut data = vec![true; w * h];
        let pad = MASK_DILATION as f64;
        for t in 0..self.frames {
            let g = self.gaussians_at(t);
            let act = g.activate().expect("scene is finite");
            for &i in &self.dynamic {
                let s = project(act.positions[i], act.rotations[i], act.scales[i], act.opacities[i], cam);
                if s.culled {
                    continue;
                }
                let x0 = (s.mean2d[0] - s.radius - pad).floor().max(0.0) as usize;
                let y0 = (s.mean2d[1] - s.radius - pad).floor().max(0.0) as usize;
                let x1 = (s.mean2d[0] + s.radius + pad).ceil().min((w - 1) as f64);
                let y1 = (s.mean2d[1] + s.radius + pad).ceil().min((h - 1) as f64);
                if x1 < 0.0 || y1 < 0.0 {
                    continue;
                }
                for y in y0..=y1 as usize {
                    for x in x0..=x1 as usize {
                        data[y * w + x] = false;
                    }
                }
            }
        }
        StaticMask {
            width: w,
            height: h,
            data,
        }
    }

    pub fn rig(&self) -> Rig {
        Rig {
            frames: self.frames,
            cameras: self.cameras.clone(),
        }
    }
}

/// Clean render of frame `t` from camera `camera`, clamped to `[0, 1]`.
pub fn render_clean(scene: &SyntheticScene, t: usize, camera: usize) -> Result<Image> {
    if t >= scene.frames || camera >= scene.cameras.len() {
        return Err(Error::InvalidArgument(format!(
            "frame {t} / camera {camera} out of range ({} frames, {} cameras)",
            scene.frames,
            scene.cameras.len()
        )));
    }
    let (img, _) = render(&scene.gaussians_at(t), &scene.cameras[camera])?;
    Ok(img.rgb.clamped())
}

/// Noise generator for one `(frame, camera)` pair.
pub fn noise_rng(spec: &NoiseSpec, frame: usize, camera: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(((frame as u64) << 20) | camera as u64);
    rng
}

/// `clamp(Poisson(x * photons) / photons + N(0, sigma^2), 0, 1)` per sample.
pub fn add_noise(image: &Image, spec: &NoiseSpec, frame: usize, camera: usize) -> Result<Image> {
    spec.validate()?;
    let mut rng = noise_rng(spec, frame, camera);
    let normal = Normal::new(0.0, spec.gaussian_sigma).expect("validated sigma");
    let data = image
        .data
        .iter()
        .map(|&x| {
            let lambda = x.clamp(0.0, 1.0) * spec.poisson_photons;
            let shot = if lambda > 0.0 {
                let p: f64 = Poisson::new(lambda)
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?
                    .sample(&mut rng);
                p / spec.poisson_photons
            } else {
                0.0
            };
            Ok((shot + normal.sample(&mut rng)).clamp(0.0, 1.0))
        })
        .collect::<Result<Vec<f64>>>()?;
    Image::from_data(image.width, image.height, data)
}

/// Subsampled, jittered ground-truth centers as an initialization surrogate.
pub fn jitter_points(
    scene: &SyntheticScene,
    sigma_world: f64,
    keep_fraction: f64,
    seed: u64,
) -> Result<PointCloudInit> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::InvalidArgument("keep_fraction must lie in (0, 1]".into()));
    }
    if sigma_world < 0.0 {
        return Err(Error::InvalidArgument("sigma_world must be >= 0".into()));
    }
    let g = &scene.gaussians;
    let n = g.len();
    let keep = ((n as f64) * keep_fraction).round() as usize;
    if keep == 0 {
        return Err(Error::EmptyInitialization);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, keep).into_vec();
    idx.sort_unstable();
    let mut points = Vec::with_capacity(keep);
    let mut colors = Vec::with_capacity(keep);
    for i in idx {
        let p = g.position(i);
        let jitter: [f64; 3] = [0; 3].map(|_| sigma_world * rng.sample::<f64, _>(StandardNormal));
        points.push([p[0] + jitter[0], p[1] + jitter[1], p[2] + jitter[2]]);
        let rgb = eval_sh(g.sh(i), g.sh_degree, [0.0, 0.0, 1.0])?;
        colors.push(rgb.map(|v| v.clamp(0.0, 1.0)));
    }
    Ok(PointCloudInit { points, colors })
}

/// Image path inside a dataset directory.
pub fn frame_path(dir: &Path, camera: usize, frame: usize) -> std::path::PathBuf {
    dir.join(format!("cam{camera}")).join(format!("frame{frame}.ppm"))
}

pub fn mask_path(dir: &Path, camera: usize) -> std::path::PathBuf {
    dir.join("masks").join(format!("cam{camera}.pgm"))
}

fn quantize(img: &Image) -> Result<Image> {
    Image::from_u8(img.width, img.height, &img.to_u8())
}

/// Observation as stored on disk, quantized to 8 bits. Noise is applied to
/// the quantized clean image.
pub fn observation(
    scene: &SyntheticScene,
    noise: Option<&NoiseSpec>,
    t: usize,
    camera: usize,
) -> Result<Image> {
    let clean = quantize(&render_clean(scene, t, camera)?)?;
    match noise {
        Some(spec) => quantize(&add_noise(&clean, spec, t, camera)?),
        None => Ok(clean),
    }
}

/// Writes `cam{c}/frame{t}.ppm`, `masks/cam{c}.pgm` and `rig.json`.
pub fn export_dataset(scene: &SyntheticScene, noise: Option<&NoiseSpec>, out_dir: &Path) -> Result<()> {
    for c in 0..scene.cameras.len() {
        for t in 0..scene.frames {
            write_ppm(&frame_path(out_dir, c, t), &observation(scene, noise, t, c)?)?;
        }
        write_pgm(&mask_path(out_dir, c), &scene.masks[c])?;
    }
    write_rig(&out_dir.join("rig.json"), &scene.rig())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_parameters() {
        assert!(make_scene(0, 5, 2, 4, 3, 32).is_err());
        assert!(matches!(make_scene(0, 20, 2, 1, 3, 32), Err(Error::InsufficientViews(1))));
    }

    #[test]
    fn cameras_see_the_origin_at_the_principal_point() {
        for cam in arc_rig(5, 64) {
            let p = cam.project_point(&cam.world_to_camera([0.0; 3]));
            assert!((p[0] - cam.cx).abs() < 1e-9 && (p[1] - cam.cy).abs() < 1e-9);
        }
    }
}
