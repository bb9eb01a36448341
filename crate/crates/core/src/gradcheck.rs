//! Central finite-difference gradient checking.
//!
//! Only forward evaluations are used here, so these checks stay independent
//! of the analytic backward passes they verify.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::Image;
use crate::renderer::{render, Camera, RenderAux, ALPHA_MAX};
use crate::scene::{logit, GaussianSet};

pub const FD_STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-3;
pub const ABS_TOL: f64 = 1e-6;

/// Central difference of `f` at `x` along every coordinate.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let fp = f(&probe);
            probe[i] = x[i] - h;
            let fm = f(&probe);
            probe[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Agreement test: relative error below `rel` or absolute error below `abs`.
pub fn close(analytic: f64, numeric: f64, rel: f64, abs: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff < abs || diff <= rel * analytic.abs().max(numeric.abs())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub label: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default)]
pub struct CheckReport {
    pub checked: usize,
    pub mismatches: Vec<Mismatch>,
    pub max_rel_err: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }

    pub fn compare(&mut self, label: &str, analytic: &[f64], numeric: &[f64]) {
        assert_eq!(analytic.len(), numeric.len(), "{label}: length mismatch");
        for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
            self.checked += 1;
            let diff = (a - n).abs();
            let scale = a.abs().max(n.abs());
            if scale > ABS_TOL {
                self.max_rel_err = self.max_rel_err.max(diff / scale);
            }
            if !close(a, n, REL_TOL, ABS_TOL) {
                self.mismatches.push(Mismatch {
                    label: label.to_string(),
                    index: i,
                    analytic: a,
                    numeric: n,
                });
            }
        }
    }

    pub fn merge(&mut self, other: CheckReport) {
        self.checked += other.checked;
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.mismatches.extend(other.mismatches);
    }
}

/// Random `n`-Gaussian scene in front of a `size x size` camera. Opacities
/// stay in `[0.2, 0.8]` and colors well above zero so the only kinks are the
/// compositor's alpha cutoffs.
pub fn random_scene(seed: u64, n: usize, size: usize, sh_degree: u32) -> (GaussianSet, Camera) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let camera = Camera::look_at(
        [0.15, -0.1, -3.0],
        [0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        1.3 * size as f64,
        size,
        size,
    );
    let k = crate::scene::sh_len(sh_degree);
    let mut g = GaussianSet::empty(sh_degree);
    for _ in 0..n {
        let pos = [
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.4..0.4),
        ];
        let q = [
            rng.random_range(0.3..1.0),
            rng.random_range(-0.6..0.6),
            rng.random_range(-0.6..0.6),
            rng.random_range(-0.6..0.6),
        ];
        let ls = [0; 3].map(|_| rng.random_range(0.12f64..0.35).ln());
        let op = logit(rng.random_range(0.2..0.8));
        let mut sh = vec![0.0; 3 * k];
        for ch in 0..3 {
            sh[ch * k] = crate::scene::sh::rgb_to_dc(rng.random_range(0.3..0.8));
            for c in sh[ch * k + 1..(ch + 1) * k].iter_mut() {
                *c = rng.random_range(-0.08..0.08);
            }
        }
        g.push(pos, q, ls, op, &sh);
    }
    (g, camera)
}

/// Per-pixel `(gaussian, alpha clamped)` lists: the discrete state of a
/// render. Finite differences are only meaningful where it stays fixed.
pub fn active_set(aux: &RenderAux) -> Vec<Vec<(u32, bool)>> {
    let mut out = Vec::with_capacity(aux.width * aux.height);
    for y in 0..aux.height {
        for x in 0..aux.width {
            let (list, recs) = aux.pixel_contributors(x, y);
            out.push(
                recs.iter()
                    .map(|r| {
                        let gi = list[r.slot as usize];
                        (gi, aux.opacities[gi as usize] * r.weight > ALPHA_MAX)
                    })
                    .collect(),
            );
        }
    }
    out
}

/// `sum(weights * render(g))`.
pub fn weighted_render(g: &GaussianSet, camera: &Camera, weights: &Image) -> f64 {
    let (img, _) = render(g, camera).expect("render");
    img.rgb
        .data
        .iter()
        .zip(&weights.data)
        .map(|(a, b)| a * b)
        .sum()
}

/// Field accessors used to perturb one raw parameter array at a time.
pub type FieldAccess = (&'static str, fn(&mut GaussianSet) -> &mut Vec<f64>);

pub const FIELDS: [FieldAccess; 5] = [
    ("positions", |g| &mut g.positions),
    ("rotations", |g| &mut g.rotations),
    ("log_scales", |g| &mut g.log_scales),
    ("opacity_logits", |g| &mut g.opacity_logits),
    ("sh_coeffs", |g| &mut g.sh_coeffs),
];

/// Numeric gradient of [`weighted_render`] for every raw field, or `None`
/// when some `+-h` probe changes the discrete contributor state.
pub fn renderer_numeric_gradients(
    g: &GaussianSet,
    camera: &Camera,
    weights: &Image,
    h: f64,
) -> Option<Vec<(&'static str, Vec<f64>)>> {
    let (_, aux) = render(g, camera).expect("render");
    let base = active_set(&aux);
    let mut out = Vec::new();
    for (name, field) in FIELDS {
        let mut probe = g.clone();
        let len = field(&mut probe).len();
        let mut grads = Vec::with_capacity(len);
        for i in 0..len {
            let x0 = field(&mut probe)[i];
            let mut eval = |x: f64| {
                field(&mut probe)[i] = x;
                let (img, aux) = render(&probe, camera).expect("render");
                let same = active_set(&aux) == base;
                let v: f64 = img
                    .rgb
                    .data
                    .iter()
                    .zip(&weights.data)
                    .map(|(a, b)| a * b)
                    .sum();
                (v, same)
            };
            let (fp, sp) = eval(x0 + h);
            let (fm, sm) = eval(x0 - h);
            field(&mut probe)[i] = x0;
            if !(sp && sm) {
                return None;
            }
            grads.push((fp - fm) / (2.0 * h));
        }
        out.push((name, grads));
    }
    Some(out)
}

/// Random upstream weights in `[-1, 1]`.
pub fn random_weights(seed: u64, width: usize, height: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let data = (0..width * height * 3)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Image::from_data(width, height, data).expect("shape")
}

/// Random image with samples in `[lo, hi)`.
pub fn random_image(seed: u64, width: usize, height: usize, lo: f64, hi: f64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..width * height * 3)
        .map(|_| rng.random_range(lo..hi))
        .collect();
    Image::from_data(width, height, data).expect("shape")
}
