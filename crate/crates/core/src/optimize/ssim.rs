//! Windowed SSIM shared by the D-SSIM loss and the evaluation metric.
//!
//! 11x11 Gaussian window (sigma 1.5), `C1 = 0.01^2`, `C2 = 0.03^2`, reflection
//! padding (mirror without repeating the edge sample). The score is the mean
//! of the per-pixel SSIM map over pixels and channels.

use crate::error::{Error, Result};
use crate::image::Image;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;
const HALF: isize = (WINDOW / 2) as isize;

/// Normalized 1D Gaussian taps.
pub fn kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - HALF as f64;
        *v = (-(d * d) / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Mirror index into `0..n` (`-1 -> 1`, `n -> n - 2`).
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

pub fn check_size(width: usize, height: usize) -> Result<()> {
    if width < WINDOW || height < WINDOW {
        Err(Error::ImageTooSmall {
            width,
            height,
            window: WINDOW,
        })
    } else {
        Ok(())
    }
}

struct Blur {
    taps: [f64; WINDOW],
    width: usize,
    height: usize,
}

impl Blur {
    fn apply(&self, plane: &[f64]) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            let row = &plane[y * w..(y + 1) * w];
            for x in 0..w {
                let mut acc = 0.0;
                for (k, tap) in self.taps.iter().enumerate() {
                    acc += tap * row[reflect(x as isize + k as isize - HALF, w)];
                }
                tmp[y * w + x] = acc;
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, tap) in self.taps.iter().enumerate() {
                    acc += tap * tmp[reflect(y as isize + k as isize - HALF, h) * w + x];
                }
                out[y * w + x] = acc;
            }
        }
        out
    }

    /// Transpose of [`Blur::apply`].
    fn adjoint(&self, grad: &[f64]) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let g = grad[y * w + x];
                for (k, tap) in self.taps.iter().enumerate() {
                    tmp[reflect(y as isize + k as isize - HALF, h) * w + x] += tap * g;
                }
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let g = tmp[y * w + x];
                for (k, tap) in self.taps.iter().enumerate() {
                    out[y * w + reflect(x as isize + k as isize - HALF, w)] += tap * g;
                }
            }
        }
        out
    }
}

fn plane(img: &Image, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(3).copied().collect()
}

struct ChannelStats {
    mx: Vec<f64>,
    my: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    b1: Vec<f64>,
    b2: Vec<f64>,
    s: Vec<f64>,
}

fn channel_stats(blur: &Blur, x: &[f64], y: &[f64]) -> ChannelStats {
    let mx = blur.apply(x);
    let my = blur.apply(y);
    let sq = |v: &[f64], u: &[f64]| v.iter().zip(u).map(|(a, b)| a * b).collect::<Vec<_>>();
    let exx = blur.apply(&sq(x, x));
    let eyy = blur.apply(&sq(y, y));
    let exy = blur.apply(&sq(x, y));
    let n = x.len();
    let mut st = ChannelStats {
        mx,
        my,
        a1: vec![0.0; n],
        a2: vec![0.0; n],
        b1: vec![0.0; n],
        b2: vec![0.0; n],
        s: vec![0.0; n],
    };
    for i in 0..n {
        let (mx, my) = (st.mx[i], st.my[i]);
        st.a1[i] = 2.0 * mx * my + C1;
        st.a2[i] = 2.0 * (exy[i] - mx * my) + C2;
        st.b1[i] = mx * mx + my * my + C1;
        st.b2[i] = (exx[i] - mx * mx) + (eyy[i] - my * my) + C2;
        st.s[i] = st.a1[i] * st.a2[i] / (st.b1[i] * st.b2[i]);
    }
    st
}

/// Mean SSIM of `a` against `b`.
pub fn ssim_value(a: &Image, b: &Image) -> Result<f64> {
    Ok(ssim_impl(a, b, false)?.0)
}

/// Mean SSIM and its gradients with respect to both inputs.
pub fn ssim_with_grads(a: &Image, b: &Image) -> Result<(f64, Image, Image)> {
    let (v, ga, gb) = ssim_impl(a, b, true)?;
    Ok((v, ga.expect("grad"), gb.expect("grad")))
}

fn ssim_impl(a: &Image, b: &Image, grads: bool) -> Result<(f64, Option<Image>, Option<Image>)> {
    a.check_same_shape(b, "ssim")?;
    check_size(a.width, a.height)?;
    let blur = Blur {
        taps: kernel(),
        width: a.width,
        height: a.height,
    };
    let count = a.len() as f64;
    let mut total = 0.0;
    let mut ga = grads.then(|| Image::zeros(a.width, a.height));
    let mut gb = grads.then(|| Image::zeros(a.width, a.height));
    for c in 0..3 {
        let x = plane(a, c);
        let y = plane(b, c);
        let st = channel_stats(&blur, &x, &y);
        total += st.s.iter().sum::<f64>();
        let (Some(ga), Some(gb)) = (ga.as_mut(), gb.as_mut()) else {
            continue;
        };
        let n = x.len();
        let mut g_mx = vec![0.0; n];
        let mut g_my = vec![0.0; n];
        let mut g_exx = vec![0.0; n];
        let mut g_eyy = vec![0.0; n];
        let mut g_exy = vec![0.0; n];
        for i in 0..n {
            let (mx, my, s) = (st.mx[i], st.my[i], st.s[i]);
            let bb = st.b1[i] * st.b2[i];
            let inv_b1 = 1.0 / st.b1[i];
            let inv_b2 = 1.0 / st.b2[i];
            g_mx[i] = (2.0 * my * (st.a2[i] - st.a1[i]) / bb - 2.0 * mx * s * (inv_b1 - inv_b2)) / count;
            g_my[i] = (2.0 * mx * (st.a2[i] - st.a1[i]) / bb - 2.0 * my * s * (inv_b1 - inv_b2)) / count;
            g_exy[i] = 2.0 * st.a1[i] / bb / count;
            g_exx[i] = -s * inv_b2 / count;
            g_eyy[i] = -s * inv_b2 / count;
        }
        let t_mx = blur.adjoint(&g_mx);
        let t_my = blur.adjoint(&g_my);
        let t_exx = blur.adjoint(&g_exx);
        let t_eyy = blur.adjoint(&g_eyy);
        let t_exy = blur.adjoint(&g_exy);
        for i in 0..n {
            ga.data[3 * i + c] = t_mx[i] + 2.0 * x[i] * t_exx[i] + y[i] * t_exy[i];
            gb.data[3 * i + c] = t_my[i] + 2.0 * y[i] * t_eyy[i] + x[i] * t_exy[i];
        }
    }
    Ok((total / count, ga, gb))
}
