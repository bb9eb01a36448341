//! Image and video quality metrics.

use crate::error::{Error, Result};
use crate::image::{Image, StaticMask};
use crate::optimize::ssim::ssim_value;

pub const PSNR_CAP: f64 = 100.0;

/// Peak signal-to-noise ratio for unit peak, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b, "psnr")?;
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Windowed SSIM, identical to the one inside the D-SSIM loss.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ssim_value(a, b)
}

/// Masked temporal variation: `100 * mean |f[t+1] - f[t]|` over static pixels
/// and channels.
pub fn mtv(frames: &[Image], mask: &StaticMask) -> Result<f64> {
    let mut acc = MtvAccumulator::new(mask.clone())?;
    if frames.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "mtv needs at least 2 frames, got {}",
            frames.len()
        )));
    }
    for f in frames {
        acc.push(f)?;
    }
    Ok(acc.value().expect("two frames pushed"))
}

/// Streaming form of [`mtv`]: frames are pushed one at a time.
#[derive(Clone, Debug)]
pub struct MtvAccumulator {
    mask: StaticMask,
    prev: Option<Image>,
    sum: f64,
    pairs: usize,
}

impl MtvAccumulator {
    pub fn new(mask: StaticMask) -> Result<Self> {
        if mask.count() == 0 {
            return Err(Error::EmptyMask);
        }
        Ok(MtvAccumulator {
            mask,
            prev: None,
            sum: 0.0,
            pairs: 0,
        })
    }

    pub fn push(&mut self, frame: &Image) -> Result<()> {
        if frame.width != self.mask.width || frame.height != self.mask.height {
            return Err(Error::ShapeMismatch(format!(
                "mtv frame {}x{} vs mask {}x{}",
                frame.width, frame.height, self.mask.width, self.mask.height
            )));
        }
        if let Some(prev) = &self.prev {
            prev.check_same_shape(frame, "mtv")?;
            let mut s = 0.0;
            for (p, &keep) in self.mask.data.iter().enumerate() {
                if keep {
                    for c in 0..3 {
                        s += (frame.data[3 * p + c] - prev.data[3 * p + c]).abs();
                    }
                }
            }
            self.sum += s;
            self.pairs += 1;
        }
        self.prev = Some(frame.clone());
        Ok(())
    }

    /// `None` until two frames have been pushed.
    pub fn value(&self) -> Option<f64> {
        (self.pairs > 0)
            .then(|| 100.0 * self.sum / (self.pairs * self.mask.count() * 3) as f64)
    }
}

/// Spatiotemporal slice: column `column` of frame `t` becomes column `t`.
pub fn st_slice(frames: &[Image], column: usize) -> Result<Image> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidArgument("st_slice needs at least one frame".into()))?;
    if column >= first.width {
        return Err(Error::InvalidArgument(format!(
            "column {column} out of range for width {}",
            first.width
        )));
    }
    let mut out = Image::zeros(frames.len(), first.height);
    for (t, f) in frames.iter().enumerate() {
        f.check_same_shape(first, "st_slice")?;
        for y in 0..f.height {
            for c in 0..3 {
                out.set(t, y, c, f.get(column, y, c));
            }
        }
    }
    Ok(out)
}

/// Per-frame quality of one rendered sequence against references.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameScore {
    pub frame: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<FrameScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mtv: f64,
}

/// Scores `rendered[v][t]` against `reference[v][t]` for every evaluated view
/// `v`; per-frame rows average over views, `mtv` averages over views.
pub fn evaluate_run(
    rendered: &[Vec<Image>],
    reference: &[Vec<Image>],
    masks: &[StaticMask],
) -> Result<EvalReport> {
    if rendered.len() != reference.len() || rendered.len() != masks.len() || rendered.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} rendered views, {} reference views, {} masks",
            rendered.len(),
            reference.len(),
            masks.len()
        )));
    }
    let frames = rendered[0].len();
    for (r, g) in rendered.iter().zip(reference) {
        if r.len() != frames || g.len() != frames {
            return Err(Error::ShapeMismatch(format!(
                "frame count mismatch: {} rendered vs {} reference",
                r.len(),
                g.len()
            )));
        }
    }
    let views = rendered.len() as f64;
    let mut rows = Vec::with_capacity(frames);
    for t in 0..frames {
        let mut p = 0.0;
        let mut s = 0.0;
        for (r, g) in rendered.iter().zip(reference) {
            p += psnr(&r[t], &g[t])?;
            s += ssim(&r[t], &g[t])?;
        }
        rows.push(FrameScore {
            frame: t,
            psnr: p / views,
            ssim: s / views,
        });
    }
    let mut m = 0.0;
    if frames >= 2 {
        for (r, mask) in rendered.iter().zip(masks) {
            m += mtv(r, mask)?;
        }
    }
    let n = rows.len().max(1) as f64;
    Ok(EvalReport {
        mean_psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        mean_ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        mtv: m / views,
        rows,
    })
}
