//! Online reconstruction: first-frame fitting, sequential deformation,
//! spawning of new Gaussians and residual-map propagation.

mod config;
pub mod densify;
mod residual;
pub mod spawn;
mod train;

use std::time::Instant;

pub use config::StreamConfig;
pub use densify::{densify_and_prune, DensifyOutcome, DensifyStats};
pub use residual::{
    restore_target, snap_map, snap_residual, ResidualMapSet, RESIDUAL_FLUSH, RESIDUAL_LIMIT,
};
pub use spawn::{spawn_new_gaussians, SpawnParams, SpawnView};
pub use train::{
    frame_rng, scene_extent, train_first_frame, train_next_frame, CameraSampler, DensifyEvent,
    FirstFrameOutput, GaussianLrs, GaussianOptimizer, IterationEvent, NextFrameOutput,
    ResidualOptimizer, Stage, StreamOptimizer, TrainObserver,
};

use crate::error::{Error, Result};
use crate::image::{Image, StaticMask};
use crate::metrics::{psnr, ssim, MtvAccumulator};
use crate::optimize::LossBreakdown;
use crate::renderer::{render, Camera};
use crate::scene::{GaussianSet, PointCloudInit};

/// All training-view images of one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameObservation {
    pub frame: usize,
    pub images: Vec<Image>,
}

/// Strictly sequential access to a multi-view video: frame `t + 1` can only
/// be requested after frame `t`.
pub trait FrameSource {
    fn frame_count(&self) -> usize;
    fn next_frame(&mut self) -> Result<FrameObservation>;
}

/// A [`FrameSource`] over frames held in memory, indexed `[frame][camera]`.
pub struct MemorySource {
    frames: Vec<Vec<Image>>,
    next: usize,
}

impl MemorySource {
    pub fn new(frames: Vec<Vec<Image>>) -> Self {
        MemorySource { frames, next: 0 }
    }
}

impl FrameSource for MemorySource {
    fn frame_count(&self) -> usize {
        self.frames.len()
    }

    fn next_frame(&mut self) -> Result<FrameObservation> {
        let t = self.next;
        let images = self
            .frames
            .get(t)
            .cloned()
            .ok_or(Error::DatasetExhausted(t))?;
        self.next += 1;
        Ok(FrameObservation { frame: t, images })
    }
}

/// Everything produced for one frame.
#[derive(Clone, Debug)]
pub struct FrameResult {
    pub frame: usize,
    /// The Gaussians representing this frame (including new ones).
    pub gaussians: GaussianSet,
    pub maps: ResidualMapSet,
    /// Training-view renders, clamped to `[0, 1]`.
    pub renders: Vec<Image>,
    pub loss_log: Vec<LossBreakdown>,
    pub n_gaussians: usize,
    pub n_spawned: usize,
}

/// One row of the training metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub frame: usize,
    /// Mean over training views, render against observation.
    pub psnr: f64,
    pub ssim: f64,
    /// Masked temporal variation of training renders up to this frame.
    pub mtv_running: f64,
    pub n_gaussians: usize,
    pub n_spawned: usize,
    pub wall_ms: u64,
}

impl MetricsRow {
    pub const HEADER: [&'static str; 7] = [
        "frame",
        "psnr",
        "ssim",
        "mtv_running",
        "n_gaussians",
        "n_spawned",
        "wall_ms",
    ];
}

/// Fixed inputs of a stream.
pub struct StreamSetup<'a> {
    pub cameras: &'a [Camera],
    pub init: &'a PointCloudInit,
    /// Static masks per training camera for the running temporal metric;
    /// full masks when absent.
    pub masks: Option<&'a [StaticMask]>,
}

/// Runs the whole online pipeline over `source`, calling `sink` once per
/// finished frame before the next frame is requested.
pub fn run_stream(
    source: &mut dyn FrameSource,
    setup: &StreamSetup<'_>,
    cfg: &StreamConfig,
    observer: &mut dyn TrainObserver,
    sink: &mut dyn FnMut(&FrameResult) -> Result<()>,
) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    let cameras = setup.cameras;
    let frames = source.frame_count();
    if frames == 0 {
        return Err(Error::DatasetExhausted(0));
    }
    let mut mtv: Vec<MtvAccumulator> = match setup.masks {
        Some(m) if m.len() == cameras.len() => m
            .iter()
            .map(|m| MtvAccumulator::new(m.clone()))
            .collect::<Result<_>>()?,
        Some(m) => {
            return Err(Error::ShapeMismatch(format!(
                "{} masks for {} cameras",
                m.len(),
                cameras.len()
            )))
        }
        None => cameras
            .iter()
            .map(|c| MtvAccumulator::new(StaticMask::full(c.width, c.height)))
            .collect::<Result<_>>()?,
    };
    let mut rows = Vec::with_capacity(frames);
    let mut carried: Option<(GaussianSet, ResidualMapSet, StreamOptimizer)> = None;
    for t in 0..frames {
        let started = Instant::now();
        let obs = source.next_frame()?;
        let (render_set, maps, loss_log, spawned) = match carried.take() {
            None => {
                let out = train_first_frame(&obs.images, setup.init, cameras, cfg, observer)?;
                carried = Some((out.gaussians.clone(), out.maps.clone(), out.optimizer));
                (out.gaussians, out.maps, out.log, 0)
            }
            Some((g, maps, mut state)) => {
                let out = train_next_frame(
                    &g,
                    &maps,
                    &mut state,
                    &obs.images,
                    cameras,
                    t,
                    cfg,
                    observer,
                )?;
                carried = Some((out.propagated.clone(), out.maps.clone(), state));
                (out.render_set, out.maps, out.log, out.spawned)
            }
        };
        let mut renders = Vec::with_capacity(cameras.len());
        let (mut p, mut s) = (0.0, 0.0);
        for (c, cam) in cameras.iter().enumerate() {
            let (img, _) = render(&render_set, cam)?;
            let img = img.rgb.clamped();
            p += psnr(&img, &obs.images[c])?;
            s += ssim(&img, &obs.images[c])?;
            mtv[c].push(&img)?;
            renders.push(img);
        }
        let views = cameras.len() as f64;
        let mtv_running = mtv.iter().map(|m| m.value().unwrap_or(0.0)).sum::<f64>() / views;
        let result = FrameResult {
            frame: t,
            n_gaussians: render_set.len(),
            gaussians: render_set,
            maps,
            renders,
            loss_log,
            n_spawned: spawned,
        };
        sink(&result)?;
        rows.push(MetricsRow {
            frame: t,
            psnr: p / views,
            ssim: s / views,
            mtv_running,
            n_gaussians: result.n_gaussians,
            n_spawned: spawned,
            wall_ms: if cfg.record_timing {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        });
    }
    Ok(rows)
}
