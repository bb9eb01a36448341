//! First-frame and sequential-frame optimization.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::densify::{densify_and_prune, DensifyStats};
use super::residual::{restore_target, snap_map, ResidualMapSet};
use super::spawn::{error_map, spawn_new_gaussians, SpawnParams, SpawnView};
use super::StreamConfig;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::optimize::{lr_schedule, total_loss, AdamGroup, LossBreakdown, LossMode};
use crate::renderer::{render, render_backward, Camera, GaussianGradients};
use crate::scene::{init_gaussians, GaussianSet, PointCloudInit};

/// Which optimization loop an iteration belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    First,
    Deform,
    NewGaussians,
}

/// State visible to a [`TrainObserver`] right after the loss of one
/// iteration has been evaluated and before any parameter moves.
pub struct IterationEvent<'a> {
    pub frame: usize,
    pub stage: Stage,
    /// 1-based within the stage.
    pub iteration: usize,
    pub camera: usize,
    pub observation: &'a Image,
    pub restored: &'a Image,
    pub residual: &'a Image,
    pub loss: &'a LossBreakdown,
    pub gaussians: &'a GaussianSet,
}

/// Hooks into the training loops. Both methods default to no-ops.
pub trait TrainObserver {
    fn on_iteration(&mut self, _event: &IterationEvent<'_>) {}
    /// Called with the Gaussians as they stand just before a densification.
    fn before_densify(&mut self, _iteration: usize, _g: &GaussianSet) {}
}

impl TrainObserver for () {}

/// Per-group learning rates for one Gaussian update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianLrs {
    pub position: f64,
    pub sh_dc: f64,
    pub sh_rest: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
}

impl GaussianLrs {
    fn from_config(cfg: &StreamConfig, position: f64) -> Self {
        GaussianLrs {
            position,
            sh_dc: cfg.sh_lr,
            sh_rest: cfg.sh_lr / 20.0,
            opacity: cfg.opacity_lr,
            scale: cfg.scale_lr,
            rotation: cfg.rotation_lr,
        }
    }
}

/// Adam state for every raw Gaussian field.
#[derive(Clone, Debug)]
pub struct GaussianOptimizer {
    pub positions: AdamGroup,
    pub rotations: AdamGroup,
    pub log_scales: AdamGroup,
    pub opacity_logits: AdamGroup,
    pub sh_coeffs: AdamGroup,
}

impl GaussianOptimizer {
    pub fn new(g: &GaussianSet) -> Self {
        GaussianOptimizer {
            positions: AdamGroup::new("positions", g.positions.len()),
            rotations: AdamGroup::new("rotations", g.rotations.len()),
            log_scales: AdamGroup::new("log_scales", g.log_scales.len()),
            opacity_logits: AdamGroup::new("opacity_logits", g.opacity_logits.len()),
            sh_coeffs: AdamGroup::new("sh_coeffs", g.sh_coeffs.len()),
        }
    }

    /// One Adam step. With `appearance == false` only positions and
    /// rotations move. Parameters are snapped to the `f32` grid afterwards.
    pub fn step(
        &mut self,
        g: &mut GaussianSet,
        grads: &GaussianGradients,
        lrs: &GaussianLrs,
        appearance: bool,
    ) -> Result<()> {
        self.positions.step(&mut g.positions, &grads.positions, lrs.position)?;
        self.rotations.step(&mut g.rotations, &grads.rotations, lrs.rotation)?;
        if appearance {
            self.log_scales.step(&mut g.log_scales, &grads.log_scales, lrs.scale)?;
            self.opacity_logits
                .step(&mut g.opacity_logits, &grads.opacity_logits, lrs.opacity)?;
            let k = g.sh_len();
            self.sh_coeffs.step_with(&mut g.sh_coeffs, &grads.sh_coeffs, |i| {
                if i % k == 0 {
                    lrs.sh_dc
                } else {
                    lrs.sh_rest
                }
            })?;
        }
        g.snap_to_f32();
        Ok(())
    }

    pub fn remap(&mut self, sources: &[Option<usize>], sh_stride: usize) {
        self.positions.remap(sources, 3);
        self.rotations.remap(sources, 4);
        self.log_scales.remap(sources, 3);
        self.opacity_logits.remap(sources, 1);
        self.sh_coeffs.remap(sources, sh_stride);
    }
}

/// One Adam state per residual map.
#[derive(Clone, Debug)]
pub struct ResidualOptimizer {
    pub groups: Vec<AdamGroup>,
}

impl ResidualOptimizer {
    pub fn new(maps: &ResidualMapSet) -> Self {
        ResidualOptimizer {
            groups: maps
                .maps
                .iter()
                .enumerate()
                .map(|(c, m)| AdamGroup::new(format!("residual[{c}]"), m.len()))
                .collect(),
        }
    }

    fn step(&mut self, maps: &mut ResidualMapSet, camera: usize, grad: &Image, lr: f64) -> Result<()> {
        let map = &mut maps.maps[camera];
        self.groups[camera].step(&mut map.data, &grad.data, lr)?;
        snap_map(map);
        Ok(())
    }
}

/// Optimizer state carried from one frame to the next.
#[derive(Clone, Debug)]
pub struct StreamOptimizer {
    pub gaussians: GaussianOptimizer,
    pub residual: ResidualOptimizer,
}

impl StreamOptimizer {
    pub fn new(g: &GaussianSet, maps: &ResidualMapSet) -> Self {
        StreamOptimizer {
            gaussians: GaussianOptimizer::new(g),
            residual: ResidualOptimizer::new(maps),
        }
    }
}

/// `1.1 *` the largest distance of a camera center from their mean.
pub fn scene_extent(cameras: &[Camera]) -> f64 {
    let centers: Vec<_> = cameras.iter().map(|c| c.center()).collect();
    let mean = centers.iter().fold(nalgebra::Vector3::zeros(), |a, c| a + c) / centers.len() as f64;
    let radius = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max);
    1.1 * radius.max(1e-6)
}

/// Seeded generator for one purpose within one frame.
pub fn frame_rng(seed: u64, frame: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame as u64 * 16 + purpose);
    rng
}

/// Visits cameras in a fresh seeded permutation every epoch.
pub struct CameraSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl CameraSampler {
    pub fn new(cameras: usize, rng: ChaCha8Rng) -> Self {
        CameraSampler {
            rng,
            order: (0..cameras).collect(),
            pos: cameras,
        }
    }

    pub fn next_camera(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

fn check_views(images: &[Image], cameras: &[Camera]) -> Result<()> {
    if cameras.len() < 2 {
        return Err(Error::InsufficientViews(cameras.len()));
    }
    if images.len() != cameras.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} observations for {} cameras",
            images.len(),
            cameras.len()
        )));
    }
    for (img, cam) in images.iter().zip(cameras) {
        cam.validate()?;
        if img.width != cam.width || img.height != cam.height {
            return Err(Error::ShapeMismatch(format!(
                "observation {}x{} for camera {}x{}",
                img.width, img.height, cam.width, cam.height
            )));
        }
    }
    Ok(())
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Gradients of Gaussians `from..` only.
fn tail(grads: &GaussianGradients, from: usize, sh_stride: usize) -> GaussianGradients {
    GaussianGradients {
        positions: grads.positions[3 * from..].to_vec(),
        rotations: grads.rotations[4 * from..].to_vec(),
        log_scales: grads.log_scales[3 * from..].to_vec(),
        opacity_logits: grads.opacity_logits[from..].to_vec(),
        sh_coeffs: grads.sh_coeffs[sh_stride * from..].to_vec(),
        pixel_grad_norm: grads.pixel_grad_norm[from..].to_vec(),
        mean2d: grads.mean2d[2 * from..].to_vec(),
    }
}

/// Densification event of the first frame.
#[derive(Clone, Debug, PartialEq)]
pub struct DensifyEvent {
    pub iteration: usize,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    pub count: usize,
}

#[derive(Clone, Debug)]
pub struct FirstFrameOutput {
    pub gaussians: GaussianSet,
    pub maps: ResidualMapSet,
    pub log: Vec<LossBreakdown>,
    pub densify_events: Vec<DensifyEvent>,
    pub optimizer: StreamOptimizer,
}

/// Joint optimization of Gaussians and residual maps on the first frame.
pub fn train_first_frame(
    images: &[Image],
    init: &PointCloudInit,
    cameras: &[Camera],
    cfg: &StreamConfig,
    observer: &mut dyn TrainObserver,
) -> Result<FirstFrameOutput> {
    cfg.validate()?;
    check_views(images, cameras)?;
    let mut g = init_gaussians(init, cfg.sh_degree)?;
    g.snap_to_f32();
    let (w, h) = (cameras[0].width, cameras[0].height);
    let mut maps = ResidualMapSet::zeros(cameras.len(), w, h);
    let mut res_opt = ResidualOptimizer::new(&maps);
    let mut opt = GaussianOptimizer::new(&g);
    let mut stats = DensifyStats::new(g.len());
    let mut sampler = CameraSampler::new(cameras.len(), frame_rng(cfg.seed, 0, 0));
    let mut split_rng = frame_rng(cfg.seed, 0, 1);
    let extent = scene_extent(cameras);
    let weights = cfg.loss_weights();
    let iters = cfg.first_frame_iters;
    let mut residual_live = !cfg.residual_freeze_until_densify;
    let mut log = Vec::with_capacity(iters);
    let mut densify_events = Vec::new();

    for it in 1..=iters {
        let c = sampler.next_camera();
        let (img, aux) = render(&g, &cameras[c])?;
        let restored = restore_target(&images[c], &maps.maps[c])?;
        let residual_arg = cfg.use_residual_maps.then_some(&maps.maps[c]);
        let (loss, lg) = total_loss(&img.rgb, &restored, &g, residual_arg, LossMode::First, &weights)?;
        observer.on_iteration(&IterationEvent {
            frame: 0,
            stage: Stage::First,
            iteration: it,
            camera: c,
            observation: &images[c],
            restored: &restored,
            residual: &maps.maps[c],
            loss: &loss,
            gaussians: &g,
        });
        let mut grads = render_backward(&g, &cameras[c], &aux, &lg.pred)?;
        add_into(&mut grads.opacity_logits, &lg.opacity_logits);
        let densifying = it <= cfg.densify_until;
        if densifying {
            stats.accumulate(&aux, &grads);
        }
        let pos_lr = lr_schedule(
            it,
            iters,
            cfg.position_lr_init * extent,
            cfg.position_lr_final * extent,
        )?;
        opt.step(&mut g, &grads, &GaussianLrs::from_config(cfg, pos_lr), true)?;
        if residual_live {
            if let Some(grad) = &lg.residual {
                let [a, b] = cfg.residual_lr_first;
                res_opt.step(&mut maps, c, grad, lr_schedule(it, iters, a, b)?)?;
            }
        }
        log.push(loss);

        if densifying && it % cfg.densify_interval == 0 {
            observer.before_densify(it, &g);
            let out = densify_and_prune(
                &g,
                &stats,
                cfg.densify_grad_threshold,
                cfg.percent_dense * extent,
                cfg.prune_opacity_threshold,
                &mut split_rng,
            );
            if out.gaussians.is_empty() {
                return Err(Error::EmptyScene);
            }
            opt.remap(&out.sources, g.sh_stride());
            g = out.gaussians;
            g.snap_to_f32();
            stats = DensifyStats::new(g.len());
            residual_live = true;
            densify_events.push(DensifyEvent {
                iteration: it,
                cloned: out.cloned,
                split: out.split,
                pruned: out.pruned,
                count: g.len(),
            });
        }
    }
    Ok(FirstFrameOutput {
        gaussians: g,
        maps,
        log,
        densify_events,
        optimizer: StreamOptimizer {
            gaussians: opt,
            residual: res_opt,
        },
    })
}

#[derive(Clone, Debug)]
pub struct NextFrameOutput {
    /// Old plus new Gaussians: the set that represents this frame.
    pub render_set: GaussianSet,
    /// The set handed to the next frame.
    pub propagated: GaussianSet,
    pub maps: ResidualMapSet,
    pub log: Vec<LossBreakdown>,
    pub spawned: usize,
}

/// Deforms the previous Gaussians to frame `frame`, spawns and fits new
/// Gaussians, and keeps updating the carried-over residual maps.
#[allow(clippy::too_many_arguments)]
pub fn train_next_frame(
    g_prev: &GaussianSet,
    maps_prev: &ResidualMapSet,
    state: &mut StreamOptimizer,
    images: &[Image],
    cameras: &[Camera],
    frame: usize,
    cfg: &StreamConfig,
    observer: &mut dyn TrainObserver,
) -> Result<NextFrameOutput> {
    check_views(images, cameras)?;
    if maps_prev.len() != cameras.len() || state.residual.groups.len() != cameras.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} residual maps for {} cameras",
            maps_prev.len(),
            cameras.len()
        )));
    }
    if cfg.reset_residual_moments {
        state.residual = ResidualOptimizer::new(maps_prev);
    }
    if cfg.reset_gaussian_moments {
        state.gaussians = GaussianOptimizer::new(g_prev);
    } else if state.gaussians.positions.len() != g_prev.positions.len()
        || state.gaussians.sh_coeffs.len() != g_prev.sh_coeffs.len()
    {
        return Err(Error::ShapeMismatch(format!(
            "optimizer state for {} Gaussians, {} given",
            state.gaussians.positions.len() / 3,
            g_prev.len()
        )));
    }
    let StreamOptimizer {
        gaussians: opt,
        residual: res_opt,
    } = state;
    let mut g = g_prev.clone();
    let mut maps = maps_prev.clone();
    let mut sampler = CameraSampler::new(cameras.len(), frame_rng(cfg.seed, frame, 0));
    let mut spawn_rng = frame_rng(cfg.seed, frame, 2);
    let extent = scene_extent(cameras);
    let weights = cfg.loss_weights();
    let lrs = GaussianLrs::from_config(cfg, cfg.position_lr_sequential * extent);
    let total_iters = cfg.sequential_iters_deform + cfg.sequential_iters_new;
    let [ra, rb] = cfg.residual_lr_sequential;
    let mut log = Vec::with_capacity(total_iters);

    for it in 1..=cfg.sequential_iters_deform {
        let c = sampler.next_camera();
        let (img, aux) = render(&g, &cameras[c])?;
        let restored = restore_target(&images[c], &maps.maps[c])?;
        let residual_arg = cfg.use_residual_maps.then_some(&maps.maps[c]);
        let (loss, lg) =
            total_loss(&img.rgb, &restored, &g, residual_arg, LossMode::Sequential, &weights)?;
        observer.on_iteration(&IterationEvent {
            frame,
            stage: Stage::Deform,
            iteration: it,
            camera: c,
            observation: &images[c],
            restored: &restored,
            residual: &maps.maps[c],
            loss: &loss,
            gaussians: &g,
        });
        let grads = render_backward(&g, &cameras[c], &aux, &lg.pred)?;
        opt.step(&mut g, &grads, &lrs, cfg.sequential_optimize_appearance)?;
        if let Some(grad) = &lg.residual {
            res_opt.step(&mut maps, c, grad, lr_schedule(it, total_iters, ra, rb)?)?;
        }
        log.push(loss);
    }

    let mut renders = Vec::with_capacity(cameras.len());
    for (c, cam) in cameras.iter().enumerate() {
        let (img, aux) = render(&g, cam)?;
        let restored = restore_target(&images[c], &maps.maps[c])?;
        let err = error_map(&img.rgb, &restored)?;
        renders.push((img, aux, err));
    }
    let views: Vec<SpawnView<'_>> = renders
        .iter()
        .enumerate()
        .map(|(c, (img, aux, err))| SpawnView {
            camera: &cameras[c],
            observation: &images[c],
            error: err,
            aux,
            alpha: &img.alpha,
        })
        .collect();
    let params = SpawnParams {
        percentile: cfg.spawn_percentile,
        min_error: cfg.spawn_min_error,
        cap: cfg.spawn_cap,
        sh_degree: g.sh_degree,
    };
    let mut new = spawn_new_gaussians(&views, &params, &mut spawn_rng);
    drop(views);
    drop(renders);
    let spawned = new.len();

    let old_n = g.len();
    let sh_stride = g.sh_stride();
    let mut new_opt = GaussianOptimizer::new(&new);
    for it in 1..=cfg.sequential_iters_new {
        let c = sampler.next_camera();
        let full = if new.is_empty() { g.clone() } else { g.concat(&new)? };
        let (img, aux) = render(&full, &cameras[c])?;
        let restored = restore_target(&images[c], &maps.maps[c])?;
        let residual_arg = cfg.use_residual_maps.then_some(&maps.maps[c]);
        let (loss, lg) =
            total_loss(&img.rgb, &restored, &full, residual_arg, LossMode::Sequential, &weights)?;
        observer.on_iteration(&IterationEvent {
            frame,
            stage: Stage::NewGaussians,
            iteration: it,
            camera: c,
            observation: &images[c],
            restored: &restored,
            residual: &maps.maps[c],
            loss: &loss,
            gaussians: &full,
        });
        if !new.is_empty() {
            let grads = render_backward(&full, &cameras[c], &aux, &lg.pred)?;
            new_opt.step(&mut new, &tail(&grads, old_n, sh_stride), &lrs, true)?;
        }
        if let Some(grad) = &lg.residual {
            let step = cfg.sequential_iters_deform + it;
            res_opt.step(&mut maps, c, grad, lr_schedule(step, total_iters, ra, rb)?)?;
        }
        log.push(loss);
    }

    let render_set = if new.is_empty() { g.clone() } else { g.concat(&new)? };
    let propagated = if cfg.reuse_new_gaussians {
        let sources: Vec<Option<usize>> = (0..old_n).map(Some).chain((0..spawned).map(|_| None)).collect();
        opt.remap(&sources, sh_stride);
        render_set.clone()
    } else {
        g
    };
    Ok(NextFrameOutput {
        render_set,
        propagated,
        maps,
        log,
        spawned,
    })
}
