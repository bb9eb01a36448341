//! Subcommand implementations.

use std::path::{Path, PathBuf};

use or2_core::image::Image;
use or2_core::io::{read_checkpoint, read_init, read_ppm, write_checkpoint, write_init, write_ppm, Dataset};
use or2_core::metrics::{evaluate_run, psnr, st_slice};
use or2_core::renderer::render;
use or2_core::stream::{run_stream, MetricsRow, ResidualMapSet, StreamSetup};
use or2_core::synth::{export_dataset, jitter_points, make_scene};

use crate::config::{RunConfig, Variant};
use crate::report::{self, RestoreRow, Summary};
use crate::CliError;

pub fn checkpoint_path(output: &Path, frame: usize) -> PathBuf {
    output.join("checkpoints").join(format!("frame{frame:04}.or2g"))
}

/// Writes `clean/`, `noisy/` and `init.json` under the dataset root.
pub fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let s = &cfg.synth;
    let scene = make_scene(s.scene_seed, s.n_static, s.n_dynamic, s.n_cameras, s.frames, s.resolution)?;
    export_dataset(&scene, None, &cfg.variant_dir(Variant::Clean))?;
    export_dataset(&scene, Some(&s.noise()), &cfg.variant_dir(Variant::Noisy))?;
    let init = jitter_points(&scene, s.init_sigma, s.init_keep, s.init_seed)?;
    write_init(&cfg.init_path(), &init)?;
    eprintln!(
        "wrote {} cameras x {} frames to {}",
        s.n_cameras,
        s.frames,
        cfg.dataset.display()
    );
    Ok(())
}

/// Trains on the configured variant; one checkpoint per frame plus
/// `metrics.csv` and the resolved `config.toml`.
pub fn train(cfg: &RunConfig) -> Result<Vec<MetricsRow>, CliError> {
    let ds = Dataset::open(&cfg.variant_dir(cfg.variant))?;
    let train_cams = cfg.train_cameras(ds.rig.cameras.len())?;
    let cameras: Vec<_> = train_cams.iter().map(|&c| ds.rig.cameras[c].clone()).collect();
    let masks = train_cams
        .iter()
        .map(|&c| ds.mask(c))
        .collect::<Result<Vec<_>, _>>()?;
    let init = read_init(&cfg.init_path())?;
    std::fs::create_dir_all(&cfg.output)
        .map_err(|e| CliError::Data(format!("{}: {e}", cfg.output.display())))?;
    std::fs::write(cfg.output.join("config.toml"), cfg.to_toml())
        .map_err(|e| CliError::Data(format!("{}: {e}", cfg.output.display())))?;

    let mut source = ds.source(&train_cams)?;
    let setup = StreamSetup {
        cameras: &cameras,
        init: &init,
        masks: Some(&masks),
    };
    let empty = ResidualMapSet::none();
    let rows = run_stream(&mut source, &setup, &cfg.stream, &mut (), &mut |r| {
        let maps = if cfg.strip_residual { &empty } else { &r.maps };
        write_checkpoint(&checkpoint_path(&cfg.output, r.frame), &r.gaussians, maps)?;
        eprintln!(
            "frame {:>3}: {} gaussians ({} new)",
            r.frame, r.n_gaussians, r.n_spawned
        );
        Ok(())
    })?;
    report::write_metrics(&cfg.output.join(report::METRICS_FILE), &rows)?;
    Ok(rows)
}

/// Renders the held-out cameras from every checkpoint and scores them
/// against the reference variant.
pub fn eval(cfg: &RunConfig) -> Result<Summary, CliError> {
    if cfg.eval_cameras.is_empty() {
        return Err(CliError::Usage("eval needs at least one eval camera".into()));
    }
    let reference = Dataset::open(&cfg.variant_dir(cfg.reference))?;
    let rig = &reference.rig;
    cfg.train_cameras(rig.cameras.len())?;
    let mut rendered: Vec<Vec<Image>> = vec![Vec::new(); cfg.eval_cameras.len()];
    let mut truth: Vec<Vec<Image>> = vec![Vec::new(); cfg.eval_cameras.len()];
    for t in 0..rig.frames {
        let (g, _) = read_checkpoint(&checkpoint_path(&cfg.output, t))?;
        for (v, &c) in cfg.eval_cameras.iter().enumerate() {
            let (img, _) = render(&g, &rig.cameras[c])?;
            rendered[v].push(img.rgb.clamped());
            truth[v].push(reference.image(c, t)?);
        }
    }
    let masks = cfg
        .eval_cameras
        .iter()
        .map(|&c| reference.mask(c))
        .collect::<Result<Vec<_>, _>>()?;
    let rep = evaluate_run(&rendered, &truth, &masks)?;
    report::write_eval(&cfg.output.join(report::EVAL_FILE), &rep)?;
    for (v, &c) in cfg.eval_cameras.iter().enumerate() {
        let column = rig.cameras[c].width / 2;
        let slice = st_slice(&rendered[v], column)?;
        write_ppm(&cfg.output.join("slices").join(format!("cam{c}.ppm")), &slice)?;
    }

    let mut summary: Summary = vec![
        ("psnr".into(), rep.mean_psnr),
        ("ssim".into(), rep.mean_ssim),
        ("mtv".into(), rep.mtv),
    ];
    let metrics_path = cfg.output.join(report::METRICS_FILE);
    if metrics_path.exists() {
        let rows = report::read_metrics(&metrics_path)?;
        if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
            let later = &rows[1..];
            let spawned = later.iter().map(|r| r.n_spawned as f64).sum::<f64>() / later.len().max(1) as f64;
            summary.push(("first_frame_gaussians".into(), first.n_gaussians as f64));
            summary.push(("final_gaussians".into(), last.n_gaussians as f64));
            summary.push(("mean_spawned".into(), spawned));
        }
    }
    report::write_summary(&cfg.output.join(report::SUMMARY_FILE), &summary)?;
    eprintln!(
        "psnr {:.3} dB  ssim {:.4}  mtv {:.4}",
        rep.mean_psnr, rep.mean_ssim, rep.mtv
    );
    Ok(summary)
}

/// Writes `observation - residual` (clamped) for every training view and
/// frame and scores noisy and restored images against the clean variant.
pub fn restore(cfg: &RunConfig) -> Result<Vec<RestoreRow>, CliError> {
    let noisy = Dataset::open(&cfg.variant_dir(cfg.variant))?;
    let clean = Dataset::open(&cfg.variant_dir(Variant::Clean))?;
    let train_cams = cfg.train_cameras(noisy.rig.cameras.len())?;
    let mut rows: Vec<RestoreRow> = train_cams
        .iter()
        .map(|&c| RestoreRow {
            camera: c,
            psnr_noisy: 0.0,
            psnr_restored: 0.0,
        })
        .collect();
    let frames = noisy.rig.frames;
    for t in 0..frames {
        let path = checkpoint_path(&cfg.output, t);
        let (_, maps) = read_checkpoint(&path)?;
        if maps.is_empty() {
            return Err(CliError::Data(format!("{}: checkpoint lacks residual maps", path.display())));
        }
        if maps.len() != train_cams.len() {
            return Err(CliError::Data(format!(
                "{}: {} residual maps for {} training cameras",
                path.display(),
                maps.len(),
                train_cams.len()
            )));
        }
        for (i, &c) in train_cams.iter().enumerate() {
            let obs = noisy.image(c, t)?;
            let gt = clean.image(c, t)?;
            let map = maps.get(i);
            obs.check_same_shape(map, "residual map")?;
            let data = obs.data.iter().zip(&map.data).map(|(o, m)| (o - m).clamp(0.0, 1.0)).collect();
            let restored = Image::from_data(obs.width, obs.height, data)?;
            write_ppm(
                &cfg.output.join("restored").join(format!("cam{c}")).join(format!("frame{t}.ppm")),
                &restored,
            )?;
            rows[i].psnr_noisy += psnr(&obs, &gt)? / frames as f64;
            rows[i].psnr_restored += psnr(&restored, &gt)? / frames as f64;
        }
    }
    report::write_restore(&cfg.output.join(report::RESTORE_FILE), &rows)?;
    for r in &rows {
        eprintln!(
            "cam {:>2}: noisy {:.3} dB  restored {:.3} dB  ({:+.3})",
            r.camera,
            r.psnr_noisy,
            r.psnr_restored,
            r.psnr_restored - r.psnr_noisy
        );
    }
    Ok(rows)
}

/// Column `column` of `dir/frame{t}.ppm`, `t = 0, 1, ...` until a frame is
/// missing.
pub fn slice(dir: &Path, column: usize, out: &Path) -> Result<(), CliError> {
    let mut frames = Vec::new();
    loop {
        let p = dir.join(format!("frame{}.ppm", frames.len()));
        if !p.exists() {
            break;
        }
        frames.push(read_ppm(&p)?);
    }
    if frames.is_empty() {
        return Err(CliError::Data(format!("{}: no frame0.ppm", dir.display())));
    }
    let img = st_slice(&frames, column).map_err(|e| CliError::Usage(e.to_string()))?;
    write_ppm(out, &img)?;
    Ok(())
}

/// Runs the baseline and residual arms into `output/baseline` and
/// `output/residual`, then writes the delta table.
pub fn sweep(cfg: &RunConfig) -> Result<Vec<report::DeltaRow>, CliError> {
    let arm = |name: &str, residual: bool| {
        let mut c = cfg.clone();
        c.output = cfg.output.join(name);
        c.stream.use_residual_maps = residual;
        c
    };
    let base = arm("baseline", false);
    let ours = arm("residual", true);
    train(&base)?;
    let base_summary = eval(&base)?;
    train(&ours)?;
    let mut ours_summary = eval(&ours)?;
    let rows = restore(&ours)?;
    let n = rows.len() as f64;
    let gain = rows.iter().map(|r| r.psnr_restored - r.psnr_noisy).sum::<f64>() / n;
    ours_summary.push(("restore_gain".into(), gain));
    report::write_summary(&ours.output.join(report::SUMMARY_FILE), &ours_summary)?;
    let delta = report::delta_table(&ours_summary, &base_summary);
    report::write_delta(&cfg.output.join(report::DELTA_FILE), &delta)?;
    print!("{}", report::format_delta(&delta));
    Ok(delta)
}
