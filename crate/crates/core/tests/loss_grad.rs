use or2_core::gradcheck::{central_difference, random_image, CheckReport, FD_STEP};
use or2_core::image::Image;
use or2_core::optimize::{
    dssim_loss, dssim_with_grads, l1_loss, opacity_reg, residual_reg, ssim::ssim_value, total_loss,
    LossMode, LossWeights,
};
use or2_core::scene::GaussianSet;

const SEEDS: u64 = 20;

fn with_data(template: &Image, x: &[f64]) -> Image {
    Image::from_data(template.width, template.height, x.to_vec()).unwrap()
}

/// Direct per-pixel SSIM: explicit 2D Gaussian window, explicit mirror
/// indexing, no separable blur.
fn direct_ssim(a: &Image, b: &Image) -> f64 {
    let (w, h) = (a.width as isize, a.height as isize);
    let mirror = |i: isize, n: isize| {
        if i < 0 {
            -i
        } else if i >= n {
            2 * n - 2 - i
        } else {
            i
        }
    };
    let mut win = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (dy, row) in win.iter_mut().enumerate() {
        for (dx, v) in row.iter_mut().enumerate() {
            let (fx, fy) = (dx as f64 - 5.0, dy as f64 - 5.0);
            *v = (-(fx * fx + fy * fy) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut sum = 0.0;
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (dy, row) in win.iter().enumerate() {
                    for (dx, wt) in row.iter().enumerate() {
                        let px = mirror(x + dx as isize - 5, w) as usize;
                        let py = mirror(y + dy as isize - 5, h) as usize;
                        let wt = wt / total;
                        let va = a.get(px, py, c);
                        let vb = b.get(px, py, c);
                        mx += wt * va;
                        my += wt * vb;
                        xx += wt * va * va;
                        yy += wt * vb * vb;
                        xy += wt * va * vb;
                    }
                }
                let sx = xx - mx * mx;
                let sy = yy - my * my;
                let sxy = xy - mx * my;
                sum += (2.0 * mx * my + c1) * (2.0 * sxy + c2)
                    / ((mx * mx + my * my + c1) * (sx + sy + c2));
            }
        }
    }
    sum / (3 * w * h) as f64
}

/// Moves entries of `a` within `2 * FD_STEP` of `b` away from the L1 kink.
fn away_from(a: &Image, b: &Image) -> Image {
    let data: Vec<f64> = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| if (x - y).abs() < 2.0 * FD_STEP { y + 0.01 } else { x })
        .collect();
    with_data(a, &data)
}

fn checkerboard(size: usize, cell: usize) -> Image {
    let mut img = Image::zeros(size, size);
    for y in 0..size {
        for x in 0..size {
            let v = ((x / cell + y / cell) % 2) as f64;
            for c in 0..3 {
                img.set(x, y, c, v);
            }
        }
    }
    img
}

#[test]
fn l1_gradient_matches_finite_differences() {
    let mut report = CheckReport::default();
    for seed in 0..SEEDS {
        let p = random_image(seed, 16, 16, 0.0, 1.0);
        let t = random_image(seed + 100, 16, 16, 0.0, 1.0);
        let p = away_from(&p, &t);
        let (_, g) = l1_loss(&p, &t).unwrap();
        let fd = central_difference(|x| l1_loss(&with_data(&p, x), &t).unwrap().0, &p.data, FD_STEP);
        report.compare("l1", &g.data, &fd);
    }
    assert!(report.passed(), "{:?}", &report.mismatches[..report.mismatches.len().min(5)]);
    assert!(report.max_rel_err < 1e-4, "{}", report.max_rel_err);
}

#[test]
fn dssim_gradient_matches_finite_differences() {
    let mut report = CheckReport::default();
    for seed in 0..SEEDS {
        let p = random_image(seed, 16, 16, 0.0, 1.0);
        let t = random_image(seed + 100, 16, 16, 0.0, 1.0);
        let (_, gp, gt) = dssim_with_grads(&p, &t).unwrap();
        let fd_p = central_difference(|x| dssim_loss(&with_data(&p, x), &t).unwrap().0, &p.data, FD_STEP);
        let fd_t = central_difference(|x| dssim_loss(&p, &with_data(&t, x)).unwrap().0, &t.data, FD_STEP);
        report.compare("dssim/pred", &gp.data, &fd_p);
        report.compare("dssim/target", &gt.data, &fd_t);
    }
    assert!(report.passed(), "{:?}", &report.mismatches[..report.mismatches.len().min(5)]);
}

#[test]
fn opacity_reg_gradient_matches_finite_differences() {
    let mut report = CheckReport::default();
    for seed in 0..SEEDS {
        let (g, _) = or2_core::gradcheck::random_scene(seed, 5, 16, 0);
        let (_, grad) = opacity_reg(&g);
        let fd = central_difference(
            |x| {
                let mut p = g.clone();
                p.opacity_logits = x.to_vec();
                opacity_reg(&p).0
            },
            &g.opacity_logits,
            FD_STEP,
        );
        report.compare("opacity_reg", &grad, &fd);
    }
    assert!(report.passed(), "{:?}", report.mismatches);
}

#[test]
fn residual_reg_gradient_matches_finite_differences_away_from_zero() {
    let mut report = CheckReport::default();
    for seed in 0..SEEDS {
        let m = random_image(seed, 16, 16, -0.1, 0.1).map(|v| if v.abs() < 2.0 * FD_STEP { 0.05 } else { v });
        let (_, g) = residual_reg(&m);
        let fd = central_difference(|x| residual_reg(&with_data(&m, x)).0, &m.data, FD_STEP);
        report.compare("residual_reg", &g.data, &fd);
    }
    assert!(report.passed(), "{:?}", report.mismatches);
}

#[test]
fn total_loss_residual_gradient_matches_finite_differences() {
    let w = LossWeights::default();
    let mut report = CheckReport::default();
    for seed in 0..SEEDS {
        let obs = random_image(seed + 100, 16, 16, 0.0, 1.0);
        let m = random_image(seed + 200, 16, 16, -0.05, 0.05);
        let m = away_from(&m, &Image::zeros(16, 16));
        let restored = with_data(&obs, &obs.data.iter().zip(&m.data).map(|(o, r)| o - r).collect::<Vec<_>>());
        let pred = away_from(&random_image(seed, 16, 16, 0.0, 1.0), &restored);
        let g = GaussianSet::empty(0);
        let loss_at = |m: &Image| {
            let restored = with_data(&obs, &obs.data.iter().zip(&m.data).map(|(o, r)| o - r).collect::<Vec<_>>());
            total_loss(&pred, &restored, &g, Some(m), LossMode::Sequential, &w).unwrap()
        };
        let (_, grads) = loss_at(&m);
        let fd = central_difference(|x| loss_at(&with_data(&m, x)).0.total, &m.data, FD_STEP);
        report.compare("total/residual", &grads.residual.unwrap().data, &fd);
        let fd_pred = central_difference(
            |x| total_loss(&with_data(&pred, x), &restored, &g, Some(&m), LossMode::Sequential, &w).unwrap().0.total,
            &pred.data,
            FD_STEP,
        );
        report.compare("total/pred", &grads.pred.data, &fd_pred);
    }
    assert!(report.passed(), "{:?}", &report.mismatches[..report.mismatches.len().min(5)]);
}

#[test]
fn ssim_matches_direct_evaluation_on_random_pairs() {
    for seed in 0..5 {
        let a = random_image(seed, 17, 13, 0.0, 1.0);
        let b = random_image(seed + 50, 17, 13, 0.0, 1.0);
        let fast = ssim_value(&a, &b).unwrap();
        let slow = direct_ssim(&a, &b);
        assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
    }
}

#[test]
fn checkerboard_against_inverse_matches_direct_evaluation() {
    let a = checkerboard(16, 1);
    let b = a.map(|v| 1.0 - v);
    let oracle = direct_ssim(&a, &b);
    let s = ssim_value(&a, &b).unwrap();
    assert!((s - oracle).abs() < 1e-12);
    let (d, _) = dssim_loss(&a, &b).unwrap();
    assert!(d > 0.0 && d <= 1.0, "{d}");
    assert!((d - (1.0 - oracle) / 2.0).abs() < 1e-12);
}

#[test]
fn identical_images_have_unit_ssim_and_zero_dssim() {
    let a = random_image(9, 16, 16, 0.0, 1.0);
    assert_eq!(ssim_value(&a, &a).unwrap(), 1.0);
    assert_eq!(dssim_loss(&a, &a).unwrap().0, 0.0);
}
