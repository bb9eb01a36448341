use or2_core::gradcheck::random_image;
use or2_core::image::{Image, StaticMask};
use or2_core::metrics::*;
use or2_core::optimize::{dssim_from_ssim, dssim_loss};
use or2_core::synth::{add_noise, make_scene, render_clean, NoiseSpec};
use proptest::prelude::*;

fn image_strategy(w: usize, h: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(0.0f64..1.0, w * h * 3).prop_map(move |d| Image::from_data(w, h, d).unwrap())
}

fn mask_strategy(w: usize, h: usize) -> impl Strategy<Value = StaticMask> {
    prop::collection::vec(any::<bool>(), w * h)
        .prop_filter("non-empty", |d| d.iter().any(|&b| b))
        .prop_map(move |d| StaticMask::from_data(w, h, d).unwrap())
}

fn permute_channels(img: &Image) -> Image {
    let mut out = img.clone();
    for p in 0..img.pixel_count() {
        for c in 0..3 {
            out.data[3 * p + c] = img.data[3 * p + (c + 1) % 3];
        }
    }
    out
}

fn flip(img: &Image) -> Image {
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            for c in 0..3 {
                out.set(img.width - 1 - x, y, c, img.get(x, y, c));
            }
        }
    }
    out
}

fn flip_mask(m: &StaticMask) -> StaticMask {
    let mut out = m.clone();
    for y in 0..m.height {
        for x in 0..m.width {
            out.data[y * m.width + m.width - 1 - x] = m.get(x, y);
        }
    }
    out
}

#[test]
fn psnr_of_constant_offset() {
    let a = Image::filled(16, 16, 0.3);
    let b = Image::filled(16, 16, 0.4);
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-6);
    assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
}

#[test]
fn psnr_decreases_with_noise_level() {
    let s = make_scene(0, 100, 5, 2, 1, 48).unwrap();
    let clean = render_clean(&s, 0, 1).unwrap();
    let scores: Vec<f64> = [0.01, 0.03, 0.09]
        .iter()
        .map(|&sigma| {
            let spec = NoiseSpec {
                gaussian_sigma: sigma,
                poisson_photons: 1e9,
                seed: 5,
            };
            (0..8)
                .map(|t| psnr(&add_noise(&clean, &spec, t, 0).unwrap(), &clean).unwrap())
                .sum::<f64>()
                / 8.0
        })
        .collect();
    assert!(scores[0] > scores[1] && scores[1] > scores[2], "{scores:?}");
}

#[test]
fn mtv_examples() {
    let c = vec![Image::filled(8, 8, 0.3); 5];
    assert_eq!(mtv(&c, &StaticMask::full(8, 8)).unwrap(), 0.0);
    let alt: Vec<Image> = (0..6).map(|t| Image::filled(8, 8, (t % 2) as f64)).collect();
    assert_eq!(mtv(&alt, &StaticMask::full(8, 8)).unwrap(), 100.0);

    let half = StaticMask::from_data(8, 8, (0..64).map(|i| i % 8 < 4).collect()).unwrap();
    let outside: Vec<Image> = (0..4)
        .map(|t| {
            let mut f = Image::filled(8, 8, 0.5);
            for y in 0..8 {
                for x in 4..8 {
                    for ch in 0..3 {
                        f.set(x, y, ch, (t % 2) as f64);
                    }
                }
            }
            f
        })
        .collect();
    assert_eq!(mtv(&outside, &half).unwrap(), 0.0);
    assert!(mtv(&c[..1], &StaticMask::full(8, 8)).is_err());
    assert!(mtv(&c, &StaticMask::from_data(8, 8, vec![false; 64]).unwrap()).is_err());
}

#[test]
fn dssim_is_half_one_minus_ssim_exactly() {
    for seed in 0..50 {
        let a = random_image(seed, 16, 16, 0.0, 1.0);
        let b = random_image(seed + 1000, 16, 16, 0.0, 1.0);
        let s = ssim(&a, &b).unwrap();
        assert_eq!(dssim_loss(&a, &b).unwrap().0, (1.0 - s) / 2.0);
        assert_eq!(dssim_from_ssim(s), (1.0 - s) / 2.0);
    }
}

#[test]
fn st_slice_examples() {
    let frames: Vec<Image> = (0..5).map(|t| random_image(t, 7, 6, 0.0, 1.0)).collect();
    let s = st_slice(&frames, 3).unwrap();
    assert_eq!((s.width, s.height), (5, 6));
    for t in 0..5 {
        for y in 0..6 {
            assert_eq!(s.pixel(t, y), frames[t as usize].pixel(3, y));
        }
    }
    let one = st_slice(&frames[..1], 0).unwrap();
    assert_eq!(one.width, 1);
    let still = st_slice(&vec![frames[0].clone(); 4], 2).unwrap();
    for t in 1..4 {
        for y in 0..6 {
            assert_eq!(still.pixel(t, y), still.pixel(0, y));
        }
    }
    assert!(st_slice(&frames, 7).is_err());
    assert!(st_slice(&[], 0).is_err());
}

#[test]
fn evaluate_ground_truth_against_itself() {
    let s = make_scene(0, 60, 0, 2, 3, 32).unwrap();
    let gt: Vec<Vec<Image>> = (0..2)
        .map(|c| (0..3).map(|t| render_clean(&s, t, c).unwrap()).collect())
        .collect();
    let rep = evaluate_run(&gt, &gt, &s.masks).unwrap();
    assert_eq!(rep.rows.len(), 3);
    assert!(rep.rows.iter().all(|r| r.psnr == PSNR_CAP && r.ssim == 1.0));
    assert_eq!(rep.mean_psnr, PSNR_CAP);
    assert_eq!(rep.mtv, 0.0);
    assert!(evaluate_run(&gt, &gt[..1], &s.masks).is_err());
    let short: Vec<Vec<Image>> = gt.iter().map(|v| v[..2].to_vec()).collect();
    assert!(evaluate_run(&short, &gt, &s.masks).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn psnr_is_symmetric(a in image_strategy(6, 5), b in image_strategy(6, 5)) {
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn ssim_of_image_with_itself_is_one(a in image_strategy(12, 11)) {
        prop_assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn mtv_is_nonnegative_and_zero_iff_static(
        frames in prop::collection::vec(image_strategy(5, 4), 2..5),
        mask in mask_strategy(5, 4),
    ) {
        let v = mtv(&frames, &mask).unwrap();
        prop_assert!(v >= 0.0);
        let constant = (0..20).filter(|&p| mask.data[p]).all(|p| {
            frames.iter().all(|f| f.data[3 * p..3 * p + 3] == frames[0].data[3 * p..3 * p + 3])
        });
        prop_assert_eq!(v == 0.0, constant);
        let frozen = vec![frames[0].clone(); frames.len()];
        prop_assert_eq!(mtv(&frozen, &mask).unwrap(), 0.0);
    }

    #[test]
    fn mtv_invariant_to_channel_permutation_and_flip(
        frames in prop::collection::vec(image_strategy(5, 4), 2..5),
        mask in mask_strategy(5, 4),
    ) {
        let v = mtv(&frames, &mask).unwrap();
        let permuted: Vec<Image> = frames.iter().map(permute_channels).collect();
        let flipped: Vec<Image> = frames.iter().map(flip).collect();
        prop_assert!((mtv(&permuted, &mask).unwrap() - v).abs() < 1e-12);
        prop_assert!((mtv(&flipped, &flip_mask(&mask)).unwrap() - v).abs() < 1e-12);
    }
}
