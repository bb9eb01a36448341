use nalgebra::SymmetricEigen;
use or2_core::scene::{covariance3d, sh::eval_sh, sh_len, GaussianSet};
use proptest::prelude::*;

fn unit_dir() -> impl Strategy<Value = [f64; 3]> {
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
        .prop_filter("non-degenerate", |(x, y, z)| x * x + y * y + z * z > 1e-3)
        .prop_map(|(x, y, z)| {
            let n = (x * x + y * y + z * z).sqrt();
            [x / n, y / n, z / n]
        })
}

fn quat() -> impl Strategy<Value = [f64; 4]> {
    (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0)
        .prop_filter("non-zero", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-4)
        .prop_map(|(w, x, y, z)| [w, x, y, z])
}

proptest! {
    #[test]
    fn activated_quaternions_are_fixed_points_of_normalization(q in quat(), ls in -3.0f64..1.0, l in -8.0f64..8.0) {
        let mut g = GaussianSet::empty(0);
        g.push([0.0; 3], q, [ls; 3], l, &[0.0; 3]);
        let act = g.activate().unwrap();
        let u = act.rotations[0];
        let n = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() < 1e-6);
        for v in u {
            prop_assert!((v / n - v).abs() < 1e-12);
        }
        prop_assert!(act.scales[0].iter().all(|&s| s > 0.0));
        prop_assert!(act.opacities[0] > 0.0 && act.opacities[0] < 1.0);
    }

    #[test]
    fn covariance_is_symmetric_psd(q in quat(), s in prop::array::uniform3(0.001f64..3.0)) {
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let q = q.map(|v| v / n);
        let c = covariance3d(q, s);
        prop_assert!((c - c.transpose()).abs().max() < 1e-14 * (1.0 + c.abs().max()));
        let eig = SymmetricEigen::new(c).eigenvalues;
        let scale = c.abs().max();
        for e in eig.iter() {
            prop_assert!(*e >= -1e-12 * scale);
        }
        let mut got: Vec<f64> = eig.iter().copied().collect();
        let mut want: Vec<f64> = s.iter().map(|v| v * v).collect();
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + b));
        }
    }

    #[test]
    fn degree_zero_color_is_view_independent(dc in prop::array::uniform3(-2.0f64..2.0), dirs in prop::collection::vec(unit_dir(), 100)) {
        let first = eval_sh(&dc, 0, dirs[0]).unwrap();
        for d in &dirs {
            prop_assert_eq!(eval_sh(&dc, 0, *d).unwrap(), first);
        }
    }

    #[test]
    fn sh_color_is_non_negative(degree in 0u32..=3, seed in prop::collection::vec(-3.0f64..3.0, 48), dir in unit_dir()) {
        let k = sh_len(degree);
        let coeffs: Vec<f64> = seed[..3 * k].to_vec();
        let rgb = eval_sh(&coeffs, degree, dir).unwrap();
        prop_assert!(rgb.iter().all(|&v| v >= 0.0));
    }
}
