//! Gaussian parameterization, activations and initialization.

pub mod sh;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use sh::{eval_sh, sh_len};

/// Raw (pre-activation) parameters of `N` Gaussians, stored as flat
/// row-major arrays so optimizer state can mirror them one-to-one.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSet {
    /// `N x 3` world positions.
    pub positions: Vec<f64>,
    /// `N x 4` quaternions `(w, x, y, z)`, not necessarily unit length.
    pub rotations: Vec<f64>,
    /// `N x 3` natural log of per-axis standard deviation.
    pub log_scales: Vec<f64>,
    /// `N` opacity logits.
    pub opacity_logits: Vec<f64>,
    /// `N x 3 x sh_len(sh_degree)`, channel-major per Gaussian.
    pub sh_coeffs: Vec<f64>,
    pub sh_degree: u32,
}

/// Seed points with colors in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointCloudInit {
    pub points: Vec<[f64; 3]>,
    pub colors: Vec<[f64; 3]>,
}

/// Activated view of a [`GaussianSet`].
#[derive(Clone, Debug)]
pub struct ActivatedGaussians {
    pub positions: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub scales: Vec<[f64; 3]>,
    pub opacities: Vec<f64>,
}

pub const INIT_OPACITY: f64 = 0.1;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl GaussianSet {
    /// An empty set of the given SH degree, used as a concatenation seed.
    pub fn empty(sh_degree: u32) -> Self {
        GaussianSet {
            positions: Vec::new(),
            rotations: Vec::new(),
            log_scales: Vec::new(),
            opacity_logits: Vec::new(),
            sh_coeffs: Vec::new(),
            sh_degree,
        }
    }

    pub fn len(&self) -> usize {
        self.opacity_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity_logits.is_empty()
    }

    pub fn sh_len(&self) -> usize {
        sh_len(self.sh_degree)
    }

    /// Coefficients per Gaussian (all channels).
    pub fn sh_stride(&self) -> usize {
        3 * self.sh_len()
    }

    pub fn position(&self, i: usize) -> [f64; 3] {
        [
            self.positions[3 * i],
            self.positions[3 * i + 1],
            self.positions[3 * i + 2],
        ]
    }

    pub fn rotation(&self, i: usize) -> [f64; 4] {
        let r = &self.rotations[4 * i..4 * i + 4];
        [r[0], r[1], r[2], r[3]]
    }

    pub fn log_scale(&self, i: usize) -> [f64; 3] {
        [
            self.log_scales[3 * i],
            self.log_scales[3 * i + 1],
            self.log_scales[3 * i + 2],
        ]
    }

    pub fn sh(&self, i: usize) -> &[f64] {
        let s = self.sh_stride();
        &self.sh_coeffs[i * s..(i + 1) * s]
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }

    /// Appends one Gaussian from raw parameters.
    pub fn push(
        &mut self,
        position: [f64; 3],
        rotation: [f64; 4],
        log_scale: [f64; 3],
        opacity_logit: f64,
        sh: &[f64],
    ) {
        debug_assert_eq!(sh.len(), self.sh_stride());
        self.positions.extend_from_slice(&position);
        self.rotations.extend_from_slice(&rotation);
        self.log_scales.extend_from_slice(&log_scale);
        self.opacity_logits.push(opacity_logit);
        self.sh_coeffs.extend_from_slice(sh);
    }

    /// Copies Gaussian `i` of `other` onto the end of `self`.
    pub fn push_from(&mut self, other: &GaussianSet, i: usize) {
        self.push(
            other.position(i),
            other.rotation(i),
            other.log_scale(i),
            other.opacity_logits[i],
            other.sh(i),
        );
    }

    /// New set containing the given Gaussians in the given order.
    pub fn select(&self, indices: &[usize]) -> GaussianSet {
        let mut out = GaussianSet::empty(self.sh_degree);
        for &i in indices {
            out.push_from(self, i);
        }
        out
    }

    /// `(self, other)` concatenated.
    pub fn concat(&self, other: &GaussianSet) -> Result<GaussianSet> {
        if self.sh_degree != other.sh_degree {
            return Err(Error::ShapeMismatch(format!(
                "cannot concatenate SH degree {} with {}",
                self.sh_degree, other.sh_degree
            )));
        }
        let mut out = self.clone();
        out.positions.extend_from_slice(&other.positions);
        out.rotations.extend_from_slice(&other.rotations);
        out.log_scales.extend_from_slice(&other.log_scales);
        out.opacity_logits.extend_from_slice(&other.opacity_logits);
        out.sh_coeffs.extend_from_slice(&other.sh_coeffs);
        Ok(out)
    }

    /// Checks array shapes against each other and the SH degree.
    pub fn validate(&self) -> Result<()> {
        sh::check_degree(self.sh_degree)?;
        let n = self.len();
        let shapes = [
            ("positions", self.positions.len(), 3 * n),
            ("rotations", self.rotations.len(), 4 * n),
            ("log_scales", self.log_scales.len(), 3 * n),
            ("sh_coeffs", self.sh_coeffs.len(), self.sh_stride() * n),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::ShapeMismatch(format!(
                    "{name} has {got} entries, expected {want} for N={n}"
                )));
            }
        }
        Ok(())
    }

    /// Rounds every parameter to the nearest `f32` so the set survives a
    /// checkpoint round trip unchanged.
    pub fn snap_to_f32(&mut self) {
        for v in self
            .positions
            .iter_mut()
            .chain(self.rotations.iter_mut())
            .chain(self.log_scales.iter_mut())
            .chain(self.opacity_logits.iter_mut())
            .chain(self.sh_coeffs.iter_mut())
        {
            *v = *v as f32 as f64;
        }
    }

    /// Applies the standard activations: `exp` scales, sigmoid opacity and
    /// normalized quaternions.
    pub fn activate(&self) -> Result<ActivatedGaussians> {
        self.validate()?;
        let fields: [(&'static str, &[f64], usize); 5] = [
            ("positions", &self.positions, 3),
            ("rotations", &self.rotations, 4),
            ("log_scales", &self.log_scales, 3),
            ("opacity_logits", &self.opacity_logits, 1),
            ("sh_coeffs", &self.sh_coeffs, self.sh_stride()),
        ];
        for (field, values, stride) in fields {
            if let Some(k) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteParameter {
                    field,
                    index: k / stride,
                });
            }
        }
        let n = self.len();
        let mut rotations = Vec::with_capacity(n);
        for i in 0..n {
            let q = self.rotation(i);
            let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::NonFiniteParameter {
                    field: "rotations",
                    index: i,
                });
            }
            rotations.push(q.map(|v| v / norm));
        }
        Ok(ActivatedGaussians {
            positions: (0..n).map(|i| self.position(i)).collect(),
            rotations,
            scales: (0..n).map(|i| self.log_scale(i).map(f64::exp)).collect(),
            opacities: self.opacity_logits.iter().map(|&l| sigmoid(l)).collect(),
        })
    }
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// `R diag(s)^2 R^T`.
pub fn covariance3d(q: [f64; 4], scales: [f64; 3]) -> Matrix3<f64> {
    let m = quat_to_matrix(q) * Matrix3::from_diagonal(&Vector3::from(scales));
    m * m.transpose()
}

/// Builds a set from seed points: identity rotations, opacity 0.1,
/// isotropic scale equal to the mean distance to the 3 nearest neighbours.
pub fn init_gaussians(init: &PointCloudInit, sh_degree: u32) -> Result<GaussianSet> {
    sh::check_degree(sh_degree)?;
    let k = init.points.len();
    if k == 0 {
        return Err(Error::EmptyInitialization);
    }
    if init.colors.len() != k {
        return Err(Error::ShapeMismatch(format!(
            "{} points but {} colors",
            k,
            init.colors.len()
        )));
    }
    let mut set = GaussianSet::empty(sh_degree);
    let coeffs = sh_len(sh_degree);
    let scales = nearest_neighbour_scales(&init.points);
    for (i, (p, c)) in init.points.iter().zip(&init.colors).enumerate() {
        let mut sh = vec![0.0; 3 * coeffs];
        for ch in 0..3 {
            sh[ch * coeffs] = sh::rgb_to_dc(c[ch]);
        }
        let ls = scales[i].ln();
        set.push(*p, [1.0, 0.0, 0.0, 0.0], [ls; 3], logit(INIT_OPACITY), &sh);
    }
    Ok(set)
}

/// Mean distance to the (up to) 3 nearest other points. A lone point gets
/// scale 0.01.
fn nearest_neighbour_scales(points: &[[f64; 3]]) -> Vec<f64> {
    let k = points.len();
    let neighbours = 3.min(k.saturating_sub(1));
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if neighbours == 0 {
                return 0.01;
            }
            let mut best = [f64::INFINITY; 3];
            for (j, q) in points.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2))
                    .sqrt();
                if d < best[2] {
                    best[2] = d;
                    best.sort_by(f64::total_cmp);
                }
            }
            let mean = best[..neighbours].iter().sum::<f64>() / neighbours as f64;
            mean.max(1e-7)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(color: [f64; 3]) -> PointCloudInit {
        PointCloudInit {
            points: vec![[0.0, 0.0, 0.0]],
            colors: vec![color],
        }
    }

    #[test]
    fn init_gray_point_has_zero_dc() {
        let g = init_gaussians(&single([0.5; 3]), 3).unwrap();
        assert_eq!(g.len(), 1);
        assert!(g.sh_coeffs.iter().all(|&c| c == 0.0));
        assert_eq!(g.rotation(0), [1.0, 0.0, 0.0, 0.0]);
        assert!((g.opacity_logits[0] - (-2.197_224_577_336_219_6)).abs() < 1e-12);
        assert!((g.opacity(0) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn init_reproduces_point_color() {
        let g = init_gaussians(&single([0.2, 0.7, 1.0]), 2).unwrap();
        let rgb = eval_sh(g.sh(0), 2, [0.6, 0.0, 0.8]).unwrap();
        for (a, b) in rgb.iter().zip([0.2, 0.7, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn init_collinear_middle_scale() {
        let init = PointCloudInit {
            points: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
            colors: vec![[0.5; 3]; 3],
        };
        let g = init_gaussians(&init, 0).unwrap();
        assert_eq!(g.log_scale(1), [0.0; 3]);
        // ends: neighbours at 1 and 2
        assert!((g.log_scale(0)[0] - 1.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn init_rejects_empty() {
        let init = PointCloudInit {
            points: vec![],
            colors: vec![],
        };
        assert!(matches!(
            init_gaussians(&init, 0),
            Err(Error::EmptyInitialization)
        ));
    }

    #[test]
    fn activation_examples() {
        let mut g = init_gaussians(&single([0.5; 3]), 0).unwrap();
        g.log_scales = vec![0.0; 3];
        g.opacity_logits = vec![0.0];
        g.rotations = vec![2.0, 0.0, 0.0, 0.0];
        let a = g.activate().unwrap();
        assert_eq!(a.scales[0], [1.0; 3]);
        assert_eq!(a.opacities[0], 0.5);
        assert_eq!(a.rotations[0], [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn activation_names_non_finite_index() {
        let init = PointCloudInit {
            points: vec![[0.0; 3], [1.0, 0.0, 0.0]],
            colors: vec![[0.5; 3]; 2],
        };
        let mut g = init_gaussians(&init, 0).unwrap();
        g.log_scales[4] = f64::NAN;
        match g.activate() {
            Err(Error::NonFiniteParameter { field, index }) => {
                assert_eq!(field, "log_scales");
                assert_eq!(index, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn covariance_examples() {
        let id = [1.0, 0.0, 0.0, 0.0];
        assert_eq!(covariance3d(id, [1.0; 3]), Matrix3::identity());
        assert_eq!(
            covariance3d(id, [2.0, 1.0, 1.0]),
            Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0))
        );
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let c = covariance3d([h, 0.0, 0.0, h], [2.0, 1.0, 1.0]);
        let want = Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0));
        assert!((c - want).abs().max() < 1e-12);
    }
}
