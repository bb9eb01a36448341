use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole camera. `rotation` and `translation` map world to camera
/// coordinates: `p_cam = R p_world + t`, with +z pointing into the scene and
/// pixel `(x, y)` centered at integer coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_near")]
    pub near: f64,
}

fn default_near() -> f64 {
    0.01
}

impl Camera {
    /// Camera at `eye` looking at `target`, image `y` pointing along `-up`.
    pub fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        focal: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let eye_v = Vector3::from(eye);
        let forward = (Vector3::from(target) - eye_v).normalize();
        let right = forward.cross(&Vector3::from(up)).normalize();
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(r * eye_v);
        Camera {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [t.x, t.y, t.z],
            fx: focal,
            fy: focal,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
            near: default_near(),
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let r = &self.rotation;
        Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        )
    }

    pub fn translation_vector(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation_matrix().transpose() * self.translation_vector())
    }

    pub fn world_to_camera(&self, p: [f64; 3]) -> Vector3<f64> {
        self.rotation_matrix() * Vector3::from(p) + self.translation_vector()
    }

    /// Pixel coordinates of a camera-space point.
    pub fn project_point(&self, pc: &Vector3<f64>) -> [f64; 2] {
        [
            self.fx * pc.x / pc.z + self.cx,
            self.fy * pc.y / pc.z + self.cy,
        ]
    }

    /// World-space point at view depth `depth` along the ray through pixel
    /// `(x, y)`.
    pub fn unproject(&self, x: f64, y: f64, depth: f64) -> [f64; 3] {
        let pc = Vector3::new(
            (x - self.cx) / self.fx * depth,
            (y - self.cy) / self.fy * depth,
            depth,
        );
        let pw = self.rotation_matrix().transpose() * (pc - self.translation_vector());
        [pw.x, pw.y, pw.z]
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.rotation_matrix();
        let err = (r * r.transpose() - Matrix3::identity()).abs().max();
        if !(err <= 1e-6) {
            return Err(Error::invalid(format!(
                "camera rotation is not orthonormal (error {err:e})"
            )));
        }
        if self.width < 8 || self.height < 8 {
            return Err(Error::invalid(format!(
                "camera image {}x{} is below the 8x8 minimum",
                self.width, self.height
            )));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if !(self.near > 0.0) {
            return Err(Error::invalid("near plane must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_projects_target_to_principal_point() {
        let cam = Camera::look_at([1.0, 0.5, -3.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], 60.0, 32, 24);
        cam.validate().unwrap();
        let pc = cam.world_to_camera([0.0, 0.0, 0.0]);
        let px = cam.project_point(&pc);
        assert!((px[0] - cam.cx).abs() < 1e-12 && (px[1] - cam.cy).abs() < 1e-12);
        assert!(pc.z > 0.0);
        let c = cam.center();
        assert!((c - Vector3::new(1.0, 0.5, -3.0)).norm() < 1e-12);
    }

    #[test]
    fn unproject_inverts_projection() {
        let cam = Camera::look_at([0.0, 0.0, -4.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], 70.0, 64, 64);
        let p = cam.unproject(10.0, 50.0, 3.5);
        let pc = cam.world_to_camera(p);
        let px = cam.project_point(&pc);
        assert!((pc.z - 3.5).abs() < 1e-12);
        assert!((px[0] - 10.0).abs() < 1e-9 && (px[1] - 50.0).abs() < 1e-9);
    }
}
