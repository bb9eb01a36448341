//! Perspective projection of a 3D Gaussian to a 2D splat, and its adjoint.

use nalgebra::{Matrix2x3, Matrix3, Vector3};

use super::Camera;
use crate::scene::quat_to_matrix;

/// Variance added to the projected covariance diagonal (px^2).
pub const LOW_PASS: f64 = 0.3;
/// Smallest alpha that contributes to a pixel.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;

/// Screen-space footprint of one Gaussian.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Splat {
    pub mean2d: [f64; 2],
    /// Upper triangle `(a, b, c)` of the inverse 2D covariance.
    pub conic: [f64; 3],
    /// View-space depth.
    pub depth: f64,
    /// Pixel radius beyond which `opacity * weight < 1/255`.
    pub radius: f64,
    pub culled: bool,
}

/// Projects one activated Gaussian. The footprint is the largest radius at
/// which the Gaussian can still reach the alpha threshold, so culling and tile
/// binning never drop a contribution the compositor would have kept.
pub fn project(
    position: [f64; 3],
    rotation: [f64; 4],
    scales: [f64; 3],
    opacity: f64,
    camera: &Camera,
) -> Splat {
    let pc = camera.world_to_camera(position);
    let depth = pc.z;
    if depth <= camera.near {
        return Splat {
            depth,
            culled: true,
            ..Splat::default()
        };
    }
    let mean2d = camera.project_point(&pc);
    let t = projection_jacobian(camera, &pc) * camera.rotation_matrix();
    let cov3 = crate::scene::covariance3d(rotation, scales);
    let cov2 = t * cov3 * t.transpose();
    let (a, b, c) = (cov2[(0, 0)] + LOW_PASS, cov2[(0, 1)], cov2[(1, 1)] + LOW_PASS);
    let det = a * c - b * b;
    let conic = [c / det, -b / det, a / det];
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let reach = 255.0 * opacity;
    let mut splat = Splat {
        mean2d,
        conic,
        depth,
        radius: 0.0,
        culled: true,
    };
    if !(det > 0.0) || reach < 1.0 {
        return splat;
    }
    splat.radius = (2.0 * reach.ln() * lambda_max).sqrt();
    let r = splat.radius;
    let w = camera.width as f64 - 1.0;
    let h = camera.height as f64 - 1.0;
    splat.culled = mean2d[0] + r < 0.0 || mean2d[0] - r > w || mean2d[1] + r < 0.0 || mean2d[1] - r > h;
    splat
}

pub(crate) fn projection_jacobian(camera: &Camera, pc: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / pc.z;
    let iz2 = iz * iz;
    Matrix2x3::new(
        camera.fx * iz,
        0.0,
        -camera.fx * pc.x * iz2,
        0.0,
        camera.fy * iz,
        -camera.fy * pc.y * iz2,
    )
}

/// Upstream gradients at the splat level for one Gaussian.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct SplatGrad {
    pub mean2d: [f64; 2],
    pub conic: [f64; 3],
}

/// Gradients of raw geometric parameters.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct GeometryGrad {
    pub position: [f64; 3],
    pub rotation: [f64; 4],
    pub log_scale: [f64; 3],
}

/// Adjoint of [`project`] with respect to position, raw quaternion and
/// log-scales.
pub(crate) fn project_backward(
    position: [f64; 3],
    raw_rotation: [f64; 4],
    scales: [f64; 3],
    camera: &Camera,
    grad: &SplatGrad,
) -> GeometryGrad {
    let qn = raw_rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
    let q = raw_rotation.map(|v| v / qn);
    let rcam = camera.rotation_matrix();
    let pc = camera.world_to_camera(position);
    let (x, y, z) = (pc.x, pc.y, pc.z);
    let (fx, fy) = (camera.fx, camera.fy);
    let jac = projection_jacobian(camera, &pc);
    let t = jac * rcam;
    let rq = quat_to_matrix(q);
    let m = rq * Matrix3::from_diagonal(&Vector3::from(scales));
    let cov3 = m * m.transpose();
    let cov2 = t * cov3 * t.transpose();
    let (a, b, c) = (cov2[(0, 0)] + LOW_PASS, cov2[(0, 1)], cov2[(1, 1)] + LOW_PASS);
    let det = a * c - b * b;
    let det2 = det * det;
    let [ga, gb, gc] = grad.conic;

    // conic = inverse(cov2)
    let d_a = (-c * c * ga + b * c * gb - b * b * gc) / det2;
    let d_b = (2.0 * b * c * ga - (a * c + b * b) * gb + 2.0 * a * b * gc) / det2;
    let d_c = (-b * b * ga + a * b * gb - a * a * gc) / det2;

    // cov2 = T cov3 T^T
    let t0 = t.row(0).transpose();
    let t1 = t.row(1).transpose();
    let g_cov3 = t0 * t0.transpose() * d_a + t0 * t1.transpose() * d_b + t1 * t1.transpose() * d_c;
    let s0 = cov3 * t0;
    let s1 = cov3 * t1;
    let dt0 = s0 * (2.0 * d_a) + s1 * d_b;
    let dt1 = s0 * d_b + s1 * (2.0 * d_c);

    // T = J R_cam
    let dj0 = rcam * dt0;
    let dj1 = rcam * dt1;
    let iz = 1.0 / z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut dp = Vector3::zeros();
    dp.x += dj0[2] * (-fx * iz2);
    dp.y += dj1[2] * (-fy * iz2);
    dp.z += dj0[0] * (-fx * iz2) + dj0[2] * (2.0 * fx * x * iz3) + dj1[1] * (-fy * iz2)
        + dj1[2] * (2.0 * fy * y * iz3);

    // mean2d
    let [gmx, gmy] = grad.mean2d;
    dp.x += gmx * fx * iz;
    dp.y += gmy * fy * iz;
    dp.z += -gmx * fx * x * iz2 - gmy * fy * y * iz2;
    let d_pos = rcam.transpose() * dp;

    // cov3 = M M^T, M = R_q diag(s)
    let d_m = (g_cov3 + g_cov3.transpose()) * m;
    let mut d_log_scale = [0.0; 3];
    let mut d_rq = Matrix3::zeros();
    for i in 0..3 {
        let mut ds = 0.0;
        for r in 0..3 {
            ds += rq[(r, i)] * d_m[(r, i)];
            d_rq[(r, i)] = d_m[(r, i)] * scales[i];
        }
        d_log_scale[i] = ds * scales[i];
    }

    let dq_unit = quat_matrix_backward(q, &d_rq);
    let dot: f64 = dq_unit.iter().zip(&q).map(|(g, v)| g * v).sum();
    let d_rotation = [0, 1, 2, 3].map(|k| (dq_unit[k] - q[k] * dot) / qn);

    GeometryGrad {
        position: [d_pos.x, d_pos.y, d_pos.z],
        rotation: d_rotation,
        log_scale: d_log_scale,
    }
}

/// Gradient of [`quat_to_matrix`] with respect to a unit quaternion.
fn quat_matrix_backward(q: [f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = q;
    let dw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]);
    let dx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let dy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let dz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    [dw, dx, dy, dz]
}
