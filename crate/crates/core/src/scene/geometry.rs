//! Covariance construction, EWA projection and 2D Gaussian evaluation.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use super::camera::{Camera, NEAR_PLANE};
use super::cloud::{normalize_quat, GaussianCloud};
use super::sh::eval_sh_color;

/// Dilation added to the diagonal of every screen-space covariance (px²).
pub const COV2D_DILATION: f64 = 0.3;

/// Rotation matrix of a (not necessarily normalized) `(w, x, y, z)` quaternion.
pub fn quat_to_rotation(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = normalize_quat(q);
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

/// Σ = R diag(exp(2·log_scale)) Rᵀ.
pub fn build_covariance(rotation: [f64; 4], log_scale: &Vector3<f64>) -> Matrix3<f64> {
    let r = quat_to_rotation(rotation);
    let m = r * Matrix3::from_diagonal(&log_scale.map(f64::exp));
    m * m.transpose()
}

/// Jacobian of the perspective projection at camera-space point `t`.
pub fn projection_jacobian(cam: &Camera, t: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / t.z;
    Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * t.x * iz * iz,
        0.0,
        cam.fy * iz,
        -cam.fy * t.y * iz * iz,
    )
}

/// Screen-space covariance J W Σ Wᵀ Jᵀ before dilation.
pub fn project_covariance(cam: &Camera, t: &Vector3<f64>, cov3: &Matrix3<f64>) -> Matrix2<f64> {
    let jw = projection_jacobian(cam, t) * cam.rotation;
    jw * cov3 * jw.transpose()
}

/// Inclusive pixel rectangle, already clipped to the image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelBox {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

/// A primitive splatted into one view.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedGaussian {
    pub source_index: usize,
    pub mean2d: Vector2<f64>,
    /// Dilated screen covariance Σ′.
    pub cov2d: Matrix2<f64>,
    /// Upper triangle `(a, b, c)` of Σ′⁻¹.
    pub conic: [f64; 3],
    pub depth: f64,
    /// 3-sigma extent of the major axis, in whole pixels.
    pub screen_radius: f64,
    /// Pixels the splat may touch: the 3-sigma box clipped to the image.
    pub bbox: PixelBox,
    pub color: [f64; 3],
    pub opacity: f64,
    /// σ*, or 0 for clouds without an instance field.
    pub instance_opacity: f64,
    pub label: u32,
}

/// 3-sigma radius and clipped pixel box for a splat, `None` if off-screen.
pub fn screen_extent(cam: &Camera, mean2d: &Vector2<f64>, cov2d: &Matrix2<f64>) -> Option<(f64, PixelBox)> {
    let (a, b, c) = (cov2d[(0, 0)], cov2d[(0, 1)], cov2d[(1, 1)]);
    let det = a * c - b * b;
    let mid = 0.5 * (a + c);
    let lambda = mid + (mid * mid - det).max(0.1).sqrt();
    let radius = (3.0 * lambda.sqrt()).ceil();
    let (w, h) = (cam.width as f64, cam.height as f64);
    let x0 = (mean2d.x - radius).ceil().max(0.0);
    let x1 = (mean2d.x + radius).floor().min(w - 1.0);
    let y0 = (mean2d.y - radius).ceil().max(0.0);
    let y1 = (mean2d.y + radius).floor().min(h - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    Some((
        radius,
        PixelBox {
            x0: x0 as u32,
            y0: y0 as u32,
            x1: x1 as u32,
            y1: y1 as u32,
        },
    ))
}

/// Projects primitive `i` into `cam`; `None` means culled (behind the near
/// plane, degenerate, or entirely outside the image).
pub fn project_gaussian(cloud: &GaussianCloud, i: usize, cam: &Camera) -> Option<ProjectedGaussian> {
    let mu = cloud.positions[i];
    let t = cam.to_camera(&mu);
    if !(t.z > NEAR_PLANE) {
        return None;
    }
    let cov3 = build_covariance(cloud.rotations[i], &cloud.log_scales[i]);
    let cov2d = project_covariance(cam, &t, &cov3) + Matrix2::identity() * COV2D_DILATION;
    let det = cov2d.determinant();
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = [cov2d[(1, 1)] / det, -cov2d[(0, 1)] / det, cov2d[(0, 0)] / det];
    let mean2d = cam.project_camera_point(&t);
    let (screen_radius, bbox) = screen_extent(cam, &mean2d, &cov2d)?;
    let view_dir = (mu - cam.center()).normalize();
    let color = eval_sh_color(cloud.sh_degree, cloud.sh(i), &view_dir);
    Some(ProjectedGaussian {
        source_index: i,
        mean2d,
        cov2d,
        conic,
        depth: t.z,
        screen_radius,
        bbox,
        color,
        opacity: cloud.opacity(i),
        instance_opacity: cloud.instance_opacity(i).unwrap_or(0.0),
        label: cloud.label(i).unwrap_or(0),
    })
}

/// exp(−½ dᵀ Σ′⁻¹ d) with d = v − mean2d.
pub fn eval_gaussian_2d(pg: &ProjectedGaussian, v: Vector2<f64>) -> f64 {
    eval_conic(&pg.conic, &pg.mean2d, v.x, v.y)
}

#[inline]
pub(crate) fn eval_conic(conic: &[f64; 3], mean: &Vector2<f64>, x: f64, y: f64) -> f64 {
    let dx = x - mean.x;
    let dy = y - mean.y;
    let power = -0.5 * (conic[0] * dx * dx + conic[2] * dy * dy) - conic[1] * dx * dy;
    power.exp()
}
