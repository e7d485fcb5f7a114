use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

/// Near plane shared by culling and label voting.
pub const NEAR_PLANE: f64 = 0.01;

/// Pinhole camera with OpenCV axes (x right, y down, z forward).
///
/// Pixel `(x, y)` is centered at image coordinate `(x, y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Camera {
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        focal: (f64, f64),
        principal: (f64, f64),
        resolution: (u32, u32),
    ) -> Result<Self> {
        let cam = Self {
            rotation,
            translation,
            fx: focal.0,
            fy: focal.1,
            cx: principal.0,
            cy: principal.1,
            width: resolution.0,
            height: resolution.1,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`, with `up` pointing up in the image.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        resolution: (u32, u32),
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(Error::invalid("look_at: up is parallel to view direction"));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        let (w, h) = resolution;
        Self::new(
            rotation,
            translation,
            (focal, focal),
            ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0),
            resolution,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera resolution must be at least 1x1"));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("camera focal lengths must be positive"));
        }
        let err = (self.rotation * self.rotation.transpose() - Matrix3::identity()).abs().max();
        if !(err <= 1e-6) {
            return Err(Error::invalid(format!(
                "camera rotation is not orthonormal (error {err:.3e})"
            )));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Perspective projection of a camera-space point.
    pub fn project_camera_point(&self, t: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(
            self.fx * t.x / t.z + self.cx,
            self.fy * t.y / t.z + self.cy,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_puts_target_on_axis() {
        let cam = Camera::look_at(
            Vector3::new(3.0, -4.0, 2.0),
            Vector3::new(0.1, 0.2, 0.3),
            Vector3::z(),
            50.0,
            (41, 31),
        )
        .unwrap();
        let t = cam.to_camera(&Vector3::new(0.1, 0.2, 0.3));
        assert!(t.x.abs() < 1e-12 && t.y.abs() < 1e-12 && t.z > 0.0);
        let uv = cam.project_camera_point(&t);
        assert!((uv.x - 20.0).abs() < 1e-9 && (uv.y - 15.0).abs() < 1e-9);
        assert!((cam.center() - Vector3::new(3.0, -4.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn world_up_maps_to_image_up() {
        let cam = Camera::look_at(
            Vector3::new(0.0, -5.0, 0.0),
            Vector3::zeros(),
            Vector3::z(),
            10.0,
            (8, 8),
        )
        .unwrap();
        let above = cam.to_camera(&Vector3::new(0.0, 0.0, 1.0));
        assert!(above.y < 0.0);
    }

    #[test]
    fn rejects_bad_intrinsics() {
        let r = Matrix3::identity();
        let t = Vector3::zeros();
        assert!(Camera::new(r, t, (0.0, 1.0), (0.0, 0.0), (4, 4)).is_err());
        assert!(Camera::new(r, t, (1.0, 1.0), (0.0, 0.0), (0, 4)).is_err());
        assert!(Camera::new(r * 2.0, t, (1.0, 1.0), (0.0, 0.0), (4, 4)).is_err());
    }
}
