//! Scene representation: Gaussian clouds, cameras, images and the geometric
//! transforms shared by forward and backward rendering.

mod camera;
mod cloud;
mod geometry;
mod image;
pub mod sh;

pub use camera::{Camera, NEAR_PLANE};
pub use cloud::{logit, normalize_quat, sigmoid, GaussianCloud, InstanceField, Primitive};
pub use geometry::{
    build_covariance, eval_gaussian_2d, project_covariance, project_gaussian, projection_jacobian,
    quat_to_rotation, screen_extent, PixelBox, ProjectedGaussian, COV2D_DILATION,
};
pub(crate) use geometry::eval_conic;
pub use image::{BinaryMask, IdMap, ImageBuffer};
pub use sh::{eval_sh_color, sh_coeff_count};
