//! Gaussian splatting with a second, instance-only opacity per primitive.
//!
//! Every primitive carries the usual radiance opacity σ plus an instance
//! opacity σ* and an object label. One rasterization pass yields the color
//! image, per-object occupancy maps and an instance label map; the two
//! opacities are trained by separate gradient paths so that mask losses
//! cannot disturb appearance.

pub mod backward;
pub mod error;
pub mod io;
pub mod labeling;
pub mod loss;
pub mod oracle;
pub mod raster;
pub mod scene;
pub mod segquery;
pub mod train;

pub use error::{Error, Result};
