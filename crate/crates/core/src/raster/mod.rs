//! Tile-based forward rasterizer.
//!
//! One compositing pass produces the color image, the occupancy map of
//! every requested object and the instance label map. Occupancy reuses the
//! color branch's transmittance and 2D Gaussian values, so
//!
//! ```text
//! C(v)   = Σ cᵢ αᵢ Tᵢ + bg·T_final        αᵢ  = min(σᵢ Gᵢ(v), 0.99)
//! S_j(v) = Σ_{lᵢ = j} σ*ᵢ Gᵢ(v) Tᵢ         Tᵢ₊₁ = Tᵢ (1 − αᵢ)
//! ```
//!
//! Occupancy values are reported unclamped.

mod binning;
mod composite;
mod render;

pub use binning::{bin_and_sort, SortedSplatList, DEFAULT_TILE_SIZE};
pub use composite::{
    composite_pixel, BlendRecord, CompositeContext, InstanceMapMode, PixelResult, ALPHA_MAX,
    ALPHA_MIN, LABEL_MIN_WEIGHT, TRANSMITTANCE_MIN,
};
pub use render::{render, render_with_state, ForwardState, RenderOutput, RenderRequest, RenderStats};
pub(crate) use render::{check_request, occupancy_slots};
