//! Front-to-back blending of one pixel: color, per-object occupancy and the
//! instance label all read the same transmittance sequence.

use crate::scene::{eval_conic, ProjectedGaussian};

/// Upper bound on a single splat's alpha.
pub const ALPHA_MAX: f64 = 0.99;
/// Splats below this alpha are skipped entirely.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Blending stops once transmittance falls below this value.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
/// Instance label falls back to background below this peak α*.
pub const LABEL_MIN_WEIGHT: f64 = 0.1;

/// Which per-splat weight decides the instance label of a pixel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InstanceMapMode {
    /// argmax of α* = σ*·G over blended splats.
    #[default]
    InstanceOpacity,
    /// argmax of the rendering weight α·T (single-opacity baseline). Only
    /// empty rays fall back to background.
    RenderingWeight,
}

/// Per-request compositing settings.
#[derive(Clone, Debug)]
pub struct CompositeContext<'a> {
    pub background: [f64; 3],
    /// Occupancy slot for each label (indexed by label), `None` if not requested.
    pub slot_of_label: &'a [Option<usize>],
    pub slots: usize,
    pub label_mode: Option<InstanceMapMode>,
    pub early_termination: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PixelResult {
    pub color: [f64; 3],
    /// Occupancy per requested object, in slot order.
    pub occupancy: Vec<f64>,
    pub final_transmittance: f64,
    pub label: u32,
    pub contributors: u32,
    /// One past the list position of the last blended splat.
    pub end: u32,
}

/// A blended splat as seen by one pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlendRecord {
    pub source_index: usize,
    pub gaussian: f64,
    pub alpha: f64,
    /// Transmittance in front of the splat.
    pub transmittance: f64,
}

/// Composites the depth-ordered `splats` at pixel `(x, y)`.
///
/// Splats whose box excludes the pixel or whose alpha is below
/// [`ALPHA_MIN`] are skipped; `trace`, when given, receives every blended
/// splat with the transmittance used for both branches.
pub fn composite_pixel(
    splats: &[&ProjectedGaussian],
    x: u32,
    y: u32,
    ctx: &CompositeContext<'_>,
    mut trace: Option<&mut Vec<BlendRecord>>,
) -> PixelResult {
    let (px, py) = (x as f64, y as f64);
    let mut color = [0.0; 3];
    let mut occupancy = vec![0.0; ctx.slots];
    let mut t = 1.0;
    let mut contributors = 0;
    let mut end = 0;
    let mut best_weight = f64::NEG_INFINITY;
    let mut best_label = 0;

    for (pos, s) in splats.iter().enumerate() {
        if !s.bbox.contains(x, y) {
            continue;
        }
        let g = eval_conic(&s.conic, &s.mean2d, px, py);
        let alpha = (s.opacity * g).min(ALPHA_MAX);
        if alpha < ALPHA_MIN {
            continue;
        }
        let w = alpha * t;
        for ch in 0..3 {
            color[ch] += s.color[ch] * w;
        }
        if let Some(Some(slot)) = ctx.slot_of_label.get(s.label as usize) {
            occupancy[*slot] += s.instance_opacity * g * t;
        }
        if let Some(mode) = ctx.label_mode {
            let weight = match mode {
                InstanceMapMode::InstanceOpacity => s.instance_opacity * g,
                InstanceMapMode::RenderingWeight => w,
            };
            if weight > best_weight {
                best_weight = weight;
                best_label = s.label;
            }
        }
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(BlendRecord {
                source_index: s.source_index,
                gaussian: g,
                alpha,
                transmittance: t,
            });
        }
        contributors += 1;
        end = pos as u32 + 1;
        t *= 1.0 - alpha;
        if ctx.early_termination && t < TRANSMITTANCE_MIN {
            break;
        }
    }
    for ch in 0..3 {
        color[ch] += ctx.background[ch] * t;
    }
    let floor = match ctx.label_mode {
        Some(InstanceMapMode::RenderingWeight) => 0.0,
        _ => LABEL_MIN_WEIGHT,
    };
    let label = if best_weight > 0.0 && best_weight >= floor { best_label } else { 0 };
    PixelResult {
        color,
        occupancy,
        final_transmittance: t,
        label,
        contributors,
        end,
    }
}
