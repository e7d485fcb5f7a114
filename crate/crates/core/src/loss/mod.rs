//! Photometric losses, the per-object occupancy cross-entropy and the
//! combined training objective.

mod ssim;

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;

pub use ssim::{gaussian_taps, ssim, ssim_loss, ssim_loss_grad, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};

use crate::error::{Error, Result};
use crate::raster::{render, RenderRequest};
use crate::scene::{BinaryMask, Camera, GaussianCloud, IdMap, ImageBuffer};

/// Clamp applied to occupancy before taking logs.
pub const CE_EPSILON: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_ssim: f64,
    pub lambda_o: f64,
    /// Objects sampled per step.
    pub m_objects: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_ssim: 0.2,
            lambda_o: 0.1,
            m_objects: 3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_ssim >= 0.0 && self.lambda_o >= 0.0) {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        if self.m_objects == 0 {
            return Err(Error::invalid("m_objects must be at least 1"));
        }
        Ok(())
    }
}

/// Mean absolute difference.
pub fn l1_loss(rendered: &ImageBuffer, target: &ImageBuffer) -> Result<f64> {
    rendered.ensure_same_shape(target)?;
    let n = rendered.data.len().max(1) as f64;
    Ok(rendered.data.iter().zip(&target.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / n)
}

/// L1 loss and its (sub)gradient, taking 0 where the images agree.
pub fn l1_loss_grad(rendered: &ImageBuffer, target: &ImageBuffer) -> Result<(f64, ImageBuffer)> {
    let value = l1_loss(rendered, target)?;
    let n = rendered.data.len().max(1) as f64;
    let mut g = ImageBuffer::new(rendered.width, rendered.height, rendered.channels);
    for ((o, a), b) in g.data.iter_mut().zip(&rendered.data).zip(&target.data) {
        *o = if a > b {
            1.0 / n
        } else if a < b {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok((value, g))
}

fn check_mask(s: &ImageBuffer, b: &BinaryMask) -> Result<()> {
    if s.channels != 1 || s.width != b.width || s.height != b.height {
        return Err(Error::shape(format!(
            "occupancy {}x{}x{} vs mask {}x{}",
            s.width, s.height, s.channels, b.width, b.height
        )));
    }
    Ok(())
}

/// Mean binary cross-entropy of occupancy `s` against mask `b`.
pub fn object_ce_loss(s: &ImageBuffer, b: &BinaryMask) -> Result<f64> {
    object_ce_loss_grad(s, b).map(|(v, _)| v)
}

/// Cross-entropy and its gradient with respect to `s`. Pixels whose
/// occupancy lies outside the clamp range get zero gradient.
pub fn object_ce_loss_grad(s: &ImageBuffer, b: &BinaryMask) -> Result<(f64, ImageBuffer)> {
    check_mask(s, b)?;
    let n = s.data.len().max(1) as f64;
    let mut g = ImageBuffer::new(s.width, s.height, 1);
    let mut total = 0.0;
    for ((o, &v), &bit) in g.data.iter_mut().zip(&s.data).zip(&b.bits) {
        let c = v.clamp(CE_EPSILON, 1.0 - CE_EPSILON);
        let target = if bit { 1.0 } else { 0.0 };
        total -= target * c.ln() + (1.0 - target) * (1.0 - c).ln();
        if v > CE_EPSILON && v < 1.0 - CE_EPSILON {
            *o = (c - target) / (c * (1.0 - c)) / n;
        }
    }
    Ok((total / n, g))
}

/// Draws up to `m` distinct object ids present in `id_map`, uniformly
/// without replacement; returned in increasing order.
pub fn sample_objects<R: Rng + ?Sized>(id_map: &IdMap, m: usize, rng: &mut R) -> Vec<u32> {
    let present = id_map.object_ids();
    if present.len() <= m {
        return present;
    }
    let mut picked: Vec<u32> = sample(rng, present.len(), m).into_iter().map(|k| present[k]).collect();
    picked.sort_unstable();
    picked
}

/// Mean cross-entropy over the sampled objects, with the per-object
/// occupancy gradients. Zero with no gradients when `ids` is empty.
pub fn object_loss_grad(
    occupancy: &BTreeMap<u32, ImageBuffer>,
    id_map: &IdMap,
    ids: &[u32],
) -> Result<(f64, BTreeMap<u32, ImageBuffer>)> {
    let mut grads = BTreeMap::new();
    if ids.is_empty() {
        return Ok((0.0, grads));
    }
    let scale = 1.0 / ids.len() as f64;
    let mut total = 0.0;
    for &j in ids {
        let s = occupancy
            .get(&j)
            .ok_or_else(|| Error::invalid(format!("occupancy of object {j} was not rendered")))?;
        let (v, mut g) = object_ce_loss_grad(s, &BinaryMask::from_ids(id_map, j))?;
        total += v;
        g.data.iter_mut().for_each(|x| *x *= scale);
        grads.insert(j, g);
    }
    Ok((total * scale, grads))
}

/// Samples up to `m` objects of the view, renders their occupancy and
/// averages their cross-entropy.
pub fn random_object_loss<R: Rng + ?Sized>(
    cloud: &GaussianCloud,
    cam: &Camera,
    id_map: &IdMap,
    m: usize,
    rng: &mut R,
) -> Result<f64> {
    let ids = sample_objects(id_map, m, rng);
    if ids.is_empty() {
        return Ok(0.0);
    }
    let out = render(cloud, &RenderRequest::new(cam.clone()).with_objects(ids.iter().copied()))?;
    object_loss_grad(&out.occupancy, id_map, &ids).map(|(v, _)| v)
}

/// L1 + λ_SSIM·SSIM, plus λ_o·L_obj when the object term is present.
pub fn total_loss(l1: f64, ssim: f64, obj: Option<f64>, weights: &LossWeights) -> f64 {
    let base = l1 + weights.lambda_ssim * ssim;
    match obj {
        Some(o) => base + weights.lambda_o * o,
        None => base,
    }
}
