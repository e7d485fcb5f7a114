use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::scene::GaussianCloud;

/// Per-primitive gradients, shaped like the cloud's parameter arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBuffer {
    pub positions: Vec<Vector3<f64>>,
    pub sh_coeffs: Vec<[f64; 3]>,
    pub opacity_logits: Vec<f64>,
    pub instance_opacity_logits: Vec<f64>,
    pub rotations: Vec<[f64; 4]>,
    pub log_scales: Vec<Vector3<f64>>,
}

impl GradientBuffer {
    pub fn zeros(cloud: &GaussianCloud) -> Self {
        let n = cloud.len();
        Self {
            positions: vec![Vector3::zeros(); n],
            sh_coeffs: vec![[0.0; 3]; n * cloud.sh_count()],
            opacity_logits: vec![0.0; n],
            instance_opacity_logits: vec![0.0; n],
            rotations: vec![[0.0; 4]; n],
            log_scales: vec![Vector3::zeros(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.positions.len() == other.positions.len()
            && self.sh_coeffs.len() == other.sh_coeffs.len()
            && self.opacity_logits.len() == other.opacity_logits.len()
            && self.instance_opacity_logits.len() == other.instance_opacity_logits.len()
            && self.rotations.len() == other.rotations.len()
            && self.log_scales.len() == other.log_scales.len()
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::shape("gradient buffers differ in shape"));
        }
        for (a, b) in self.positions.iter_mut().zip(&other.positions) {
            *a += b;
        }
        for (a, b) in self.sh_coeffs.iter_mut().zip(&other.sh_coeffs) {
            for ch in 0..3 {
                a[ch] += b[ch];
            }
        }
        for (a, b) in self.opacity_logits.iter_mut().zip(&other.opacity_logits) {
            *a += b;
        }
        for (a, b) in self
            .instance_opacity_logits
            .iter_mut()
            .zip(&other.instance_opacity_logits)
        {
            *a += b;
        }
        for (a, b) in self.rotations.iter_mut().zip(&other.rotations) {
            for k in 0..4 {
                a[k] += b[k];
            }
        }
        for (a, b) in self.log_scales.iter_mut().zip(&other.log_scales) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.positions.iter_mut().for_each(|v| *v *= factor);
        self.sh_coeffs
            .iter_mut()
            .for_each(|c| c.iter_mut().for_each(|v| *v *= factor));
        self.opacity_logits.iter_mut().for_each(|v| *v *= factor);
        self.instance_opacity_logits.iter_mut().for_each(|v| *v *= factor);
        self.rotations
            .iter_mut()
            .for_each(|q| q.iter_mut().for_each(|v| *v *= factor));
        self.log_scales.iter_mut().for_each(|v| *v *= factor);
    }

    /// Every scalar, in a fixed order (positions, sh, opacity, instance
    /// opacity, rotations, scales).
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.positions
            .iter()
            .flat_map(|v| v.iter().copied())
            .chain(self.sh_coeffs.iter().flat_map(|c| c.iter().copied()))
            .chain(self.opacity_logits.iter().copied())
            .chain(self.instance_opacity_logits.iter().copied())
            .chain(self.rotations.iter().flat_map(|q| q.iter().copied()))
            .chain(self.log_scales.iter().flat_map(|v| v.iter().copied()))
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }
}

/// Elementwise sum of two gradient buffers; the shared geometry entries
/// receive both branches' contributions.
pub fn accumulate_geometry(a: &GradientBuffer, b: &GradientBuffer) -> Result<GradientBuffer> {
    let mut out = a.clone();
    out.add_assign(b)?;
    Ok(out)
}
