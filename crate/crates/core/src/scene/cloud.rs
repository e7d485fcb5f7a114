use nalgebra::Vector3;

use super::sh::sh_coeff_count;
use crate::error::{Error, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Object identity attached to every primitive once instance learning starts.
///
/// Absent during the first training stage; `begin_stage2` creates it.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceField {
    /// Instance opacity logits, σ* = sigmoid(logit).
    pub opacity_logits: Vec<f64>,
    /// Object label per primitive, 0 = background.
    pub labels: Vec<u32>,
    /// Number of objects C in the scene; labels live in `0..=object_count`.
    pub object_count: u32,
}

/// Structure-of-arrays Gaussian scene.
///
/// Rotations are stored as raw `(w, x, y, z)` quaternions and normalized by
/// the optimizer after every step; geometry code re-normalizes on read.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCloud {
    pub sh_degree: u8,
    pub positions: Vec<Vector3<f64>>,
    /// `len() * sh_coeff_count(sh_degree)` RGB triples, primitive-major.
    pub sh_coeffs: Vec<[f64; 3]>,
    pub opacity_logits: Vec<f64>,
    pub rotations: Vec<[f64; 4]>,
    pub log_scales: Vec<Vector3<f64>>,
    pub instance: Option<InstanceField>,
}

/// One primitive's parameters, used to build clouds incrementally.
#[derive(Clone, Debug, PartialEq)]
pub struct Primitive {
    pub position: Vector3<f64>,
    pub sh: Vec<[f64; 3]>,
    pub opacity_logit: f64,
    pub rotation: [f64; 4],
    pub log_scale: Vector3<f64>,
}

impl GaussianCloud {
    pub fn new(sh_degree: u8) -> Self {
        assert!(sh_degree <= 3, "sh degree must be in 0..=3");
        Self {
            sh_degree,
            positions: Vec::new(),
            sh_coeffs: Vec::new(),
            opacity_logits: Vec::new(),
            rotations: Vec::new(),
            log_scales: Vec::new(),
            instance: None,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn sh_count(&self) -> usize {
        sh_coeff_count(self.sh_degree)
    }

    pub fn sh(&self, i: usize) -> &[[f64; 3]] {
        let k = self.sh_count();
        &self.sh_coeffs[i * k..(i + 1) * k]
    }

    pub fn sh_mut(&mut self, i: usize) -> &mut [[f64; 3]] {
        let k = self.sh_count();
        &mut self.sh_coeffs[i * k..(i + 1) * k]
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }

    pub fn instance_opacity(&self, i: usize) -> Option<f64> {
        self.instance
            .as_ref()
            .map(|inst| sigmoid(inst.opacity_logits[i]))
    }

    pub fn label(&self, i: usize) -> Option<u32> {
        self.instance.as_ref().map(|inst| inst.labels[i])
    }

    pub fn object_count(&self) -> u32 {
        self.instance.as_ref().map_or(0, |inst| inst.object_count)
    }

    /// Appends a primitive. Clouds with an instance field get label 0 and
    /// an instance opacity equal to the radiance opacity.
    pub fn push(&mut self, p: Primitive) {
        assert_eq!(p.sh.len(), self.sh_count(), "sh coefficient count");
        self.positions.push(p.position);
        self.sh_coeffs.extend_from_slice(&p.sh);
        self.opacity_logits.push(p.opacity_logit);
        self.rotations.push(p.rotation);
        self.log_scales.push(p.log_scale);
        if let Some(inst) = self.instance.as_mut() {
            inst.opacity_logits.push(p.opacity_logit);
            inst.labels.push(0);
        }
    }

    pub fn primitive(&self, i: usize) -> Primitive {
        Primitive {
            position: self.positions[i],
            sh: self.sh(i).to_vec(),
            opacity_logit: self.opacity_logits[i],
            rotation: self.rotations[i],
            log_scale: self.log_scales[i],
        }
    }

    /// Builds a new cloud from the primitives at `indices`, in that order.
    /// Indices may repeat.
    pub fn gather(&self, indices: &[usize]) -> GaussianCloud {
        let k = self.sh_count();
        let mut out = GaussianCloud::new(self.sh_degree);
        out.positions = indices.iter().map(|&i| self.positions[i]).collect();
        out.sh_coeffs = indices
            .iter()
            .flat_map(|&i| self.sh_coeffs[i * k..(i + 1) * k].iter().copied())
            .collect();
        out.opacity_logits = indices.iter().map(|&i| self.opacity_logits[i]).collect();
        out.rotations = indices.iter().map(|&i| self.rotations[i]).collect();
        out.log_scales = indices.iter().map(|&i| self.log_scales[i]).collect();
        out.instance = self.instance.as_ref().map(|inst| InstanceField {
            opacity_logits: indices.iter().map(|&i| inst.opacity_logits[i]).collect(),
            labels: indices.iter().map(|&i| inst.labels[i]).collect(),
            object_count: inst.object_count,
        });
        out
    }

    /// Normalizes every quaternion to unit length.
    pub fn normalize_rotations(&mut self) {
        for q in &mut self.rotations {
            *q = normalize_quat(*q);
        }
    }

    /// Checks array lengths, label range and quaternion norms.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let k = self.sh_count();
        if self.sh_coeffs.len() != n * k
            || self.opacity_logits.len() != n
            || self.rotations.len() != n
            || self.log_scales.len() != n
        {
            return Err(Error::shape("cloud arrays have different lengths"));
        }
        if let Some(inst) = &self.instance {
            if inst.opacity_logits.len() != n || inst.labels.len() != n {
                return Err(Error::shape("instance arrays have different lengths"));
            }
            if let Some(&bad) = inst.labels.iter().find(|&&l| l > inst.object_count) {
                return Err(Error::UnknownObject {
                    id: bad,
                    count: inst.object_count,
                });
            }
        }
        for (i, q) in self.rotations.iter().enumerate() {
            let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
            if !norm.is_finite() || norm == 0.0 {
                return Err(Error::NonFinite(format!("rotation of primitive {i}")));
            }
        }
        Ok(())
    }
}

pub fn normalize_quat(q: [f64; 4]) -> [f64; 4] {
    let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    if norm == 0.0 {
        return [1.0, 0.0, 0.0, 0.0];
    }
    q.map(|c| c / norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prim(x: f64) -> Primitive {
        Primitive {
            position: Vector3::new(x, 0.0, 0.0),
            sh: vec![[0.0; 3]],
            opacity_logit: 0.0,
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: Vector3::zeros(),
        }
    }

    #[test]
    fn sigmoid_logit_roundtrip() {
        for p in [1e-6, 0.01, 0.3, 0.5, 0.9, 0.999] {
            assert!((sigmoid(logit(p)) - p).abs() < 1e-12);
        }
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn gather_keeps_arrays_aligned() {
        let mut c = GaussianCloud::new(0);
        for x in 0..4 {
            c.push(prim(x as f64));
        }
        c.instance = Some(InstanceField {
            opacity_logits: vec![0.1, 0.2, 0.3, 0.4],
            labels: vec![0, 1, 2, 1],
            object_count: 2,
        });
        let g = c.gather(&[3, 1, 1]);
        assert_eq!(g.len(), 3);
        assert_eq!(g.positions[0].x, 3.0);
        assert_eq!(g.instance.as_ref().unwrap().labels, vec![1, 1, 1]);
        g.validate().unwrap();
    }

    #[test]
    fn validate_rejects_out_of_range_label() {
        let mut c = GaussianCloud::new(0);
        c.push(prim(0.0));
        c.instance = Some(InstanceField {
            opacity_logits: vec![0.0],
            labels: vec![5],
            object_count: 3,
        });
        assert!(matches!(
            c.validate(),
            Err(Error::UnknownObject { id: 5, count: 3 })
        ));
    }
}
