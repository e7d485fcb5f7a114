//! Central finite differences over individual cloud parameters.

use crate::backward::GradientBuffer;
use crate::error::{Error, Result};
use crate::scene::GaussianCloud;

/// One scalar parameter of a cloud.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamRef {
    Position { index: usize, axis: usize },
    Sh { index: usize, coeff: usize, channel: usize },
    OpacityLogit(usize),
    InstanceOpacityLogit(usize),
    /// Raw (unnormalized) quaternion component, `w, x, y, z` order.
    Rotation { index: usize, component: usize },
    LogScale { index: usize, axis: usize },
}

impl ParamRef {
    /// Every scalar parameter of `cloud`; instance logits only if present.
    pub fn all(cloud: &GaussianCloud) -> Vec<ParamRef> {
        let mut out = Vec::new();
        for i in 0..cloud.len() {
            out.extend(Self::of_primitive(cloud, i));
        }
        out
    }

    pub fn of_primitive(cloud: &GaussianCloud, index: usize) -> Vec<ParamRef> {
        let mut out = Vec::new();
        for axis in 0..3 {
            out.push(ParamRef::Position { index, axis });
        }
        for coeff in 0..cloud.sh_count() {
            for channel in 0..3 {
                out.push(ParamRef::Sh { index, coeff, channel });
            }
        }
        out.push(ParamRef::OpacityLogit(index));
        if cloud.instance.is_some() {
            out.push(ParamRef::InstanceOpacityLogit(index));
        }
        for component in 0..4 {
            out.push(ParamRef::Rotation { index, component });
        }
        for axis in 0..3 {
            out.push(ParamRef::LogScale { index, axis });
        }
        out
    }

    pub fn index(&self) -> usize {
        match *self {
            ParamRef::Position { index, .. }
            | ParamRef::Sh { index, .. }
            | ParamRef::Rotation { index, .. }
            | ParamRef::LogScale { index, .. } => index,
            ParamRef::OpacityLogit(index) | ParamRef::InstanceOpacityLogit(index) => index,
        }
    }

    fn slot<'a>(&self, cloud: &'a mut GaussianCloud) -> Result<&'a mut f64> {
        let n = cloud.len();
        if self.index() >= n {
            return Err(Error::invalid(format!("{self:?} is out of range for {n} primitives")));
        }
        let k = cloud.sh_count();
        Ok(match *self {
            ParamRef::Position { index, axis } => &mut cloud.positions[index][axis],
            ParamRef::Sh { index, coeff, channel } => &mut cloud.sh_coeffs[index * k + coeff][channel],
            ParamRef::OpacityLogit(index) => &mut cloud.opacity_logits[index],
            ParamRef::InstanceOpacityLogit(index) => match cloud.instance.as_mut() {
                Some(inst) => &mut inst.opacity_logits[index],
                None => return Err(Error::NoInstanceField),
            },
            ParamRef::Rotation { index, component } => &mut cloud.rotations[index][component],
            ParamRef::LogScale { index, axis } => &mut cloud.log_scales[index][axis],
        })
    }

    pub fn get(&self, cloud: &GaussianCloud) -> Result<f64> {
        let n = cloud.len();
        if self.index() >= n {
            return Err(Error::invalid(format!("{self:?} is out of range for {n} primitives")));
        }
        let k = cloud.sh_count();
        Ok(match *self {
            ParamRef::Position { index, axis } => cloud.positions[index][axis],
            ParamRef::Sh { index, coeff, channel } => cloud.sh_coeffs[index * k + coeff][channel],
            ParamRef::OpacityLogit(index) => cloud.opacity_logits[index],
            ParamRef::InstanceOpacityLogit(index) => match &cloud.instance {
                Some(inst) => inst.opacity_logits[index],
                None => return Err(Error::NoInstanceField),
            },
            ParamRef::Rotation { index, component } => cloud.rotations[index][component],
            ParamRef::LogScale { index, axis } => cloud.log_scales[index][axis],
        })
    }

    pub fn set(&self, cloud: &mut GaussianCloud, value: f64) -> Result<()> {
        *self.slot(cloud)? = value;
        Ok(())
    }

    /// The matching entry of an analytic gradient.
    pub fn read(&self, grads: &GradientBuffer) -> f64 {
        let k = if grads.is_empty() { 0 } else { grads.sh_coeffs.len() / grads.len() };
        match *self {
            ParamRef::Position { index, axis } => grads.positions[index][axis],
            ParamRef::Sh { index, coeff, channel } => grads.sh_coeffs[index * k + coeff][channel],
            ParamRef::OpacityLogit(index) => grads.opacity_logits[index],
            ParamRef::InstanceOpacityLogit(index) => grads.instance_opacity_logits[index],
            ParamRef::Rotation { index, component } => grads.rotations[index][component],
            ParamRef::LogScale { index, axis } => grads.log_scales[index][axis],
        }
    }
}

/// Estimates ∂loss/∂p for every `p` in `params` as
/// `(loss(p + h) − loss(p − h)) / 2h`.
pub fn finite_diff_gradient<F>(
    mut loss_fn: F,
    cloud: &GaussianCloud,
    params: &[ParamRef],
    h: f64,
) -> Result<Vec<f64>>
where
    F: FnMut(&GaussianCloud) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::invalid("step must be positive"));
    }
    let mut work = cloud.clone();
    let mut out = Vec::with_capacity(params.len());
    for p in params {
        let x0 = p.get(cloud)?;
        p.set(&mut work, x0 + h)?;
        let up = loss_fn(&work)?;
        p.set(&mut work, x0 - h)?;
        let down = loss_fn(&work)?;
        p.set(&mut work, x0)?;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("loss while perturbing {p:?}")));
        }
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// `|a − b| ≤ max(rel · max(|a|, |b|), abs)`.
pub fn gradients_agree(analytic: f64, numeric: f64, rel: f64, abs: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= (rel * analytic.abs().max(numeric.abs())).max(abs)
}
