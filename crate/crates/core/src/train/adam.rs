use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-15;

/// Moment estimates for one flat parameter array.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamGroup {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamGroup {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Keeps the moments of the `stride`-wide rows at `indices` (in that
    /// order) and appends `fresh` zero rows.
    pub fn remap(&mut self, indices: &[usize], fresh: usize, stride: usize) {
        let pick = |src: &[f64]| -> Vec<f64> {
            let mut out = Vec::with_capacity((indices.len() + fresh) * stride);
            for &i in indices {
                out.extend_from_slice(&src[i * stride..(i + 1) * stride]);
            }
            out.resize((indices.len() + fresh) * stride, 0.0);
            out
        };
        self.m = pick(&self.m);
        self.v = pick(&self.v);
    }
}

/// One Adam update of `params` in place. `lrs` yields the learning rate of
/// each entry. Non-finite gradients abort before anything changes.
pub fn adam_step_with(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamGroup,
    mut lrs: impl FnMut(usize) -> f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(Error::shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.len()
        )));
    }
    if let Some(k) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {k}")));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for (k, ((p, &g), (m, v))) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
        .enumerate()
    {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lrs(k) * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// [`adam_step_with`] with a single learning rate.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamGroup, lr: f64) -> Result<()> {
    adam_step_with(params, grads, state, |_| lr)
}

/// Exponential interpolation from `init` at step 0 to `fin` at `max_steps`.
pub fn exp_decay(init: f64, fin: f64, step: usize, max_steps: usize) -> f64 {
    let t = (step as f64 / max_steps.max(1) as f64).clamp(0.0, 1.0);
    (init.ln() * (1.0 - t) + fin.ln() * t).exp()
}
