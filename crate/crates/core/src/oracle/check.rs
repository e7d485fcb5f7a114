//! Analytic-versus-numeric gradient comparison on a random linear loss.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fd::{finite_diff_gradient, gradients_agree, ParamRef};
use super::render::{oracle_render_with, oracle_replay, ActiveSet, OracleOptions};
use crate::backward::{backward, Upstream};
use crate::error::Result;
use crate::raster::{render_with_state, RenderRequest};
use crate::scene::{Camera, GaussianCloud, ImageBuffer};

/// Which output the loss reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    /// L = Σ w·C.
    Color,
    /// L = Σ_j Σ u_j·S_j, differentiated with Tᵢ held at its forward value.
    Occupancy,
}

#[derive(Clone, Debug, Default)]
pub struct GradientCheck {
    pub compared: usize,
    /// Parameters whose analytic gradient exceeds the absolute floor.
    pub nonzero: usize,
    /// `(parameter, analytic, numeric)` for every disagreement.
    pub mismatches: Vec<(ParamRef, f64, f64)>,
    pub max_abs_error: f64,
}

impl GradientCheck {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

fn random_image(w: u32, h: u32, channels: u8, rng: &mut ChaCha8Rng) -> ImageBuffer {
    let n = w as usize * h as usize * channels as usize;
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    ImageBuffer::from_data(w, h, channels, data).expect("sized to fit")
}

fn dot(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
}

/// Compares the analytic gradient of a random linear functional of one
/// branch with central differences of step `h`, replaying the forward
/// pass's blend lists so that skip and termination decisions stay fixed.
pub fn check_gradients(
    cloud: &GaussianCloud,
    cam: &Camera,
    branch: Branch,
    seed: u64,
    h: f64,
    rel: f64,
    abs: f64,
) -> Result<GradientCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<u32> = match branch {
        Branch::Color => Vec::new(),
        Branch::Occupancy => (1..=cloud.object_count()).collect(),
    };
    let background = [0.2, 0.1, 0.3];
    let weights_c = random_image(cam.width, cam.height, 3, &mut rng);
    let weights_s: BTreeMap<u32, ImageBuffer> = ids
        .iter()
        .map(|&j| (j, random_image(cam.width, cam.height, 1, &mut rng)))
        .collect();

    let req = RenderRequest::new(cam.clone())
        .with_background(background)
        .with_objects(ids.iter().copied());
    let (_, state) = render_with_state(cloud, &req)?;
    let up = match branch {
        Branch::Color => Upstream {
            color: Some(&weights_c),
            occupancy: None,
        },
        Branch::Occupancy => Upstream {
            color: None,
            occupancy: Some(&weights_s),
        },
    };
    let analytic = backward(cloud, &state, &up)?.grads;

    let mut active = ActiveSet {
        width: 0,
        height: 0,
        pixels: Vec::new(),
    };
    let opts = OracleOptions {
        background,
        terminate: true,
    };
    oracle_render_with(cloud, cam, &ids, &opts, Some(&mut active))?;
    let freeze = branch == Branch::Occupancy;
    let loss = |c: &GaussianCloud| -> Result<f64> {
        let out = oracle_replay(c, cam, &ids, &active, background, freeze)?;
        Ok(match branch {
            Branch::Color => dot(&out.color, &weights_c),
            Branch::Occupancy => ids.iter().map(|j| dot(&out.occupancy[j], &weights_s[j])).sum(),
        })
    };
    let params = ParamRef::all(cloud);
    let numeric = finite_diff_gradient(loss, cloud, &params, h)?;

    let mut report = GradientCheck::default();
    for (p, n) in params.iter().zip(numeric) {
        let a = p.read(&analytic);
        report.compared += 1;
        if a.abs() > abs {
            report.nonzero += 1;
        }
        report.max_abs_error = report.max_abs_error.max((a - n).abs());
        if !gradients_agree(a, n, rel, abs) {
            report.mismatches.push((*p, a, n));
        }
    }
    Ok(report)
}
