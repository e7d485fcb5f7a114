//! Hand-derived gradients of the rasterizer.
//!
//! The color branch differentiates C through α = min(σG, 0.99) and the
//! transmittance chain; the occupancy branch differentiates
//! S_j = Σ σ*ᵢ Gᵢ Tᵢ with every Tᵢ held constant, so occupancy losses never
//! reach σ. Both branches meet at G, which carries their sum into the
//! screen-space mean and conic and from there into position, rotation and
//! scale.

mod buffer;

use std::collections::BTreeMap;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

pub use buffer::{accumulate_geometry, GradientBuffer};

use crate::error::{Error, Result};
use crate::raster::{
    check_request, occupancy_slots, render_with_state, ForwardState, RenderRequest, ALPHA_MAX,
    ALPHA_MIN,
};
use crate::scene::sh::{sh_basis_with_grad, sh_raw_color};
use crate::scene::{
    build_covariance, eval_conic, normalize_quat, projection_jacobian, quat_to_rotation, Camera,
    GaussianCloud, ImageBuffer, ProjectedGaussian,
};

/// Upstream gradients ∂L/∂C and ∂L/∂S_j for one view.
#[derive(Clone, Copy, Debug, Default)]
pub struct Upstream<'a> {
    pub color: Option<&'a ImageBuffer>,
    pub occupancy: Option<&'a BTreeMap<u32, ImageBuffer>>,
}

#[derive(Clone, Debug)]
pub struct BackwardOutput {
    pub grads: GradientBuffer,
    /// ∂L/∂(screen mean) per primitive, in pixels; zero where not visible.
    pub mean2d: Vec<Vector2<f64>>,
    pub visible: Vec<bool>,
}

/// Screen-space gradient of one splat.
#[derive(Clone, Copy, Debug, Default)]
struct Grad2d {
    mean: [f64; 2],
    conic: [f64; 3],
    color: [f64; 3],
    opacity: f64,
    instance_opacity: f64,
}

impl Grad2d {
    fn add(&mut self, o: &Grad2d) {
        for k in 0..2 {
            self.mean[k] += o.mean[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
        self.instance_opacity += o.instance_opacity;
    }
}

/// Gradient of a color loss, for a render with a black background.
pub fn backward_color(cloud: &GaussianCloud, cam: &Camera, upstream: &ImageBuffer) -> Result<GradientBuffer> {
    let (_, state) = render_with_state(cloud, &RenderRequest::new(cam.clone()))?;
    let up = Upstream {
        color: Some(upstream),
        occupancy: None,
    };
    Ok(backward(cloud, &state, &up)?.grads)
}

/// Gradient of an occupancy loss. Only σ*, position, rotation and scale
/// receive non-zero entries.
pub fn backward_occupancy(
    cloud: &GaussianCloud,
    cam: &Camera,
    upstream: &BTreeMap<u32, ImageBuffer>,
) -> Result<GradientBuffer> {
    let req = RenderRequest::new(cam.clone()).with_objects(upstream.keys().copied());
    let (_, state) = render_with_state(cloud, &req)?;
    let up = Upstream {
        color: None,
        occupancy: Some(upstream),
    };
    Ok(backward(cloud, &state, &up)?.grads)
}

fn check_upstream(state: &ForwardState, up: &Upstream<'_>) -> Result<()> {
    let (w, h) = (state.camera.width, state.camera.height);
    if let Some(c) = up.color {
        if c.width != w || c.height != h || c.channels != 3 {
            return Err(Error::shape(format!(
                "color gradient is {}x{}x{}, view is {w}x{h}x3",
                c.width, c.height, c.channels
            )));
        }
        if !c.data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("color gradient".into()));
        }
    }
    for (id, s) in up.occupancy.into_iter().flatten() {
        if s.width != w || s.height != h || s.channels != 1 {
            return Err(Error::shape(format!(
                "occupancy gradient for object {id} is {}x{}x{}, view is {w}x{h}x1",
                s.width, s.height, s.channels
            )));
        }
        if !s.data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("occupancy gradient for object {id}")));
        }
    }
    Ok(())
}

/// Joint backward pass over a recorded forward render.
pub fn backward(cloud: &GaussianCloud, state: &ForwardState, up: &Upstream<'_>) -> Result<BackwardOutput> {
    check_upstream(state, up)?;
    let ids: Vec<u32> = up.occupancy.map(|m| m.keys().copied().collect()).unwrap_or_default();
    let probe = RenderRequest::new(state.camera.clone()).with_objects(ids.iter().copied());
    check_request(cloud, &probe)?;
    let slot_of_label = occupancy_slots(&ids, cloud.object_count());
    let occ: Vec<&ImageBuffer> = up.occupancy.map(|m| m.values().collect()).unwrap_or_default();

    let cam = &state.camera;
    let list = &state.splats;
    let width = cam.width as usize;

    let per_tile: Vec<Vec<Grad2d>> = (0..list.tiles.len())
        .into_par_iter()
        .map(|tile| {
            let entries = &list.tiles[tile];
            let mut acc = vec![Grad2d::default(); entries.len()];
            let (x0, y0, x1, y1) = list.tile_pixels(tile, cam);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let p = y as usize * width + x as usize;
                    let d_color = match up.color {
                        Some(c) => [c.data[3 * p], c.data[3 * p + 1], c.data[3 * p + 2]],
                        None => [0.0; 3],
                    };
                    let d_occ: Vec<f64> = occ.iter().map(|img| img.data[p]).collect();
                    backward_pixel(
                        entries,
                        &list.splats,
                        x,
                        y,
                        state.end[p] as usize,
                        state.final_transmittance[p],
                        state.background,
                        d_color,
                        &d_occ,
                        &slot_of_label,
                        &mut acc,
                    );
                }
            }
            acc
        })
        .collect();

    let mut screen = vec![Grad2d::default(); list.splats.len()];
    for (tile, acc) in per_tile.iter().enumerate() {
        for (&k, g) in list.tiles[tile].iter().zip(acc) {
            screen[k as usize].add(g);
        }
    }

    let per_splat: Vec<SplatGrad> = list
        .splats
        .par_iter()
        .zip(screen.par_iter())
        .map(|(s, g)| splat_chain(cloud, cam, s, g))
        .collect();

    let mut grads = GradientBuffer::zeros(cloud);
    let mut mean2d = vec![Vector2::zeros(); cloud.len()];
    let mut visible = vec![false; cloud.len()];
    let k = cloud.sh_count();
    for (s, sg) in list.splats.iter().zip(per_splat) {
        let i = s.source_index;
        grads.positions[i] += sg.position;
        for (dst, src) in grads.sh_coeffs[i * k..(i + 1) * k].iter_mut().zip(&sg.sh) {
            for ch in 0..3 {
                dst[ch] += src[ch];
            }
        }
        grads.opacity_logits[i] += sg.opacity_logit;
        grads.instance_opacity_logits[i] += sg.instance_opacity_logit;
        for c in 0..4 {
            grads.rotations[i][c] += sg.rotation[c];
        }
        grads.log_scales[i] += sg.log_scale;
        mean2d[i] += sg.mean2d;
        visible[i] = true;
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok(BackwardOutput {
        grads,
        mean2d,
        visible,
    })
}

#[allow(clippy::too_many_arguments)]
fn backward_pixel(
    entries: &[u32],
    splats: &[ProjectedGaussian],
    x: u32,
    y: u32,
    end: usize,
    final_t: f64,
    background: [f64; 3],
    d_color: [f64; 3],
    d_occ: &[f64],
    slot_of_label: &[Option<usize>],
    acc: &mut [Grad2d],
) {
    let color_active = d_color.iter().any(|&v| v != 0.0);
    let occ_active = d_occ.iter().any(|&v| v != 0.0);
    if !color_active && !occ_active {
        return;
    }
    let (px, py) = (x as f64, y as f64);
    let mut t = final_t;
    // Σ_{k>i} c_k α_k T_k + bg·T_final, per channel
    let mut behind = [
        background[0] * final_t,
        background[1] * final_t,
        background[2] * final_t,
    ];
    for pos in (0..end).rev() {
        let s = &splats[entries[pos] as usize];
        if !s.bbox.contains(x, y) {
            continue;
        }
        let g = eval_conic(&s.conic, &s.mean2d, px, py);
        let raw_alpha = s.opacity * g;
        let alpha = raw_alpha.min(ALPHA_MAX);
        if alpha < ALPHA_MIN {
            continue;
        }
        let t_i = t / (1.0 - alpha);
        let out = &mut acc[pos];
        let mut d_g = 0.0;

        if color_active {
            let mut d_alpha = 0.0;
            for ch in 0..3 {
                out.color[ch] += alpha * t_i * d_color[ch];
                d_alpha += d_color[ch] * (s.color[ch] * t_i - behind[ch] / (1.0 - alpha));
                behind[ch] += s.color[ch] * alpha * t_i;
            }
            if raw_alpha <= ALPHA_MAX {
                out.opacity += d_alpha * g;
                d_g += d_alpha * s.opacity;
            }
        }
        if occ_active {
            if let Some(Some(slot)) = slot_of_label.get(s.label as usize) {
                let d_s = d_occ[*slot];
                out.instance_opacity += d_s * g * t_i;
                d_g += d_s * s.instance_opacity * t_i;
            }
        }
        if d_g != 0.0 {
            let dx = px - s.mean2d.x;
            let dy = py - s.mean2d.y;
            let [a, b, c] = s.conic;
            let gg = d_g * g;
            out.mean[0] += gg * (a * dx + b * dy);
            out.mean[1] += gg * (b * dx + c * dy);
            out.conic[0] += -0.5 * gg * dx * dx;
            out.conic[1] += -gg * dx * dy;
            out.conic[2] += -0.5 * gg * dy * dy;
        }
        t = t_i;
    }
}

struct SplatGrad {
    position: Vector3<f64>,
    sh: Vec<[f64; 3]>,
    opacity_logit: f64,
    instance_opacity_logit: f64,
    rotation: [f64; 4],
    log_scale: Vector3<f64>,
    mean2d: Vector2<f64>,
}

/// Carries one splat's screen-space gradient back to its 3D parameters.
fn splat_chain(cloud: &GaussianCloud, cam: &Camera, s: &ProjectedGaussian, g: &Grad2d) -> SplatGrad {
    let i = s.source_index;
    let mu = cloud.positions[i];
    let w = cam.rotation;
    let t = cam.to_camera(&mu);
    let mut d_mu = Vector3::zeros();

    // color → SH coefficients and view direction
    let offset = mu - cam.center();
    let dist = offset.norm();
    let dir = offset / dist;
    let mut basis = Vec::new();
    let mut basis_grad = Vec::new();
    sh_basis_with_grad(cloud.sh_degree, &dir, &mut basis, Some(&mut basis_grad));
    let coeffs = cloud.sh(i);
    let raw = sh_raw_color(coeffs, &basis);
    let mut d_raw = g.color;
    for ch in 0..3 {
        if !(0.0..=1.0).contains(&raw[ch]) {
            d_raw[ch] = 0.0;
        }
    }
    let sh: Vec<[f64; 3]> = basis.iter().map(|b| d_raw.map(|d| d * b)).collect();
    if cloud.sh_degree > 0 {
        let mut d_dir = Vector3::zeros();
        for (k, bg) in basis_grad.iter().enumerate() {
            let w_k: f64 = (0..3).map(|ch| d_raw[ch] * coeffs[k][ch]).sum();
            d_dir += bg * w_k;
        }
        d_mu += (d_dir - dir * dir.dot(&d_dir)) / dist;
    }

    // conic → Σ′ → (J, Σ)
    let conic = Matrix2::new(s.conic[0], s.conic[1], s.conic[1], s.conic[2]);
    let g_conic = Matrix2::new(g.conic[0], 0.5 * g.conic[1], 0.5 * g.conic[1], g.conic[2]);
    let g_cov2 = -conic * g_conic * conic;
    let j = projection_jacobian(cam, &t);
    let jw: Matrix2x3<f64> = j * w;
    let cov3 = build_covariance(cloud.rotations[i], &cloud.log_scales[i]);
    let g_cov3: Matrix3<f64> = jw.transpose() * g_cov2 * jw;
    let g_jw: Matrix2x3<f64> = 2.0 * g_cov2 * jw * cov3;
    let g_j: Matrix2x3<f64> = g_jw * w.transpose();

    let (fx, fy) = (cam.fx, cam.fy);
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut d_t = Vector3::new(
        g_j[(0, 2)] * (-fx * iz2),
        g_j[(1, 2)] * (-fy * iz2),
        g_j[(0, 0)] * (-fx * iz2)
            + g_j[(0, 2)] * (2.0 * fx * t.x * iz3)
            + g_j[(1, 1)] * (-fy * iz2)
            + g_j[(1, 2)] * (2.0 * fy * t.y * iz3),
    );
    // screen mean
    let (gu, gv) = (g.mean[0], g.mean[1]);
    d_t.x += gu * fx * iz;
    d_t.y += gv * fy * iz;
    d_t.z += -gu * fx * t.x * iz2 - gv * fy * t.y * iz2;
    d_mu += w.transpose() * d_t;

    // Σ = M Mᵀ, M = R diag(s)
    let q = normalize_quat(cloud.rotations[i]);
    let r = quat_to_rotation(q);
    let scale = cloud.log_scales[i].map(f64::exp);
    let m = r * Matrix3::from_diagonal(&scale);
    let g_m = 2.0 * g_cov3 * m;
    let mut log_scale = Vector3::zeros();
    let mut g_r = Matrix3::zeros();
    for c in 0..3 {
        let mut ds = 0.0;
        for row in 0..3 {
            ds += g_m[(row, c)] * r[(row, c)];
            g_r[(row, c)] = g_m[(row, c)] * scale[c];
        }
        log_scale[c] = ds * scale[c];
    }
    let rotation = quat_grad(cloud.rotations[i], q, &g_r);

    let sigma = s.opacity;
    let sigma_star = s.instance_opacity;
    SplatGrad {
        position: d_mu,
        sh,
        opacity_logit: g.opacity * sigma * (1.0 - sigma),
        instance_opacity_logit: g.instance_opacity * sigma_star * (1.0 - sigma_star),
        rotation,
        log_scale,
        mean2d: Vector2::new(gu, gv),
    }
}

/// ∂L/∂q for the raw quaternion, given ∂L/∂R at its normalized value `qn`.
fn quat_grad(raw: [f64; 4], qn: [f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = qn;
    let gr = |r: usize, c: usize| g[(r, c)];
    let dw = 2.0
        * (-z * gr(0, 1) + y * gr(0, 2) + z * gr(1, 0) - x * gr(1, 2) - y * gr(2, 0) + x * gr(2, 1));
    let dx = 2.0
        * (y * gr(0, 1) + z * gr(0, 2) + y * gr(1, 0) - 2.0 * x * gr(1, 1) - w * gr(1, 2)
            + z * gr(2, 0)
            + w * gr(2, 1)
            - 2.0 * x * gr(2, 2));
    let dy = 2.0
        * (-2.0 * y * gr(0, 0) + x * gr(0, 1) + w * gr(0, 2) + x * gr(1, 0) + z * gr(1, 2)
            - w * gr(2, 0)
            + z * gr(2, 1)
            - 2.0 * y * gr(2, 2));
    let dz = 2.0
        * (-2.0 * z * gr(0, 0) - w * gr(0, 1) + x * gr(0, 2) + w * gr(1, 0) - 2.0 * z * gr(1, 1)
            + y * gr(1, 2)
            + x * gr(2, 0)
            + y * gr(2, 1));
    let d = [dw, dx, dy, dz];
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let proj: f64 = (0..4).map(|k| qn[k] * d[k]).sum();
    [0, 1, 2, 3].map(|k| (d[k] - qn[k] * proj) / norm)
}
