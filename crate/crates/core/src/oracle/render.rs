//! Brute-force reference renderer.
//!
//! Written without the tiled renderer's code: each primitive is projected
//! here with its own covariance and Jacobian arithmetic, then every pixel
//! walks the full depth-sorted list one scalar at a time. Only the view
//! dependent color evaluation is shared.

use std::collections::BTreeMap;

use nalgebra::{Matrix2, Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::raster::{RenderOutput, RenderStats};
use crate::scene::{eval_sh_color, Camera, GaussianCloud, IdMap, ImageBuffer};

const ALPHA_MAX: f64 = 0.99;
const ALPHA_MIN: f64 = 1.0 / 255.0;
const T_MIN: f64 = 1e-4;
const LABEL_MIN: f64 = 0.1;
const NEAR: f64 = 0.01;
const DILATION: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleOptions {
    pub background: [f64; 3],
    /// Stop a pixel once transmittance drops below 1e-4, as the tiled
    /// renderer does. With `false` every splat is composited.
    pub terminate: bool,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            background: [0.0; 3],
            terminate: true,
        }
    }
}

/// One splat blended at one pixel during a traced render.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActiveBlend {
    pub source_index: usize,
    /// α hit the 0.99 cap.
    pub clamped: bool,
    /// Transmittance in front of the splat.
    pub transmittance: f64,
}

/// Blended splats of every pixel (row-major), recorded by a traced render.
#[derive(Clone, Debug, PartialEq)]
pub struct ActiveSet {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<Vec<ActiveBlend>>,
}

#[derive(Clone, Debug)]
pub(crate) struct OracleSplat {
    pub index: usize,
    pub mean: (f64, f64),
    pub conic: (f64, f64, f64),
    pub depth: f64,
    /// Inclusive pixel box `(x0, y0, x1, y1)`, `None` if empty.
    pub bbox: Option<(i64, i64, i64, i64)>,
    pub color: [f64; 3],
    pub sigma: f64,
    pub sigma_star: f64,
    pub label: u32,
}

impl OracleSplat {
    pub fn gaussian(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.mean.0;
        let dy = y - self.mean.1;
        let (a, b, c) = self.conic;
        (-0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy)).exp()
    }

    pub fn covers(&self, x: u32, y: u32) -> bool {
        match self.bbox {
            Some((x0, y0, x1, y1)) => {
                let (x, y) = (x as i64, y as i64);
                x >= x0 && x <= x1 && y >= y0 && y <= y1
            }
            None => false,
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Projects primitive `i`; `None` only when it is not in front of the near
/// plane or its footprint is degenerate.
pub(crate) fn project(cloud: &GaussianCloud, i: usize, cam: &Camera) -> Option<OracleSplat> {
    let mu = cloud.positions[i];
    let p = cam.rotation * mu + cam.translation;
    if p.z <= NEAR {
        return None;
    }
    let [w, x, y, z] = cloud.rotations[i];
    let rot: Matrix3<f64> = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z))
        .to_rotation_matrix()
        .into_inner();
    let s = cloud.log_scales[i];
    let var = Matrix3::from_diagonal(&Vector3::new(
        (2.0 * s.x).exp(),
        (2.0 * s.y).exp(),
        (2.0 * s.z).exp(),
    ));
    let cov_world = rot * var * rot.transpose();
    let cov_cam = cam.rotation * cov_world * cam.rotation.transpose();

    // rows of the perspective Jacobian
    let j0 = Vector3::new(cam.fx / p.z, 0.0, -cam.fx * p.x / (p.z * p.z));
    let j1 = Vector3::new(0.0, cam.fy / p.z, -cam.fy * p.y / (p.z * p.z));
    let cov = Matrix2::new(
        j0.dot(&(cov_cam * j0)) + DILATION,
        j0.dot(&(cov_cam * j1)),
        j1.dot(&(cov_cam * j0)),
        j1.dot(&(cov_cam * j1)) + DILATION,
    );
    let inv = cov.try_inverse()?;
    if !inv.iter().all(|v| v.is_finite()) {
        return None;
    }
    let mean = (
        cam.fx * p.x / p.z + cam.cx,
        cam.fy * p.y / p.z + cam.cy,
    );

    // 3-sigma box of the larger eigenvalue
    let tr_half = 0.5 * (cov[(0, 0)] + cov[(1, 1)]);
    let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(0, 1)];
    let lambda = tr_half + (tr_half * tr_half - det).max(0.1).sqrt();
    let r = (3.0 * lambda.sqrt()).ceil();
    let x0 = ((mean.0 - r).ceil() as i64).max(0);
    let y0 = ((mean.1 - r).ceil() as i64).max(0);
    let x1 = ((mean.0 + r).floor() as i64).min(cam.width as i64 - 1);
    let y1 = ((mean.1 + r).floor() as i64).min(cam.height as i64 - 1);
    let bbox = (x0 <= x1 && y0 <= y1).then_some((x0, y0, x1, y1));

    let view = (mu - cam.center()).normalize();
    let (sigma_star, label) = match &cloud.instance {
        Some(inst) => (sigmoid(inst.opacity_logits[i]), inst.labels[i]),
        None => (0.0, 0),
    };
    Some(OracleSplat {
        index: i,
        mean,
        conic: (inv[(0, 0)], 0.5 * (inv[(0, 1)] + inv[(1, 0)]), inv[(1, 1)]),
        depth: p.z,
        bbox,
        color: eval_sh_color(cloud.sh_degree, cloud.sh(i), &view),
        sigma: sigmoid(cloud.opacity_logits[i]),
        sigma_star,
        label,
    })
}

/// Every projectable primitive, nearest first (ties by index).
pub(crate) fn project_sorted(cloud: &GaussianCloud, cam: &Camera) -> Vec<OracleSplat> {
    let mut splats: Vec<OracleSplat> = (0..cloud.len()).filter_map(|i| project(cloud, i, cam)).collect();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    splats
}

fn check_ids(cloud: &GaussianCloud, object_ids: &[u32]) -> Result<()> {
    if object_ids.is_empty() {
        return Ok(());
    }
    let Some(inst) = &cloud.instance else {
        return Err(Error::NoInstanceField);
    };
    for (k, &id) in object_ids.iter().enumerate() {
        if id == 0 || id > inst.object_count {
            return Err(Error::UnknownObject {
                id,
                count: inst.object_count,
            });
        }
        if object_ids[..k].contains(&id) {
            return Err(Error::invalid("duplicate object id in request"));
        }
    }
    Ok(())
}

struct Buffers {
    color: ImageBuffer,
    occupancy: Vec<ImageBuffer>,
    labels: IdMap,
    final_t: ImageBuffer,
    contributors: Vec<u32>,
}

impl Buffers {
    fn new(cam: &Camera, n_objects: usize) -> Self {
        let (w, h) = (cam.width, cam.height);
        Self {
            color: ImageBuffer::new(w, h, 3),
            occupancy: (0..n_objects).map(|_| ImageBuffer::new(w, h, 1)).collect(),
            labels: IdMap::new(w, h),
            final_t: ImageBuffer::filled(w, h, 1, 1.0),
            contributors: vec![0; cam.pixel_count()],
        }
    }

    fn finish(self, object_ids: &[u32]) -> RenderOutput {
        RenderOutput {
            color: self.color,
            occupancy: object_ids.iter().copied().zip(self.occupancy).collect::<BTreeMap<_, _>>(),
            instance_labels: Some(self.labels),
            final_transmittance: self.final_t,
            contributor_count: self.contributors,
            stats: RenderStats::default(),
        }
    }
}

/// Color, occupancy of `object_ids`, instance labels and final
/// transmittance, computed pixel by pixel.
pub fn oracle_render(cloud: &GaussianCloud, cam: &Camera, object_ids: &[u32]) -> Result<RenderOutput> {
    oracle_render_with(cloud, cam, object_ids, &OracleOptions::default(), None)
}

/// [`oracle_render`] with explicit options; `trace` receives the blended
/// splats of every pixel.
pub fn oracle_render_with(
    cloud: &GaussianCloud,
    cam: &Camera,
    object_ids: &[u32],
    opts: &OracleOptions,
    mut trace: Option<&mut ActiveSet>,
) -> Result<RenderOutput> {
    check_ids(cloud, object_ids)?;
    let splats = project_sorted(cloud, cam);
    let mut buf = Buffers::new(cam, object_ids.len());
    if let Some(tr) = trace.as_deref_mut() {
        tr.width = cam.width;
        tr.height = cam.height;
        tr.pixels = vec![Vec::new(); cam.pixel_count()];
    }
    for y in 0..cam.height {
        for x in 0..cam.width {
            let p = (y * cam.width + x) as usize;
            let mut t = 1.0;
            let mut rgb = [0.0; 3];
            let mut best = (f64::NEG_INFINITY, 0u32);
            for s in &splats {
                if !s.covers(x, y) {
                    continue;
                }
                let g = s.gaussian(x as f64, y as f64);
                let raw = s.sigma * g;
                let alpha = if raw > ALPHA_MAX { ALPHA_MAX } else { raw };
                if alpha < ALPHA_MIN {
                    continue;
                }
                for ch in 0..3 {
                    rgb[ch] += s.color[ch] * alpha * t;
                }
                for (k, &id) in object_ids.iter().enumerate() {
                    if s.label == id {
                        buf.occupancy[k].data[p] += s.sigma_star * g * t;
                    }
                }
                let weight = s.sigma_star * g;
                if weight > best.0 {
                    best = (weight, s.label);
                }
                if let Some(tr) = trace.as_deref_mut() {
                    tr.pixels[p].push(ActiveBlend {
                        source_index: s.index,
                        clamped: raw > ALPHA_MAX,
                        transmittance: t,
                    });
                }
                buf.contributors[p] += 1;
                t *= 1.0 - alpha;
                if opts.terminate && t < T_MIN {
                    break;
                }
            }
            for ch in 0..3 {
                buf.color.data[3 * p + ch] = rgb[ch] + opts.background[ch] * t;
            }
            buf.final_t.data[p] = t;
            buf.labels.data[p] = if best.0 >= LABEL_MIN { best.1 } else { 0 };
        }
    }
    Ok(buf.finish(object_ids))
}

/// Re-renders with the blend list of every pixel fixed to `active`.
///
/// Box tests, the 1/255 skip and termination are taken from the recording,
/// so small parameter changes move every output smoothly. With
/// `freeze_transmittance`, occupancy uses the recorded Tᵢ instead of the
/// running product: the reference for a gradient that stops at Tᵢ.
pub fn oracle_replay(
    cloud: &GaussianCloud,
    cam: &Camera,
    object_ids: &[u32],
    active: &ActiveSet,
    background: [f64; 3],
    freeze_transmittance: bool,
) -> Result<RenderOutput> {
    check_ids(cloud, object_ids)?;
    if active.width != cam.width || active.height != cam.height {
        return Err(Error::shape("active set was recorded for another resolution"));
    }
    let mut cache: Vec<Option<Option<OracleSplat>>> = vec![None; cloud.len()];
    let mut buf = Buffers::new(cam, object_ids.len());
    for y in 0..cam.height {
        for x in 0..cam.width {
            let p = (y * cam.width + x) as usize;
            let mut t = 1.0;
            let mut rgb = [0.0; 3];
            let mut best = (f64::NEG_INFINITY, 0u32);
            for blend in &active.pixels[p] {
                let i = blend.source_index;
                if i >= cloud.len() {
                    return Err(Error::shape("active set refers to a missing primitive"));
                }
                let entry = cache[i].get_or_insert_with(|| project(cloud, i, cam));
                let Some(s) = entry.as_ref() else {
                    return Err(Error::invalid(format!(
                        "primitive {i} left the view during replay"
                    )));
                };
                let g = s.gaussian(x as f64, y as f64);
                let alpha = if blend.clamped { ALPHA_MAX } else { s.sigma * g };
                let t_occ = if freeze_transmittance { blend.transmittance } else { t };
                for ch in 0..3 {
                    rgb[ch] += s.color[ch] * alpha * t;
                }
                for (k, &id) in object_ids.iter().enumerate() {
                    if s.label == id {
                        buf.occupancy[k].data[p] += s.sigma_star * g * t_occ;
                    }
                }
                let weight = s.sigma_star * g;
                if weight > best.0 {
                    best = (weight, s.label);
                }
                buf.contributors[p] += 1;
                t *= 1.0 - alpha;
            }
            for ch in 0..3 {
                buf.color.data[3 * p + ch] = rgb[ch] + background[ch] * t;
            }
            buf.final_t.data[p] = t;
            buf.labels.data[p] = if best.0 >= LABEL_MIN { best.1 } else { 0 };
        }
    }
    Ok(buf.finish(object_ids))
}
