//! Labeled synthetic scenes with deliberately mislabeled floaters.
//!
//! Objects are spheres tiled with flat surfels, which keeps silhouettes
//! sharp. Floaters are faint blobs hanging between a camera and an object;
//! their own label is background, but the supervision ID maps claim the
//! pixel under the floater's center for that object in every view that
//! sees it. That single pixel is what majority voting reads, so the floater
//! is lifted with the object's label while the rest of its footprint stays
//! background in the masks.

use std::collections::BTreeMap;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::render::{oracle_render_with, ActiveSet, OracleOptions};
use crate::error::{Error, Result};
use crate::scene::sh::rgb_to_dc;
use crate::scene::{logit, BinaryMask, Camera, GaussianCloud, IdMap, ImageBuffer, InstanceField, Primitive};

/// Coverage 1 − T_final below which a ground-truth pixel is background.
pub const ID_COVERAGE_MIN: f64 = 0.5;

/// Half-width of the pixel block claimed around each visible floater's center.
const CORRUPT_RADIUS: i64 = 0;

const PALETTE: [[f64; 3]; 8] = [
    [0.85, 0.2, 0.2],
    [0.2, 0.75, 0.25],
    [0.25, 0.35, 0.9],
    [0.9, 0.8, 0.2],
    [0.7, 0.3, 0.8],
    [0.2, 0.8, 0.8],
    [0.95, 0.55, 0.15],
    [0.6, 0.6, 0.6],
];

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub objects: u32,
    pub per_object: usize,
    pub floaters: usize,
    pub seed: u64,
    pub train_views: usize,
    pub eval_views: usize,
    pub resolution: u32,
    /// Distance of the camera ring from the origin.
    pub ring_radius: f64,
    pub object_radius: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            objects: 3,
            per_object: 500,
            floaters: 5,
            seed: 0,
            train_views: 24,
            eval_views: 8,
            resolution: 128,
            ring_radius: 3.2,
            object_radius: 0.35,
        }
    }
}

impl SceneSpec {
    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::invalid(format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "objects" => self.objects = num(key, value)?,
            "per_object" => self.per_object = num(key, value)?,
            "floaters" => self.floaters = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "train_views" => self.train_views = num(key, value)?,
            "eval_views" => self.eval_views = num(key, value)?,
            "resolution" => self.resolution = num(key, value)?,
            "ring_radius" => self.ring_radius = num(key, value)?,
            "object_radius" => self.object_radius = num(key, value)?,
            _ => return Err(Error::invalid(format!("unknown scene key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.objects == 0 || self.per_object == 0 || self.train_views == 0 {
            return Err(Error::invalid("objects, per_object and train_views must be at least 1"));
        }
        if self.resolution < 8 {
            return Err(Error::invalid("resolution must be at least 8"));
        }
        if !(self.ring_radius > 1.5 && self.object_radius > 0.0) {
            return Err(Error::invalid("ring_radius must exceed 1.5 and object_radius be positive"));
        }
        Ok(())
    }
}

/// One rendered view with its supervision.
#[derive(Clone, Debug)]
pub struct SyntheticView {
    pub camera: Camera,
    pub image: ImageBuffer,
    /// Supervision labels: the clean map with floater pixels overwritten.
    pub id_map: IdMap,
    /// Labels rendered from the true labels.
    pub clean_id_map: IdMap,
}

impl SyntheticView {
    /// Ground-truth mask of object `j`.
    pub fn true_mask(&self, j: u32) -> BinaryMask {
        BinaryMask::from_ids(&self.clean_id_map, j)
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    /// Ground-truth cloud; its instance field holds the true labels.
    pub cloud: GaussianCloud,
    pub true_labels: Vec<u32>,
    pub object_count: u32,
    pub object_centers: Vec<Vector3<f64>>,
    /// Indices of the injected floaters.
    pub floaters: Vec<usize>,
    /// Object each floater is attributed to in the supervision maps.
    pub floater_labels: Vec<u32>,
    pub train: Vec<SyntheticView>,
    pub eval: Vec<SyntheticView>,
    pub background: [f64; 3],
}

impl SyntheticScene {
    pub fn train_cameras(&self) -> Vec<Camera> {
        self.train.iter().map(|v| v.camera.clone()).collect()
    }

    pub fn train_id_maps(&self) -> Vec<IdMap> {
        self.train.iter().map(|v| v.id_map.clone()).collect()
    }
}

fn fibonacci_sphere(n: usize, k: usize) -> Vector3<f64> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
    let r = (1.0 - z * z).sqrt();
    let phi = golden * k as f64;
    Vector3::new(r * phi.cos(), r * phi.sin(), z)
}

/// Rotation taking +z to `n`, as a `(w, x, y, z)` quaternion.
fn align_z(n: &Vector3<f64>) -> [f64; 4] {
    let q = UnitQuaternion::rotation_between(&Vector3::z(), n)
        .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI));
    let q = q.quaternion();
    [q.w, q.i, q.j, q.k]
}

fn ring_cameras(spec: &SceneSpec, count: usize, phase: f64, elevations: &[f64]) -> Result<Vec<Camera>> {
    let res = spec.resolution;
    let focal = 0.5 * res as f64 / (20f64.to_radians()).tan();
    (0..count)
        .map(|k| {
            let az = 2.0 * std::f64::consts::PI * (k as f64 + phase) / count as f64;
            let el = elevations[k % elevations.len()].to_radians();
            let eye = spec.ring_radius * Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            Camera::look_at(eye, Vector3::zeros(), Vector3::z(), focal, (res, res))
        })
        .collect()
}

fn object_centers(spec: &SceneSpec) -> Vec<Vector3<f64>> {
    let c = spec.objects as usize;
    if c == 1 {
        return vec![Vector3::zeros()];
    }
    // spread on a circle wide enough that spheres never touch
    let min_ring = spec.object_radius * 1.25 / (std::f64::consts::PI / c as f64).sin();
    let ring = min_ring.max(0.75);
    (0..c)
        .map(|k| {
            let a = 2.0 * std::f64::consts::PI * k as f64 / c as f64 + 0.3;
            Vector3::new(ring * a.cos(), ring * a.sin(), 0.1 * (k as f64 - 0.5 * (c - 1) as f64))
        })
        .collect()
}

/// Builds the cloud, cameras and supervision for `spec`.
pub fn generate_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers = object_centers(spec);
    let mut cloud = GaussianCloud::new(0);
    let mut labels = Vec::new();

    let per = spec.per_object;
    let r = spec.object_radius;
    let spacing = (4.0 * std::f64::consts::PI * r * r / per as f64).sqrt();
    let tangent = (0.6 * spacing).ln();
    let normal = (0.08 * spacing).ln();
    for (k, center) in centers.iter().enumerate() {
        let base = PALETTE[k % PALETTE.len()];
        for s in 0..per {
            let n = fibonacci_sphere(per, s);
            let shade: f64 = rng.random_range(-0.05..0.05);
            cloud.push(Primitive {
                position: center + r * n,
                sh: vec![base.map(|c| rgb_to_dc((c + shade).clamp(0.02, 0.98)))],
                opacity_logit: logit(0.95),
                rotation: align_z(&n),
                log_scale: Vector3::new(tangent, tangent, normal),
            });
            labels.push(k as u32 + 1);
        }
    }

    let train_cams = ring_cameras(spec, spec.train_views, 0.0, &[22.0, 38.0, 30.0])?;
    let eval_cams = ring_cameras(spec, spec.eval_views, 0.5, &[30.0, 26.0])?;

    let mut floaters = Vec::new();
    let mut floater_labels = Vec::new();
    for m in 0..spec.floaters {
        let target = (m as u32 % spec.objects) + 1;
        let cam = &train_cams[(m * 7 + 3) % train_cams.len()];
        let eye = cam.center();
        let frac: f64 = rng.random_range(0.6..0.75);
        let pos = eye + frac * (centers[target as usize - 1] - eye);
        let dist = (pos - eye).norm();
        let px: f64 = rng.random_range(2.0..3.0);
        let opacity: f64 = rng.random_range(0.12..0.2);
        floaters.push(cloud.len());
        floater_labels.push(target);
        cloud.push(Primitive {
            position: pos,
            sh: vec![[rgb_to_dc(0.8); 3]],
            opacity_logit: logit(opacity),
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: Vector3::repeat((px * dist / cam.fx).ln()),
        });
        labels.push(0);
    }
    cloud.instance = Some(InstanceField {
        opacity_logits: cloud.opacity_logits.clone(),
        labels: labels.clone(),
        object_count: spec.objects,
    });

    let background = [0.0; 3];
    let render_view = |camera: Camera| -> Result<SyntheticView> {
        let mut trace = ActiveSet {
            width: 0,
            height: 0,
            pixels: Vec::new(),
        };
        let opts = OracleOptions {
            background,
            terminate: true,
        };
        let out = oracle_render_with(&cloud, &camera, &[], &opts, Some(&mut trace))?;
        let mut clean = out.instance_labels.expect("oracle always renders labels");
        for (l, t) in clean.data.iter_mut().zip(&out.final_transmittance.data) {
            if 1.0 - t < ID_COVERAGE_MIN {
                *l = 0;
            }
        }
        let mut id_map = clean.clone();
        for (&f, &target) in floaters.iter().zip(&floater_labels) {
            let t = camera.to_camera(&cloud.positions[f]);
            if t.z <= crate::scene::NEAR_PLANE {
                continue;
            }
            let c = camera.project_camera_point(&t);
            let (x, y) = (c.x.round(), c.y.round());
            if x < 0.0 || y < 0.0 || x >= camera.width as f64 || y >= camera.height as f64 {
                continue;
            }
            let (cx, cy) = (x as i64, y as i64);
            let center = cy as usize * camera.width as usize + cx as usize;
            let seen = trace.pixels[center]
                .iter()
                .any(|b| b.source_index == f && b.transmittance >= ID_COVERAGE_MIN);
            if !seen {
                continue;
            }
            for yy in (cy - CORRUPT_RADIUS).max(0)..=(cy + CORRUPT_RADIUS).min(camera.height as i64 - 1) {
                for xx in (cx - CORRUPT_RADIUS).max(0)..=(cx + CORRUPT_RADIUS).min(camera.width as i64 - 1) {
                    id_map.set(xx as u32, yy as u32, target);
                }
            }
        }
        Ok(SyntheticView {
            camera,
            image: out.color,
            id_map,
            clean_id_map: clean,
        })
    };
    let train = train_cams.into_iter().map(&render_view).collect::<Result<Vec<_>>>()?;
    let eval = eval_cams.into_iter().map(&render_view).collect::<Result<Vec<_>>>()?;

    Ok(SyntheticScene {
        spec: spec.clone(),
        cloud,
        true_labels: labels,
        object_count: spec.objects,
        object_centers: centers,
        floaters,
        floater_labels,
        train,
        eval,
        background,
    })
}

/// Starting point for training: the ground-truth geometry jittered, with
/// gray colors, low opacity and no instance field.
pub fn initial_cloud(scene: &SyntheticScene, seed: u64) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let jitter = Normal::new(0.0, 0.01).expect("valid normal");
    let mut cloud = GaussianCloud::new(scene.cloud.sh_degree);
    for i in 0..scene.cloud.len() {
        let mut p = scene.cloud.primitive(i);
        p.position += Vector3::from_fn(|_, _| jitter.sample(&mut rng));
        for c in &mut p.sh {
            *c = [0.0; 3];
        }
        p.opacity_logit = logit(0.1);
        cloud.push(p);
    }
    cloud
}

/// Per-object ground-truth masks of one view.
pub fn true_masks(view: &SyntheticView, object_count: u32) -> BTreeMap<u32, BinaryMask> {
    (1..=object_count).map(|j| (j, view.true_mask(j))).collect()
}

/// Random cloud in front of [`test_camera`], with `object_count` labels
/// (0 included) and random instance opacities.
pub fn random_cloud(n: usize, object_count: u32, sh_degree: u8, seed: u64) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cloud = GaussianCloud::new(sh_degree);
    let k = cloud.sh_count();
    for _ in 0..n {
        let pos = Vector3::new(
            rng.random_range(-0.8..0.8),
            rng.random_range(-0.8..0.8),
            rng.random_range(2.5..4.5),
        );
        let mut sh = vec![[0.0; 3]; k];
        sh[0] = [0; 3].map(|_| rgb_to_dc(rng.random_range(0.15..0.85)));
        for c in sh.iter_mut().skip(1) {
            *c = [0; 3].map(|_| rng.random_range(-0.05..0.05));
        }
        let mut q: [f64; 4] = [0; 4].map(|_| rng.random_range(-1.0..1.0));
        if q.iter().map(|c| c * c).sum::<f64>() < 0.01 {
            q = [1.0, 0.0, 0.0, 0.0];
        }
        cloud.push(Primitive {
            position: pos,
            sh,
            opacity_logit: rng.random_range(-2.0..2.5),
            rotation: q,
            log_scale: Vector3::from_fn(|_, _| rng.random_range(-3.4..-2.2)),
        });
    }
    cloud.instance = Some(InstanceField {
        opacity_logits: (0..n).map(|_| rng.random_range(-2.0..2.5)).collect(),
        labels: (0..n).map(|_| rng.random_range(0..=object_count)).collect(),
        object_count,
    });
    cloud
}

/// Camera at the origin looking down +z, matching [`random_cloud`].
pub fn test_camera(width: u32, height: u32) -> Camera {
    let f = 0.9 * width.max(height) as f64;
    Camera::new(
        nalgebra::Matrix3::identity(),
        Vector3::zeros(),
        (f, f),
        ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0),
        (width, height),
    )
    .expect("identity camera is valid")
}
