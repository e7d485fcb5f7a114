//! Two-stage optimization.
//!
//! Stage 1 is plain appearance fitting with densification, pruning and
//! periodic opacity resets. At `stage2_start` every primitive receives a
//! label by majority vote and an instance opacity copied from its radiance
//! opacity; from then on the primitive count is fixed and each step adds
//! the cross-entropy of a few sampled objects' occupancy maps.

mod adam;
mod config;
mod densify;
mod metrics;

pub use adam::{adam_step, adam_step_with, exp_decay, AdamGroup, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use config::{TrainConfig, REFERENCE_ITERS, RESET_GAP};
pub use densify::{densify_and_prune, opacity_reset, DensifyReport, GradStats, OptimizerState};
pub use metrics::{MetricsLog, MetricsRecord};

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backward::{backward, GradientBuffer, Upstream};
use crate::error::{Error, Result};
use crate::labeling::{majority_vote, PseudoLabelSet};
use crate::loss::{l1_loss_grad, object_loss_grad, sample_objects, ssim_loss_grad, total_loss};
use crate::raster::{render_with_state, RenderRequest};
use crate::scene::{Camera, GaussianCloud, ImageBuffer, InstanceField};

/// Posed training images with optional per-view ID maps.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub cameras: Vec<Camera>,
    pub images: Vec<ImageBuffer>,
    /// Required once stage 2 begins.
    pub labels: Option<PseudoLabelSet>,
}

impl TrainingData {
    pub fn validate(&self) -> Result<()> {
        if self.cameras.is_empty() || self.cameras.len() != self.images.len() {
            return Err(Error::shape(format!(
                "{} cameras for {} images",
                self.cameras.len(),
                self.images.len()
            )));
        }
        for (v, (c, img)) in self.cameras.iter().zip(&self.images).enumerate() {
            if img.width != c.width || img.height != c.height || img.channels != 3 {
                return Err(Error::shape(format!("view {v}: image does not match its camera")));
            }
        }
        if let Some(l) = &self.labels {
            l.check_cameras(&self.cameras)?;
        }
        Ok(())
    }
}

/// Radius of the camera centers around their mean, times 1.1.
pub fn scene_extent(cameras: &[Camera]) -> f64 {
    let centers: Vec<Vector3<f64>> = cameras.iter().map(Camera::center).collect();
    let mean = centers.iter().sum::<Vector3<f64>>() / centers.len().max(1) as f64;
    let radius = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max);
    1.1 * radius.max(1e-6)
}

pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len().max(1) as f64;
    Ok(-10.0 * mse.max(1e-20).log10())
}

/// Assigns majority-vote labels and copies σ into σ*.
pub fn begin_stage2(cloud: &mut GaussianCloud, cameras: &[Camera], labels: &PseudoLabelSet) -> Result<()> {
    let assigned = majority_vote(cloud, cameras, labels)?;
    cloud.instance = Some(InstanceField {
        opacity_logits: cloud.opacity_logits.clone(),
        labels: assigned,
        object_count: labels.object_count,
    });
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Appearance,
    Instance,
}

/// Resumable training state. Cloning forks an independent run.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    cloud: GaussianCloud,
    optim: OptimizerState,
    stats: GradStats,
    rng: ChaCha8Rng,
    iteration: usize,
    lineage: Vec<usize>,
    extent: f64,
    order: Vec<usize>,
    cursor: usize,
    stage2_enabled: bool,
    stage2_entry_opacity: Option<Vec<f64>>,
    log: MetricsLog,
    separation_checks: usize,
}

impl Trainer {
    pub fn new(cloud: GaussianCloud, data: &TrainingData, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        data.validate()?;
        cloud.validate()?;
        let extent = scene_extent(&data.cameras);
        let mut log = MetricsLog::default();
        log.config = config.to_text().lines().map(str::to_string).collect();
        let n = cloud.len();
        Ok(Self {
            optim: OptimizerState::new(&cloud),
            stats: GradStats::new(n),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            iteration: 0,
            lineage: (0..n).collect(),
            extent,
            order: Vec::new(),
            cursor: 0,
            stage2_enabled: true,
            stage2_entry_opacity: None,
            log,
            separation_checks: 0,
            config,
            cloud,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn cloud(&self) -> &GaussianCloud {
        &self.cloud
    }

    pub fn into_cloud(self) -> GaussianCloud {
        self.cloud
    }

    /// Iterations completed so far.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Original index of every current primitive.
    pub fn lineage(&self) -> &[usize] {
        &self.lineage
    }

    pub fn log(&self) -> &MetricsLog {
        &self.log
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    /// Radiance opacities recorded when stage 2 began.
    pub fn stage2_entry_opacity(&self) -> Option<&[f64]> {
        self.stage2_entry_opacity.as_deref()
    }

    /// Number of stage-2 path-separation checks that have run (and passed).
    pub fn separation_checks(&self) -> usize {
        self.separation_checks
    }

    pub fn stage(&self) -> Stage {
        if self.cloud.instance.is_some() {
            Stage::Instance
        } else {
            Stage::Appearance
        }
    }

    /// Changes how many objects the object loss samples per step.
    pub fn set_object_samples(&mut self, m: usize) -> Result<()> {
        if m == 0 {
            return Err(Error::invalid("object sample count must be at least 1"));
        }
        self.config.m_objects = m;
        Ok(())
    }

    /// Keeps training appearance-only past `stage2_start`. If stage 2 has
    /// already begun, the instance field is dropped.
    pub fn disable_stage2(&mut self) {
        self.stage2_enabled = false;
        self.cloud.instance = None;
        self.optim.instance_opacity = AdamGroup::zeros(0);
        self.stage2_entry_opacity = None;
    }

    fn next_view(&mut self, views: usize) -> usize {
        if self.cursor >= self.order.len() {
            self.order = (0..views).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    /// Runs until `iteration` steps have completed (capped at the total).
    pub fn run_until(&mut self, data: &TrainingData, iteration: usize) -> Result<()> {
        while self.iteration < iteration.min(self.config.total_iters) {
            self.step(data)?;
        }
        Ok(())
    }

    /// One optimization step.
    pub fn step(&mut self, data: &TrainingData) -> Result<()> {
        let it = self.iteration + 1;
        self.step_inner(data, it)
            .map_err(|e| Error::Training {
                iteration: it,
                source: Box::new(e),
            })?;
        self.iteration = it;
        Ok(())
    }

    fn step_inner(&mut self, data: &TrainingData, it: usize) -> Result<()> {
        let cfg = self.config.clone();
        let v = self.next_view(data.cameras.len());
        let cam = &data.cameras[v];
        let target = &data.images[v];
        let stage2 = self.cloud.instance.is_some();

        let ids: Vec<u32> = match (&data.labels, stage2) {
            (Some(labels), true) => sample_objects(&labels.maps[v], cfg.m_objects, &mut self.rng),
            _ => Vec::new(),
        };
        let req = RenderRequest::new(cam.clone())
            .with_background(cfg.background)
            .with_objects(ids.iter().copied());
        let (out, state) = render_with_state(&self.cloud, &req)?;

        let (l1, g_l1) = l1_loss_grad(&out.color, target)?;
        let (ssim, g_ssim) = ssim_loss_grad(&out.color, target)?;
        let mut g_color = g_l1;
        for (g, s) in g_color.data.iter_mut().zip(&g_ssim.data) {
            *g += cfg.lambda_ssim * s;
        }
        let (obj, g_occ) = if stage2 {
            let labels = data.labels.as_ref().ok_or_else(|| Error::invalid("stage 2 needs ID maps"))?;
            let (value, mut grads) = object_loss_grad(&out.occupancy, &labels.maps[v], &ids)?;
            for g in grads.values_mut() {
                g.data.iter_mut().for_each(|x| *x *= cfg.lambda_o);
            }
            (Some(value), grads)
        } else {
            (None, BTreeMap::new())
        };

        let up = Upstream {
            color: Some(&g_color),
            occupancy: (!g_occ.is_empty()).then_some(&g_occ),
        };
        let result = backward(&self.cloud, &state, &up)?;
        if stage2 && !g_occ.is_empty() && it % cfg.check_interval == 0 {
            self.check_separation(&state, &g_color, &g_occ)?;
        }

        let densifying = !stage2 && it < cfg.densify_until;
        if densifying {
            self.stats.add(&result.mean2d, &result.visible, cam.width, cam.height);
        }
        self.apply(&result.grads, it)?;

        if densifying {
            if it >= cfg.densify_from && it % cfg.densify_interval == 0 {
                densify_and_prune(
                    &mut self.cloud,
                    &self.stats,
                    &mut self.optim,
                    &mut self.lineage,
                    &cfg,
                    self.extent,
                    &mut self.rng,
                );
                self.stats = GradStats::new(self.cloud.len());
            }
            if cfg.opacity_reset_interval > 0 && it % cfg.opacity_reset_interval == 0 {
                opacity_reset(&mut self.cloud, Some(&mut self.optim));
            }
        }

        if it % cfg.log_interval == 0 || it == cfg.total_iters || it == cfg.stage2_start {
            self.log.records.push(MetricsRecord {
                iteration: it,
                stage: if stage2 { 2 } else { 1 },
                l1,
                ssim,
                obj,
                total: total_loss(l1, ssim, obj, &cfg.loss_weights()),
                psnr: psnr(&out.color, target)?,
                count: self.cloud.len(),
            });
        }

        if it == cfg.stage2_start && self.stage2_enabled {
            let labels = data
                .labels
                .as_ref()
                .ok_or_else(|| Error::invalid("stage 2 needs ID maps for every training view"))?;
            begin_stage2(&mut self.cloud, &data.cameras, labels)?;
            self.optim.instance_opacity = AdamGroup::zeros(self.cloud.len());
            self.stage2_entry_opacity = Some(self.cloud.opacity_logits.clone());
        }
        Ok(())
    }

    /// Asserts that the color loss leaves σ* untouched and the object loss
    /// leaves σ and color untouched.
    fn check_separation(
        &mut self,
        state: &crate::raster::ForwardState,
        g_color: &ImageBuffer,
        g_occ: &BTreeMap<u32, ImageBuffer>,
    ) -> Result<()> {
        let color_only = backward(
            &self.cloud,
            state,
            &Upstream {
                color: Some(g_color),
                occupancy: None,
            },
        )?
        .grads;
        let occ_only = backward(
            &self.cloud,
            state,
            &Upstream {
                color: None,
                occupancy: Some(g_occ),
            },
        )?
        .grads;
        let leaked_star = color_only.instance_opacity_logits.iter().any(|&g| g != 0.0);
        let leaked_sigma = occ_only.opacity_logits.iter().any(|&g| g != 0.0)
            || occ_only.sh_coeffs.iter().flatten().any(|&g| g != 0.0);
        if leaked_star || leaked_sigma {
            return Err(Error::invalid("gradient paths of the two opacities are not separated"));
        }
        self.separation_checks += 1;
        Ok(())
    }

    fn apply(&mut self, g: &GradientBuffer, it: usize) -> Result<()> {
        let cfg = &self.config;
        let c = &mut self.cloud;
        let k = c.sh_count();

        let lr_pos = exp_decay(cfg.lr_position_init, cfg.lr_position_final, it, cfg.total_iters) * self.extent;
        let mut p = flat3(&c.positions);
        adam_step(&mut p, &flat3(&g.positions), &mut self.optim.positions, lr_pos)?;
        unflat3(&p, &mut c.positions);

        let mut sh: Vec<f64> = c.sh_coeffs.iter().flatten().copied().collect();
        let gsh: Vec<f64> = g.sh_coeffs.iter().flatten().copied().collect();
        let (dc, rest) = (cfg.lr_sh_dc, cfg.lr_sh_rest);
        adam_step_with(&mut sh, &gsh, &mut self.optim.sh, |e| if (e / 3) % k == 0 { dc } else { rest })?;
        for (dst, src) in c.sh_coeffs.iter_mut().zip(sh.chunks_exact(3)) {
            dst.copy_from_slice(src);
        }

        adam_step(&mut c.opacity_logits, &g.opacity_logits, &mut self.optim.opacity, cfg.lr_opacity)?;
        if let Some(inst) = c.instance.as_mut() {
            adam_step(
                &mut inst.opacity_logits,
                &g.instance_opacity_logits,
                &mut self.optim.instance_opacity,
                cfg.instance_opacity_lr(),
            )?;
        }

        let mut q: Vec<f64> = c.rotations.iter().flatten().copied().collect();
        let gq: Vec<f64> = g.rotations.iter().flatten().copied().collect();
        adam_step(&mut q, &gq, &mut self.optim.rotations, cfg.lr_rotation)?;
        for (dst, src) in c.rotations.iter_mut().zip(q.chunks_exact(4)) {
            dst.copy_from_slice(src);
        }
        c.normalize_rotations();

        let mut s = flat3(&c.log_scales);
        adam_step(&mut s, &flat3(&g.log_scales), &mut self.optim.log_scales, cfg.lr_scale)?;
        unflat3(&s, &mut c.log_scales);
        Ok(())
    }
}

fn flat3(v: &[Vector3<f64>]) -> Vec<f64> {
    v.iter().flat_map(|x| [x.x, x.y, x.z]).collect()
}

fn unflat3(src: &[f64], dst: &mut [Vector3<f64>]) {
    for (d, s) in dst.iter_mut().zip(src.chunks_exact(3)) {
        *d = Vector3::new(s[0], s[1], s[2]);
    }
}

/// Final state of a completed run.
#[derive(Clone, Debug)]
pub struct TrainResult {
    pub cloud: GaussianCloud,
    pub log: MetricsLog,
    pub lineage: Vec<usize>,
}

/// Runs both stages to completion.
pub fn train(cloud: GaussianCloud, data: &TrainingData, config: TrainConfig) -> Result<TrainResult> {
    let mut t = Trainer::new(cloud, data, config)?;
    let total = t.config.total_iters;
    t.run_until(data, total)?;
    Ok(TrainResult {
        lineage: t.lineage.clone(),
        log: t.log.clone(),
        cloud: t.cloud,
    })
}
