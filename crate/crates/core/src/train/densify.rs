use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use super::adam::AdamGroup;
use super::config::TrainConfig;
use crate::scene::{logit, quat_to_rotation, sigmoid, GaussianCloud};

/// Per-primitive Adam state, shaped like the cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub positions: AdamGroup,
    pub sh: AdamGroup,
    pub opacity: AdamGroup,
    /// Empty until stage 2.
    pub instance_opacity: AdamGroup,
    pub rotations: AdamGroup,
    pub log_scales: AdamGroup,
}

impl OptimizerState {
    pub fn new(cloud: &GaussianCloud) -> Self {
        let n = cloud.len();
        Self {
            positions: AdamGroup::zeros(3 * n),
            sh: AdamGroup::zeros(3 * n * cloud.sh_count()),
            opacity: AdamGroup::zeros(n),
            instance_opacity: AdamGroup::zeros(if cloud.instance.is_some() { n } else { 0 }),
            rotations: AdamGroup::zeros(4 * n),
            log_scales: AdamGroup::zeros(3 * n),
        }
    }

    fn remap(&mut self, indices: &[usize], fresh: usize, sh_count: usize) {
        self.positions.remap(indices, fresh, 3);
        self.sh.remap(indices, fresh, 3 * sh_count);
        self.opacity.remap(indices, fresh, 1);
        if !self.instance_opacity.is_empty() {
            self.instance_opacity.remap(indices, fresh, 1);
        }
        self.rotations.remap(indices, fresh, 4);
        self.log_scales.remap(indices, fresh, 3);
    }
}

/// Running mean of the screen-space position gradient norm per primitive.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradStats {
    pub accum: Vec<f64>,
    pub count: Vec<u32>,
}

impl GradStats {
    pub fn new(n: usize) -> Self {
        Self {
            accum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    /// Adds one view's pixel-space gradients, converted to NDC units.
    pub fn add(&mut self, mean2d: &[Vector2<f64>], visible: &[bool], width: u32, height: u32) {
        let (sx, sy) = (0.5 * width as f64, 0.5 * height as f64);
        for (i, (g, &vis)) in mean2d.iter().zip(visible).enumerate() {
            if vis {
                self.accum[i] += Vector2::new(g.x * sx, g.y * sy).norm();
                self.count[i] += 1;
            }
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.accum[i] / self.count[i] as f64
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Rebuilds the cloud from `keep` (old indices, in order) followed by
/// `extra` new primitives already appended to `grown`.
fn rebuild(
    cloud: &mut GaussianCloud,
    optim: &mut OptimizerState,
    lineage: &mut Vec<usize>,
    keep: &[usize],
    grown: GaussianCloud,
    grown_lineage: Vec<usize>,
) {
    let mut next = cloud.gather(keep);
    let fresh = grown.len();
    for i in 0..fresh {
        next.push(grown.primitive(i));
    }
    if let (Some(dst), Some(src)) = (next.instance.as_mut(), grown.instance.as_ref()) {
        let base = keep.len();
        dst.opacity_logits[base..].copy_from_slice(&src.opacity_logits);
        dst.labels[base..].copy_from_slice(&src.labels);
    }
    optim.remap(keep, fresh, cloud.sh_count());
    let mut next_lineage: Vec<usize> = keep.iter().map(|&i| lineage[i]).collect();
    next_lineage.extend(grown_lineage);
    *cloud = next;
    *lineage = next_lineage;
}

/// Clones small and splits large primitives whose mean screen gradient
/// reaches the threshold, then prunes by opacity. New primitives start with
/// zero moments; `lineage` maps each primitive to its original index.
pub fn densify_and_prune<R: Rng + ?Sized>(
    cloud: &mut GaussianCloud,
    stats: &GradStats,
    optim: &mut OptimizerState,
    lineage: &mut Vec<usize>,
    config: &TrainConfig,
    extent: f64,
    rng: &mut R,
) -> DensifyReport {
    let n = cloud.len();
    let limit = config.percent_dense * extent;
    let mut report = DensifyReport::default();
    let mut keep = Vec::with_capacity(n);
    let mut grown = GaussianCloud::new(cloud.sh_degree);
    grown.instance = cloud.instance.as_ref().map(|inst| crate::scene::InstanceField {
        opacity_logits: Vec::new(),
        labels: Vec::new(),
        object_count: inst.object_count,
    });
    let mut grown_lineage = Vec::new();
    let copy_instance = |grown: &mut GaussianCloud, i: usize| {
        if let (Some(dst), Some(src)) = (grown.instance.as_mut(), cloud.instance.as_ref()) {
            let last = dst.labels.len() - 1;
            dst.labels[last] = src.labels[i];
            dst.opacity_logits[last] = src.opacity_logits[i];
        }
    };

    for i in 0..n {
        let hot = stats.mean(i) >= config.grad_threshold;
        let scale = cloud.log_scales[i].map(f64::exp);
        if !hot {
            keep.push(i);
        } else if scale.max() <= limit {
            keep.push(i);
            grown.push(cloud.primitive(i));
            copy_instance(&mut grown, i);
            grown_lineage.push(lineage[i]);
            report.cloned += 1;
        } else {
            let rot = quat_to_rotation(cloud.rotations[i]);
            for _ in 0..2 {
                let z = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                let mut p = cloud.primitive(i);
                p.position += rot * scale.component_mul(&z);
                p.log_scale = cloud.log_scales[i].map(|s| s - 1.6f64.ln());
                grown.push(p);
                copy_instance(&mut grown, i);
                grown_lineage.push(lineage[i]);
            }
            report.split += 1;
        }
    }
    rebuild(cloud, optim, lineage, &keep, grown, grown_lineage);

    let survivors: Vec<usize> = (0..cloud.len())
        .filter(|&i| sigmoid(cloud.opacity_logits[i]) >= config.prune_opacity_threshold)
        .collect();
    report.pruned = cloud.len() - survivors.len();
    if report.pruned > 0 {
        let empty = GaussianCloud {
            instance: cloud.instance.as_ref().map(|inst| crate::scene::InstanceField {
                opacity_logits: Vec::new(),
                labels: Vec::new(),
                object_count: inst.object_count,
            }),
            ..GaussianCloud::new(cloud.sh_degree)
        };
        rebuild(cloud, optim, lineage, &survivors, empty, Vec::new());
    }
    report
}

/// Caps every opacity at 0.01 and clears the opacity moments.
pub fn opacity_reset(cloud: &mut GaussianCloud, optim: Option<&mut OptimizerState>) {
    let cap = logit(0.01);
    for l in &mut cloud.opacity_logits {
        *l = l.min(cap);
    }
    if let Some(o) = optim {
        o.opacity = AdamGroup::zeros(cloud.len());
    }
}
