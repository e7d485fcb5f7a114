//! Shared end-to-end floater scenario.
#![allow(dead_code)]

pub mod oracles;

use dualsplat::labeling::PseudoLabelSet;
use dualsplat::oracle::{generate_scene, initial_cloud, SceneSpec, SyntheticScene, SyntheticView};
use dualsplat::raster::{render, InstanceMapMode, RenderRequest};
use dualsplat::scene::{BinaryMask, GaussianCloud};
use dualsplat::segquery::{extract_mask, pooled_iou};
use dualsplat::train::{psnr, TrainConfig, Trainer, TrainingData};

pub const STAGE1_ITERS: usize = 3_000;
pub const STAGE2_ITERS: usize = 2_000;

pub struct Scenario {
    pub scene: SyntheticScene,
    pub data: TrainingData,
    pub config: TrainConfig,
}

pub fn scenario(seed: u64) -> Scenario {
    let spec = SceneSpec {
        seed,
        ..SceneSpec::default()
    };
    let scene = generate_scene(&spec).expect("scene");
    let data = TrainingData {
        cameras: scene.train_cameras(),
        images: scene.train.iter().map(|v| v.image.clone()).collect(),
        labels: Some(PseudoLabelSet::new(scene.train_id_maps(), scene.object_count).expect("labels")),
    };
    let mut config = TrainConfig::for_iterations(STAGE1_ITERS + STAGE2_ITERS);
    config.stage2_start = STAGE1_ITERS;
    config.seed = seed;
    // 128 px views: warm up before densifying and raise the screen-gradient
    // threshold, otherwise every primitive qualifies
    config.densify_from = 500;
    config.grad_threshold = 1e-3;
    Scenario { scene, data, config }
}

impl Scenario {
    pub fn trainer(&self) -> Trainer {
        Trainer::new(initial_cloud(&self.scene, self.config.seed), &self.data, self.config.clone()).expect("trainer")
    }
}

fn pool(per_view: Vec<Vec<(BinaryMask, BinaryMask)>>) -> Vec<f64> {
    let objects = per_view.first().map_or(0, Vec::len);
    (0..objects)
        .map(|j| pooled_iou(per_view.iter().map(|v| (&v[j].0, &v[j].1))).expect("same shapes"))
        .collect()
}

/// Per-object IoU of the thresholded occupancy maps, pooled over `views`.
pub fn occupancy_ious(cloud: &GaussianCloud, views: &[SyntheticView], tau: f64) -> Vec<f64> {
    let c = cloud.object_count();
    let per_view = views
        .iter()
        .map(|v| {
            let out = render(cloud, &RenderRequest::new(v.camera.clone()).with_objects(1..=c)).expect("render");
            (1..=c)
                .map(|j| (extract_mask(&out.occupancy[&j], tau).expect("mask"), v.true_mask(j)))
                .collect()
        })
        .collect();
    pool(per_view)
}

/// Per-object IoU of the label map rendered in `mode`, pooled over `views`.
pub fn label_ious(cloud: &GaussianCloud, views: &[SyntheticView], mode: InstanceMapMode) -> Vec<f64> {
    let c = cloud.object_count();
    let per_view = views
        .iter()
        .map(|v| {
            let out = render(cloud, &RenderRequest::new(v.camera.clone()).with_instance_map(mode)).expect("render");
            let labels = out.instance_labels.expect("label map");
            (1..=c).map(|j| (BinaryMask::from_ids(&labels, j), v.true_mask(j))).collect()
        })
        .collect();
    pool(per_view)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

pub fn mean_psnr(cloud: &GaussianCloud, views: &[SyntheticView]) -> f64 {
    mean(&views
        .iter()
        .map(|v| {
            let out = render(cloud, &RenderRequest::new(v.camera.clone())).expect("render");
            psnr(&out.color, &v.image).expect("psnr")
        })
        .collect::<Vec<_>>())
}

/// Current primitives descended from any of the scene's floaters.
pub fn floater_descendants(scene: &SyntheticScene, lineage: &[usize]) -> Vec<usize> {
    (0..lineage.len()).filter(|&i| scene.floaters.contains(&lineage[i])).collect()
}
