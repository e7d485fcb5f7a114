use std::path::Path;

use dualsplat::labeling::PseudoLabelSet;
use dualsplat::oracle::{generate_scene, initial_cloud, random_cloud, SceneSpec, SyntheticScene};
use dualsplat::scene::{logit, sigmoid, GaussianCloud};
use dualsplat::train::{
    adam_step, begin_stage2, densify_and_prune, exp_decay, opacity_reset, train, AdamGroup, GradStats,
    OptimizerState, Stage, TrainConfig, Trainer, TrainingData,
};
use dualsplat::Error;
use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn adam_matches_hand_trace() {
    let mut p = vec![1.0, -2.0];
    let mut st = AdamGroup::zeros(2);
    let grads = [[0.5, -1.0], [0.25, 0.0], [-0.5, 2.0]];
    let lr = 0.1;
    let (mut m, mut v) = ([0.0f64; 2], [0.0f64; 2]);
    let mut expect = p.clone();
    for (t, g) in grads.iter().enumerate() {
        adam_step(&mut p, g, &mut st, lr).unwrap();
        let t = t as i32 + 1;
        for k in 0..2 {
            m[k] = 0.9 * m[k] + 0.1 * g[k];
            v[k] = 0.999 * v[k] + 0.001 * g[k] * g[k];
            let mh = m[k] / (1.0 - 0.9f64.powi(t));
            let vh = v[k] / (1.0 - 0.999f64.powi(t));
            expect[k] -= lr * mh / (vh.sqrt() + 1e-15);
        }
        assert_eq!(st.step, t as u64);
        for k in 0..2 {
            assert!((p[k] - expect[k]).abs() < 1e-14);
        }
    }
    // the very first step moves every coordinate by lr·sign(g)
    let mut q = vec![0.0; 3];
    adam_step(&mut q, &[3.0, -0.001, 0.0], &mut AdamGroup::zeros(3), 0.01).unwrap();
    assert!((q[0] + 0.01).abs() < 1e-12 && (q[1] - 0.01).abs() < 1e-12 && q[2] == 0.0);
    assert!(matches!(
        adam_step(&mut q, &[f64::NAN, 0.0, 0.0], &mut AdamGroup::zeros(3), 0.01),
        Err(Error::NonFinite(_))
    ));
}

#[test]
fn position_rate_decays_exponentially() {
    assert!((exp_decay(1.6e-4, 1.6e-6, 0, 100) - 1.6e-4).abs() < 1e-18);
    assert!((exp_decay(1.6e-4, 1.6e-6, 100, 100) - 1.6e-6).abs() < 1e-18);
    assert!((exp_decay(1.6e-4, 1.6e-6, 50, 100) - 1.6e-5).abs() < 1e-17);
}

#[test]
fn config_defaults_scaling_and_round_trip() {
    let d = TrainConfig::default();
    assert_eq!((d.total_iters, d.stage2_start, d.m_objects), (30_000, 20_000, 3));
    assert_eq!((d.lambda_o, d.lambda_ssim), (0.1, 0.2));
    let s = TrainConfig::for_iterations(3_000);
    assert_eq!((s.stage2_start, s.densify_until, s.opacity_reset_interval), (2_000, 1_500, 300));
    s.validate().unwrap();

    let mut c = TrainConfig::for_iterations(5_000);
    c.lr_instance_opacity = Some(0.02);
    c.background = [0.25, 0.5, 1.0];
    c.seed = 99;
    let back = TrainConfig::from_text(&c.to_text(), Path::new("c.cfg")).unwrap();
    assert_eq!(back, c);

    let over = TrainConfig::from_text("total_iters = 3000\nlambda_o = 0.3\n", Path::new("c.cfg")).unwrap();
    assert_eq!(over.lambda_o, 0.3);
    assert_eq!(over.stage2_start, 2_000);
}

#[test]
fn config_errors_carry_line_numbers() {
    let p = Path::new("bad.cfg");
    match TrainConfig::from_text("lambda_o = 0.1\n\nlambda_ssim = nope\n", p) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    match TrainConfig::from_text("# c\nwhat = 1\n", p) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn stage2_must_clear_the_last_reset() {
    let mut c = TrainConfig::default();
    assert_eq!(c.last_reset(), Some(12_000));
    c.validate().unwrap();
    c.densify_until = 25_000;
    c.stage2_start = 18_200;
    assert_eq!(c.last_reset(), Some(18_000));
    assert!(c.validate().is_err());
    c.stage2_start = 18_500;
    c.validate().unwrap();
    c.stage2_start = 0;
    assert!(c.validate().is_err());
}

fn one_primitive(log_scale: f64) -> GaussianCloud {
    let mut c = random_cloud(1, 1, 0, 1);
    c.instance = None;
    c.opacity_logits[0] = logit(0.5);
    c.log_scales[0] = Vector3::repeat(log_scale);
    c
}

fn hot_stats(n: usize) -> GradStats {
    let mut s = GradStats::new(n);
    s.add(&vec![Vector2::new(1.0, 0.0); n], &vec![true; n], 64, 64);
    s
}

#[test]
fn small_hot_primitives_are_cloned() {
    let mut cloud = one_primitive((0.005f64).ln());
    let mut optim = OptimizerState::new(&cloud);
    optim.positions.m = vec![1.0; 3];
    let mut lineage = vec![0];
    let cfg = TrainConfig::default();
    let r = densify_and_prune(&mut cloud, &hot_stats(1), &mut optim, &mut lineage, &cfg, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
    assert_eq!((r.cloned, r.split, r.pruned), (1, 0, 0));
    assert_eq!(cloud.len(), 2);
    assert_eq!(cloud.positions[0], cloud.positions[1]);
    assert_eq!(lineage, vec![0, 0]);
    assert_eq!(optim.positions.m, vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn large_hot_primitives_are_split() {
    let s = (0.05f64).ln();
    let mut cloud = one_primitive(s);
    let mut optim = OptimizerState::new(&cloud);
    let mut lineage = vec![0];
    let cfg = TrainConfig::default();
    let r = densify_and_prune(&mut cloud, &hot_stats(1), &mut optim, &mut lineage, &cfg, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
    assert_eq!((r.cloned, r.split), (0, 1));
    assert_eq!(cloud.len(), 2);
    for i in 0..2 {
        assert!((cloud.log_scales[i].x - (s - 1.6f64.ln())).abs() < 1e-12);
    }
    assert_eq!(optim.opacity.len(), 2);
}

#[test]
fn cold_primitives_stay_and_faint_ones_are_pruned() {
    let mut cloud = random_cloud(4, 1, 0, 2);
    cloud.instance = None;
    cloud.opacity_logits = vec![logit(0.5), logit(0.001), logit(0.3), logit(0.004)];
    let mut optim = OptimizerState::new(&cloud);
    let mut lineage = vec![0, 1, 2, 3];
    let r = densify_and_prune(
        &mut cloud,
        &GradStats::new(4),
        &mut optim,
        &mut lineage,
        &TrainConfig::default(),
        1.0,
        &mut ChaCha8Rng::seed_from_u64(0),
    );
    assert_eq!(r.pruned, 2);
    assert_eq!(lineage, vec![0, 2]);
    assert_eq!(optim.rotations.len(), 8);
}

#[test]
fn opacity_reset_caps_and_clears_moments() {
    let mut cloud = random_cloud(5, 1, 0, 3);
    cloud.opacity_logits[0] = logit(0.001);
    let before0 = cloud.opacity_logits[0];
    let mut optim = OptimizerState::new(&cloud);
    optim.opacity.m = vec![0.3; 5];
    opacity_reset(&mut cloud, Some(&mut optim));
    assert_eq!(cloud.opacity_logits[0], before0);
    assert!(cloud.opacity_logits.iter().all(|&l| sigmoid(l) <= 0.01 + 1e-12));
    assert!(optim.opacity.m.iter().all(|&m| m == 0.0));
}

fn small_scene() -> SyntheticScene {
    generate_scene(&SceneSpec {
        objects: 2,
        per_object: 80,
        floaters: 1,
        train_views: 6,
        eval_views: 2,
        resolution: 32,
        ..SceneSpec::default()
    })
    .unwrap()
}

fn small_data(scene: &SyntheticScene) -> TrainingData {
    TrainingData {
        cameras: scene.train_cameras(),
        images: scene.train.iter().map(|v| v.image.clone()).collect(),
        labels: Some(PseudoLabelSet::new(scene.train_id_maps(), scene.object_count).unwrap()),
    }
}

fn small_config() -> TrainConfig {
    let mut c = TrainConfig::for_iterations(60);
    c.opacity_reset_interval = 0;
    c.densify_from = 10;
    c.densify_interval = 10;
    c.log_interval = 10;
    c.check_interval = 5;
    c
}

#[test]
fn begin_stage2_copies_opacity() {
    let scene = small_scene();
    let data = small_data(&scene);
    let mut cloud = initial_cloud(&scene, 0);
    cloud.opacity_logits.iter_mut().enumerate().for_each(|(i, l)| *l += 0.01 * i as f64);
    begin_stage2(&mut cloud, &data.cameras, data.labels.as_ref().unwrap()).unwrap();
    let inst = cloud.instance.as_ref().unwrap();
    assert_eq!(inst.opacity_logits, cloud.opacity_logits);
    assert_eq!(inst.object_count, 2);
    let short = PseudoLabelSet::new(data.labels.as_ref().unwrap().maps[..2].to_vec(), 2).unwrap();
    assert!(begin_stage2(&mut cloud.clone(), &data.cameras, &short).is_err());
}

#[test]
fn two_stage_run_is_reproducible_and_keeps_count() {
    let scene = small_scene();
    let data = small_data(&scene);
    let cfg = small_config();
    let mut t = Trainer::new(initial_cloud(&scene, 0), &data, cfg.clone()).unwrap();
    t.run_until(&data, cfg.stage2_start).unwrap();
    assert_eq!(t.stage(), Stage::Instance);
    let n = t.cloud().len();
    let entry = t.cloud().clone();
    assert_eq!(entry.instance.as_ref().unwrap().opacity_logits, entry.opacity_logits);
    t.run_until(&data, cfg.total_iters).unwrap();
    assert_eq!(t.cloud().len(), n);
    assert_eq!(t.cloud().instance.as_ref().unwrap().labels, entry.instance.as_ref().unwrap().labels);
    assert!(t.separation_checks() > 0);

    let again = train(initial_cloud(&scene, 0), &data, cfg.clone()).unwrap();
    assert_eq!(&again.cloud, t.cloud());
    assert_eq!(again.log.to_text(), t.log().to_text());
    assert!(again.log.records.iter().any(|r| r.stage == 2 && r.obj.is_some()));
    assert!(again.log.records.iter().all(|r| (r.stage == 1) == r.obj.is_none()));
}

#[test]
fn zero_object_weight_leaves_instance_opacity_alone() {
    let scene = small_scene();
    let data = small_data(&scene);
    let mut cfg = small_config();
    cfg.lambda_o = 0.0;
    let mut t = Trainer::new(initial_cloud(&scene, 0), &data, cfg.clone()).unwrap();
    t.run_until(&data, cfg.stage2_start).unwrap();
    let at_entry = t.cloud().instance.as_ref().unwrap().opacity_logits.clone();
    t.run_until(&data, cfg.total_iters).unwrap();
    assert_eq!(t.cloud().instance.as_ref().unwrap().opacity_logits, at_entry);
}

#[test]
fn stage1_never_creates_instance_field() {
    let scene = small_scene();
    let data = small_data(&scene);
    let cfg = small_config();
    let mut t = Trainer::new(initial_cloud(&scene, 0), &data, cfg.clone()).unwrap();
    t.disable_stage2();
    t.run_until(&data, cfg.total_iters).unwrap();
    assert!(t.cloud().instance.is_none());
    assert_eq!(t.stage(), Stage::Appearance);
    for q in &t.cloud().rotations {
        let n: f64 = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }
}

#[test]
fn disabling_after_entry_matches_disabling_before() {
    let scene = small_scene();
    let data = small_data(&scene);
    let cfg = small_config();
    let mut early = Trainer::new(initial_cloud(&scene, 0), &data, cfg.clone()).unwrap();
    early.run_until(&data, cfg.stage2_start - 1).unwrap();
    let mut late = early.clone();
    early.disable_stage2();
    late.run_until(&data, cfg.stage2_start).unwrap();
    assert!(late.cloud().instance.is_some());
    late.disable_stage2();
    early.run_until(&data, cfg.total_iters).unwrap();
    late.run_until(&data, cfg.total_iters).unwrap();
    assert!(late.cloud().instance.is_none());
    assert_eq!(early.cloud(), late.cloud());
}

#[test]
fn stage2_without_labels_is_an_error() {
    let scene = small_scene();
    let mut data = small_data(&scene);
    data.labels = None;
    let cfg = small_config();
    let mut t = Trainer::new(initial_cloud(&scene, 0), &data, cfg.clone()).unwrap();
    match t.run_until(&data, cfg.total_iters) {
        Err(Error::Training { iteration, .. }) => assert_eq!(iteration, cfg.stage2_start),
        other => panic!("{other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn adam_keeps_shapes_and_is_finite(g in proptest::collection::vec(-10.0f64..10.0, 1..20), lr in 1e-5f64..1.0) {
        let mut p = vec![0.5; g.len()];
        let mut st = AdamGroup::zeros(g.len());
        for _ in 0..3 {
            adam_step(&mut p, &g, &mut st, lr).unwrap();
        }
        prop_assert!(p.iter().all(|x| x.is_finite()));
        prop_assert_eq!(st.m.len(), g.len());
    }

    #[test]
    fn scaled_configs_validate(total in 2_000usize..60_000) {
        let c = TrainConfig::for_iterations(total);
        prop_assert!(c.validate().is_ok());
        prop_assert!(c.stage2_start < total);
    }
}
