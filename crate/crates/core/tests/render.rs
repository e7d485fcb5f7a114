use dualsplat::oracle::{oracle_render, oracle_render_with, random_cloud, test_camera, OracleOptions};
use dualsplat::raster::{bin_and_sort, render, InstanceMapMode, RenderOutput, RenderRequest};
use dualsplat::scene::{logit, project_gaussian, GaussianCloud};
use proptest::prelude::*;

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn assert_close(tiled: &RenderOutput, oracle: &RenderOutput, tol: f64) {
    assert!(max_diff(&tiled.color.data, &oracle.color.data) <= tol);
    assert!(max_diff(&tiled.final_transmittance.data, &oracle.final_transmittance.data) <= tol);
    assert_eq!(tiled.occupancy.keys().collect::<Vec<_>>(), oracle.occupancy.keys().collect::<Vec<_>>());
    for (j, s) in &tiled.occupancy {
        assert!(max_diff(&s.data, &oracle.occupancy[j].data) <= tol, "S_{j}");
    }
    assert_eq!(tiled.instance_labels, oracle.instance_labels);
}

#[test]
fn tiled_render_matches_oracle_on_random_scenes() {
    let cam = test_camera(64, 48);
    for seed in 0..5 {
        let cloud = random_cloud(150, 4, (seed % 4) as u8, seed);
        let req = RenderRequest::new(cam.clone())
            .with_objects(1..=4)
            .with_instance_map(InstanceMapMode::InstanceOpacity);
        let tiled = render(&cloud, &req).unwrap();
        let oracle = oracle_render(&cloud, &cam, &[1, 2, 3, 4]).unwrap();
        assert_close(&tiled, &oracle, 1e-5);
    }
}

#[test]
fn binning_matches_brute_force_overlap() {
    let cam = test_camera(64, 64);
    let cloud = random_cloud(50, 2, 0, 11);
    let list = bin_and_sort(&cloud, &cam, 16).unwrap();
    for ty in 0..list.tiles_y {
        for tx in 0..list.tiles_x {
            let tile = list.tile_index(tx, ty);
            let (x0, y0, x1, y1) = list.tile_pixels(tile, &cam);
            let mut expect: Vec<usize> = (0..cloud.len())
                .filter(|&i| {
                    project_gaussian(&cloud, i, &cam).is_some_and(|pg| {
                        let b = pg.bbox;
                        b.x0 <= x1 && b.x1 >= x0 && b.y0 <= y1 && b.y1 >= y0
                    })
                })
                .collect();
            let mut got: Vec<usize> = list.tiles[tile].iter().map(|&k| list.splats[k as usize].source_index).collect();
            expect.sort_unstable();
            got.sort_unstable();
            assert_eq!(got, expect, "tile ({tx}, {ty})");
        }
    }
}

#[test]
fn whole_image_splat_lands_in_every_tile() {
    let cam = test_camera(40, 40);
    let mut cloud = random_cloud(1, 1, 0, 3);
    cloud.positions[0] = nalgebra::Vector3::new(0.0, 0.0, 3.0);
    cloud.log_scales[0] = nalgebra::Vector3::repeat(0.5f64.ln());
    let list = bin_and_sort(&cloud, &cam, 16).unwrap();
    assert!(list.tiles.iter().all(|t| t.len() == 1));
    let empty = bin_and_sort(&GaussianCloud::new(0), &cam, 16).unwrap();
    assert!(empty.tiles.iter().all(Vec::is_empty));
}

#[test]
fn render_is_identical_across_thread_counts() {
    let cam = test_camera(64, 64);
    let cloud = random_cloud(300, 3, 2, 5);
    let req = RenderRequest::new(cam)
        .with_objects([1, 3])
        .with_instance_map(InstanceMapMode::InstanceOpacity);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| render(&cloud, &req).unwrap())
    };
    let a = run(1);
    let b = run(4);
    let bits = |o: &RenderOutput| -> Vec<u64> {
        let mut v: Vec<u64> = o.color.data.iter().map(|x| x.to_bits()).collect();
        v.extend(o.final_transmittance.data.iter().map(|x| x.to_bits()));
        for s in o.occupancy.values() {
            v.extend(s.data.iter().map(|x| x.to_bits()));
        }
        v
    };
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.instance_labels, b.instance_labels);
}

#[test]
fn label_map_needs_no_decoding_pass() {
    let cam = test_camera(32, 32);
    let cloud = random_cloud(80, 3, 0, 9);
    let out = render(&cloud, &RenderRequest::new(cam).with_objects([2]).with_instance_map(InstanceMapMode::InstanceOpacity)).unwrap();
    assert_eq!(out.stats.decode_passes, 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn early_termination_changes_little(seed in 0u64..1000) {
        let cam = test_camera(24, 24);
        let mut cloud = random_cloud(120, 2, 0, seed);
        cloud.opacity_logits.iter_mut().for_each(|l| *l = l.abs() + 2.0);
        let on = oracle_render(&cloud, &cam, &[1, 2]).unwrap();
        let opts = OracleOptions { terminate: false, ..OracleOptions::default() };
        let off = oracle_render_with(&cloud, &cam, &[1, 2], &opts, None).unwrap();
        prop_assert!(max_diff(&on.color.data, &off.color.data) <= 1e-3);
        for j in [1, 2] {
            prop_assert!(max_diff(&on.occupancy[&j].data, &off.occupancy[&j].data) <= 1e-3);
        }
    }

    #[test]
    fn occupancy_is_monotone_in_instance_opacity(seed in 0u64..1000, pick in 0usize..60, bump in 0.1f64..3.0) {
        let cam = test_camera(24, 24);
        let cloud = random_cloud(60, 2, 0, seed);
        let j = cloud.label(pick).unwrap();
        prop_assume!(j != 0);
        let mut raised = cloud.clone();
        raised.instance.as_mut().unwrap().opacity_logits[pick] += bump;
        let req = RenderRequest::new(cam).with_objects([j]);
        let a = render(&cloud, &req).unwrap();
        let b = render(&raised, &req).unwrap();
        for (x, y) in a.occupancy[&j].data.iter().zip(&b.occupancy[&j].data) {
            prop_assert!(*y >= *x - 1e-12);
        }
    }

    #[test]
    fn one_object_with_shared_opacity_covers_exactly(seed in 0u64..1000) {
        let cam = test_camera(24, 24);
        let mut cloud = random_cloud(80, 3, 1, seed);
        let inst = cloud.instance.as_mut().unwrap();
        inst.labels.iter_mut().for_each(|l| *l = 3);
        inst.opacity_logits = cloud.opacity_logits.clone();
        let out = render(&cloud, &RenderRequest::new(cam).with_objects([3])).unwrap();
        for (s, t) in out.occupancy[&3].data.iter().zip(&out.final_transmittance.data) {
            prop_assert!((s - (1.0 - t)).abs() <= 1e-12);
        }
    }

    #[test]
    fn outputs_are_finite_and_bounded(seed in 0u64..1000) {
        let cam = test_camera(20, 20);
        let mut cloud = random_cloud(60, 2, 3, seed);
        cloud.opacity_logits[0] = logit(0.999);
        let out = render(&cloud, &RenderRequest::new(cam).with_objects([1, 2])).unwrap();
        prop_assert!(out.color.data.iter().all(|v| v.is_finite()));
        prop_assert!(out.final_transmittance.data.iter().all(|t| (0.0..=1.0).contains(t)));
    }
}
