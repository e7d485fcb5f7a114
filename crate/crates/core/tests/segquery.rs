use dualsplat::oracle::{random_cloud, test_camera};
use dualsplat::raster::{render, RenderRequest};
use dualsplat::scene::{BinaryMask, ImageBuffer};
use dualsplat::segquery::{
    aggregate_embedding, boundary, boundary_iou, build_pool, crop_object, default_band, dilate, extract_mask, iou,
    pooled_iou, query, query_vector, select_views, EmbeddingProvider, ObjectEmbeddingPool, StubProvider,
};
use dualsplat::{Error, Result};
use proptest::prelude::*;

fn rect(w: u32, h: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> BinaryMask {
    let mut m = BinaryMask::new(w, h);
    for y in y0..y1 {
        for x in x0..x1 {
            m.bits[(y * w + x) as usize] = true;
        }
    }
    m
}

#[test]
fn mask_threshold_is_strict() {
    let s = ImageBuffer::from_data(4, 1, 1, vec![0.2, 0.5, 0.50001, 1.0]).unwrap();
    assert_eq!(extract_mask(&s, 0.5).unwrap().bits, vec![false, false, true, true]);
    assert!(extract_mask(&s, 0.0).is_err());
    assert!(extract_mask(&s, 1.0).is_err());
    assert!(extract_mask(&ImageBuffer::new(2, 2, 3), 0.5).is_err());
}

#[test]
fn iou_of_shifted_squares() {
    // 10×10 squares offset by 2 px in x: 80 shared, 120 in the union
    let a = rect(32, 32, 5, 5, 15, 15);
    let b = rect(32, 32, 7, 5, 17, 15);
    assert!((iou(&a, &b).unwrap() - 80.0 / 120.0).abs() < 1e-12);
    assert_eq!(iou(&a, &a).unwrap(), 1.0);
    assert_eq!(iou(&BinaryMask::new(4, 4), &BinaryMask::new(4, 4)).unwrap(), 1.0);
    assert_eq!(iou(&a, &BinaryMask::new(32, 32)).unwrap(), 0.0);
    assert!(matches!(iou(&a, &BinaryMask::new(31, 32)), Err(Error::ShapeMismatch(_))));
}

#[test]
fn boundary_band_on_fixture() {
    let a = rect(20, 20, 5, 5, 15, 15);
    let edge = boundary(&a);
    assert_eq!(edge.count(), 36);
    assert!(edge.get(5, 5) && edge.get(14, 9) && !edge.get(9, 9));
    let band = dilate(&edge, 1);
    assert_eq!(band.count(), 12 * 12 - 6 * 6);
    assert_eq!(default_band(100, 100), 3);
    assert_eq!(default_band(10, 10), 1);
    // scored only inside the union of both bands
    let b = rect(20, 20, 7, 5, 17, 15);
    let ra = band.bits.clone();
    let rb = dilate(&boundary(&b), 1).bits;
    let inter = ra.iter().zip(&rb).filter(|(x, y)| **x && **y).count() as f64;
    let (mut i2, mut u2) = (0.0, 0.0);
    for k in 0..a.bits.len() {
        if ra[k] || rb[k] {
            i2 += (a.bits[k] && b.bits[k]) as u8 as f64;
            u2 += (a.bits[k] || b.bits[k]) as u8 as f64;
        }
    }
    assert!(inter > 0.0);
    assert!((boundary_iou(&a, &b, 1).unwrap() - i2 / u2).abs() < 1e-12);
    assert_eq!(boundary_iou(&a, &a, 2).unwrap(), 1.0);
}

#[test]
fn border_pixels_are_boundary() {
    let full = rect(6, 6, 0, 0, 6, 6);
    assert_eq!(boundary(&full).count(), 20);
}

#[test]
fn pooled_iou_sums_before_dividing() {
    let a = rect(10, 10, 0, 0, 2, 1);
    let b = rect(10, 10, 0, 0, 1, 1);
    let c = rect(10, 10, 0, 0, 8, 8);
    let p = pooled_iou([(&a, &b), (&c, &c)]).unwrap();
    assert!((p - 65.0 / 66.0).abs() < 1e-12);
}

struct Scripted {
    out: Vec<Vec<f64>>,
    calls: usize,
    sizes: Vec<(u32, u32)>,
}

impl EmbeddingProvider for Scripted {
    fn dimension(&self) -> usize {
        3
    }
    fn input_size(&self) -> u32 {
        8
    }
    fn embed_image(&mut self, img: &ImageBuffer) -> Result<Vec<f64>> {
        self.sizes.push((img.width, img.height));
        self.calls += 1;
        Ok(self.out[self.calls - 1].clone())
    }
    fn embed_text(&mut self, _: &str) -> Result<Vec<f64>> {
        Ok(vec![0.0, 0.0, 1.0])
    }
}

#[test]
fn aggregation_is_normalized_mean_of_non_empty_views() {
    let img = ImageBuffer::filled(10, 10, 3, 0.5);
    let full = rect(10, 10, 2, 2, 6, 8);
    let masks = vec![BinaryMask::new(10, 10), full.clone(), full.clone(), full.clone()];
    let imgs = vec![img; 4];
    let mut p = Scripted {
        out: vec![vec![1.0, 0.0, 0.0], vec![0.0, 3.0, 0.0], vec![9.0, 9.0, 9.0]],
        calls: 0,
        sizes: vec![],
    };
    let f = aggregate_embedding(&imgs, &masks, &mut p, 2).unwrap();
    let (a, b) = (0.5f64, 1.5f64);
    let n = (a * a + b * b).sqrt();
    assert!((f[0] - a / n).abs() < 1e-12 && (f[1] - b / n).abs() < 1e-12 && f[2] == 0.0);
    assert_eq!(p.calls, 2);
    assert_eq!(p.sizes, vec![(8, 8), (8, 8)]);
    assert!(matches!(
        aggregate_embedding(&imgs[..1], &masks[..1], &mut p, 2),
        Err(Error::NoVisibleViews)
    ));
}

#[test]
fn crop_is_masked_square_and_padded() {
    let mut img = ImageBuffer::filled(40, 20, 3, 0.9);
    for x in 0..40 {
        for y in 0..20 {
            img.set(x, y, 0, 0.2);
        }
    }
    let mask = rect(40, 20, 10, 5, 30, 10);
    let crop = crop_object(&img, &mask, 20).unwrap();
    assert_eq!((crop.width, crop.height, crop.channels), (20, 20, 3));
    // wide object: rows above and below the strip are black padding
    assert_eq!(crop.get(10, 0, 1), 0.0);
    assert!((crop.get(10, 10, 1) - 0.9).abs() < 1e-6);
    assert!(crop_object(&img, &BinaryMask::new(40, 20), 8).is_err());
}

fn pool(entries: &[(u32, Vec<f64>)]) -> ObjectEmbeddingPool {
    let mut p = ObjectEmbeddingPool::new(entries[0].1.len(), 1);
    for (id, f) in entries {
        p.insert(*id, f.clone()).unwrap();
    }
    p
}

fn brute_best(q: &[f64], p: &ObjectEmbeddingPool) -> u32 {
    let mut scored: Vec<(u32, f64)> = p
        .descriptors
        .iter()
        .map(|(&id, f)| {
            let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            let d: f64 = q.iter().zip(f).map(|(a, b)| a * b).sum();
            (id, if qn == 0.0 { 0.0 } else { d / qn })
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored[0].0
}

#[test]
fn query_picks_most_similar_and_breaks_ties_low() {
    let p = pool(&[(1, vec![1.0, 0.0]), (2, vec![0.0, 1.0]), (5, vec![1.0, 1.0])]);
    assert_eq!(query_vector(&[0.9, 0.1], &p).unwrap(), 1);
    assert_eq!(query_vector(&[0.6, 0.5], &p).unwrap(), 5);
    let tie = pool(&[(4, vec![1.0, 0.0]), (3, vec![2.0, 0.0])]);
    assert_eq!(query_vector(&[1.0, 0.0], &tie).unwrap(), 3);
    assert!(matches!(query_vector(&[1.0], &p), Err(Error::ShapeMismatch(_))));
    let empty = ObjectEmbeddingPool::new(2, 1);
    assert!(matches!(query_vector(&[1.0, 0.0], &empty), Err(Error::EmptyPool)));
    assert!(matches!(query("red", &empty, &mut StubProvider), Err(Error::EmptyPool)));
}

#[test]
fn pool_rejects_wrong_dimension() {
    let mut p = ObjectEmbeddingPool::new(3, 5);
    assert!(p.insert(1, vec![1.0, 2.0]).is_err());
    p.insert(1, vec![0.0, 3.0, 4.0]).unwrap();
    assert_eq!(p.descriptors[&1], vec![0.0, 0.6, 0.8]);
}

#[test]
fn view_selection_prefers_large_footprints() {
    let mut cloud = random_cloud(120, 2, 0, 4);
    cloud.instance.as_mut().unwrap().opacity_logits.iter_mut().for_each(|l| *l = 4.0);
    let near = test_camera(32, 32);
    let mut far = near.clone();
    far.translation.z = 3.0;
    let mut away = near.clone();
    away.translation.x = 50.0;
    let cams = vec![far.clone(), away, near.clone(), far];
    let views = select_views(&cloud, &cams, 1, 5).unwrap();
    assert_eq!(views, vec![2, 0, 3]);
    assert_eq!(select_views(&cloud, &cams, 1, 1).unwrap(), vec![2]);
    assert!(select_views(&cloud, &cams, 1, 0).is_err());
    assert!(render(&cloud, &RenderRequest::new(near).with_objects([9])).is_err());
}

#[test]
fn pool_covers_visible_objects_only() {
    let mut cloud = random_cloud(150, 3, 0, 7);
    let inst = cloud.instance.as_mut().unwrap();
    inst.opacity_logits.iter_mut().for_each(|l| *l = 4.0);
    inst.labels.iter_mut().for_each(|l| *l = if *l == 3 { 0 } else { *l });
    let cams = vec![test_camera(24, 24)];
    let imgs = vec![render(&cloud, &RenderRequest::new(cams[0].clone())).unwrap().color];
    let p = build_pool(&cloud, &cams, &imgs, &mut StubProvider, 5).unwrap();
    assert_eq!(p.descriptors.keys().copied().collect::<Vec<_>>(), vec![1, 2]);
    let mut bare = cloud.clone();
    bare.instance = None;
    assert!(matches!(build_pool(&bare, &cams, &imgs, &mut StubProvider, 5), Err(Error::NoInstanceField)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masks_shrink_as_threshold_rises(vals in proptest::collection::vec(0.0f64..1.0, 16), t1 in 0.01f64..0.99, t2 in 0.01f64..0.99) {
        let s = ImageBuffer::from_data(4, 4, 1, vals).unwrap();
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        let a = extract_mask(&s, lo).unwrap();
        let b = extract_mask(&s, hi).unwrap();
        prop_assert!(b.bits.iter().zip(&a.bits).all(|(hb, la)| !*hb || *la));
    }

    #[test]
    fn query_matches_brute_force_and_ignores_scale(
        descs in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 4), 1..8),
        q in proptest::collection::vec(-1.0f64..1.0, 4),
        k in 0.01f64..100.0,
    ) {
        prop_assume!(descs.iter().all(|d| d.iter().any(|x| x.abs() > 1e-3)));
        let entries: Vec<(u32, Vec<f64>)> = descs.into_iter().enumerate().map(|(i, d)| (i as u32 + 1, d)).collect();
        let p = pool(&entries);
        let best = query_vector(&q, &p).unwrap();
        prop_assert_eq!(best, brute_best(&q, &p));
        let scaled: Vec<f64> = q.iter().map(|x| x * k).collect();
        prop_assert_eq!(query_vector(&scaled, &p).unwrap(), best);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in proptest::collection::vec(any::<bool>(), 36), b in proptest::collection::vec(any::<bool>(), 36)) {
        let ma = BinaryMask { width: 6, height: 6, bits: a };
        let mb = BinaryMask { width: 6, height: 6, bits: b };
        let x = iou(&ma, &mb).unwrap();
        prop_assert_eq!(x, iou(&mb, &ma).unwrap());
        prop_assert!((0.0..=1.0).contains(&x));
        let y = boundary_iou(&ma, &mb, 1).unwrap();
        prop_assert!((0.0..=1.0).contains(&y));
    }
}
