mod support;

use std::collections::BTreeMap;

use dualsplat::loss::{
    l1_loss, l1_loss_grad, object_ce_loss, object_ce_loss_grad, object_loss_grad, sample_objects, ssim, ssim_loss,
    ssim_loss_grad, total_loss, LossWeights, CE_EPSILON,
};
use dualsplat::scene::{BinaryMask, IdMap, ImageBuffer};
use proptest::prelude::*;
use support::oracles::reference_ssim;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(w: u32, h: u32, c: u8, seed: u64) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (w * h) as usize * c as usize;
    ImageBuffer::from_data(w, h, c, (0..n).map(|_| rng.random::<f64>()).collect()).unwrap()
}

fn random_mask(w: u32, h: u32, seed: u64) -> BinaryMask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    BinaryMask {
        width: w,
        height: h,
        bits: (0..w * h).map(|_| rng.random_bool(0.4)).collect(),
    }
}

#[test]
fn l1_basics_and_scalar_oracle() {
    let a = random_image(9, 7, 3, 1);
    assert_eq!(l1_loss(&a, &a).unwrap(), 0.0);
    let zeros = ImageBuffer::filled(4, 4, 3, 0.0);
    let ones = ImageBuffer::filled(4, 4, 3, 1.0);
    assert_eq!(l1_loss(&zeros, &ones).unwrap(), 1.0);
    let b = random_image(9, 7, 3, 2);
    let mut sum = 0.0;
    for k in 0..a.data.len() {
        sum += (a.data[k] - b.data[k]).abs();
    }
    assert!((l1_loss(&a, &b).unwrap() - sum / a.data.len() as f64).abs() < 1e-12);
    assert!(l1_loss(&a, &ones).is_err());
}

#[test]
fn ssim_matches_direct_windowed_reference() {
    let a = random_image(16, 16, 3, 3);
    let b = random_image(16, 16, 3, 4);
    let fast = ssim(&a, &b).unwrap();
    assert!((fast - reference_ssim(&a, &b)).abs() <= 1e-6, "{fast}");
    let smooth = ImageBuffer::from_data(16, 16, 3, a.data.iter().map(|v| 0.5 + 0.3 * v).collect()).unwrap();
    assert!((ssim(&a, &smooth).unwrap() - reference_ssim(&a, &smooth)).abs() <= 1e-6);
}

#[test]
fn ssim_loss_edge_cases() {
    let a = random_image(12, 12, 3, 5);
    assert!(ssim_loss(&a, &a).unwrap().abs() < 1e-12);
    let flat = ImageBuffer::filled(12, 12, 3, 0.4);
    let mut noisy = flat.clone();
    for (k, v) in noisy.data.iter_mut().enumerate() {
        *v += if (k / 3) % 2 == 0 { 0.1 } else { -0.1 };
    }
    assert!(ssim_loss(&flat, &noisy).unwrap() > 0.0);
    let small = ImageBuffer::filled(10, 12, 3, 0.0);
    assert!(ssim_loss(&small, &small).is_err());
}

fn fd_check(f: impl Fn(&ImageBuffer) -> f64, x: &ImageBuffer, grad: &ImageBuffer, tol: f64) {
    let h = 1e-6;
    for k in (0..x.data.len()).step_by(7) {
        let mut p = x.clone();
        p.data[k] += h;
        let mut m = x.clone();
        m.data[k] -= h;
        let numeric = (f(&p) - f(&m)) / (2.0 * h);
        assert!((numeric - grad.data[k]).abs() <= tol, "entry {k}: {numeric} vs {}", grad.data[k]);
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    let a = random_image(14, 13, 3, 6);
    let b = random_image(14, 13, 3, 7);
    let (_, g) = ssim_loss_grad(&a, &b).unwrap();
    fd_check(|x| ssim_loss(x, &b).unwrap(), &a, &g, 1e-7);
    let (_, g) = l1_loss_grad(&a, &b).unwrap();
    fd_check(|x| l1_loss(x, &b).unwrap(), &a, &g, 1e-7);
    let s = random_image(10, 10, 1, 8);
    let mask = random_mask(10, 10, 9);
    let (_, g) = object_ce_loss_grad(&s, &mask).unwrap();
    fd_check(|x| object_ce_loss(x, &mask).unwrap(), &s, &g, 1e-5);
}

#[test]
fn cross_entropy_reference_values() {
    let half = ImageBuffer::filled(8, 8, 1, 0.5);
    let mask = random_mask(8, 8, 10);
    assert!((object_ce_loss(&half, &mask).unwrap() - std::f64::consts::LN_2).abs() <= 1e-9);

    let mut sat = ImageBuffer::new(8, 8, 1);
    for (v, &b) in sat.data.iter_mut().zip(&mask.bits) {
        *v = if b { 1.0 - CE_EPSILON } else { CE_EPSILON };
    }
    let l = object_ce_loss(&sat, &mask).unwrap();
    assert!(l > 0.0 && l < 2e-6);

    let s = random_image(11, 9, 1, 11);
    let m = random_mask(11, 9, 12);
    let mut sum = 0.0;
    for k in 0..s.data.len() {
        let p = s.data[k].clamp(CE_EPSILON, 1.0 - CE_EPSILON);
        sum += if m.bits[k] { -p.ln() } else { -(1.0 - p).ln() };
    }
    assert!((object_ce_loss(&s, &m).unwrap() - sum / s.data.len() as f64).abs() <= 1e-9);
}

#[test]
fn clamped_pixels_get_no_gradient() {
    let s = ImageBuffer::from_data(2, 1, 1, vec![1.3, 0.0]).unwrap();
    let m = BinaryMask {
        width: 2,
        height: 1,
        bits: vec![true, false],
    };
    let (_, g) = object_ce_loss_grad(&s, &m).unwrap();
    assert_eq!(g.data, vec![0.0, 0.0]);
}

#[test]
fn sampling_rules() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let single = IdMap::from_data(2, 2, vec![0, 4, 4, 0]).unwrap();
    assert_eq!(sample_objects(&single, 3, &mut rng), vec![4]);
    let three = IdMap::from_data(3, 1, vec![3, 1, 2]).unwrap();
    assert_eq!(sample_objects(&three, 3, &mut rng), vec![1, 2, 3]);
    let none = IdMap::from_data(2, 1, vec![0, 0]).unwrap();
    assert!(sample_objects(&none, 2, &mut rng).is_empty());

    let four = IdMap::from_data(4, 1, vec![1, 2, 3, 4]).unwrap();
    let mut counts = [0usize; 5];
    let draws = 10_000;
    for _ in 0..draws {
        let s = sample_objects(&four, 1, &mut rng);
        counts[s[0] as usize] += 1;
    }
    for &c in &counts[1..] {
        let f = c as f64 / draws as f64;
        assert!((0.24..=0.26).contains(&f), "{counts:?}");
    }

    let a = sample_objects(&four, 2, &mut ChaCha8Rng::seed_from_u64(42));
    let b = sample_objects(&four, 2, &mut ChaCha8Rng::seed_from_u64(42));
    assert_eq!(a, b);
}

#[test]
fn every_object_is_eventually_sampled() {
    let map = IdMap::from_data(6, 1, vec![0, 1, 2, 3, 4, 5]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut seen = [false; 6];
    for _ in 0..200 {
        for id in sample_objects(&map, 1, &mut rng) {
            seen[id as usize] = true;
        }
    }
    assert!(seen[1..].iter().all(|&s| s));
}

#[test]
fn object_loss_averages_sampled_terms() {
    let ids = IdMap::from_data(8, 8, (0..64).map(|k| (k % 4) as u32).collect()).unwrap();
    let mut occ = BTreeMap::new();
    for j in [1, 3] {
        occ.insert(j, random_image(8, 8, 1, j as u64));
    }
    let (value, grads) = object_loss_grad(&occ, &ids, &[1, 3]).unwrap();
    let e1 = object_ce_loss(&occ[&1], &BinaryMask::from_ids(&ids, 1)).unwrap();
    let e3 = object_ce_loss(&occ[&3], &BinaryMask::from_ids(&ids, 3)).unwrap();
    assert!((value - 0.5 * (e1 + e3)).abs() < 1e-12);
    let (_, g1) = object_ce_loss_grad(&occ[&1], &BinaryMask::from_ids(&ids, 1)).unwrap();
    for (a, b) in grads[&1].data.iter().zip(&g1.data) {
        assert!((a - 0.5 * b).abs() < 1e-15);
    }
    let (single, _) = object_loss_grad(&occ, &ids, &[3]).unwrap();
    assert!((single - e3).abs() < 1e-12);
    let (empty, g) = object_loss_grad(&occ, &ids, &[]).unwrap();
    assert_eq!(empty, 0.0);
    assert!(g.is_empty());
}

#[test]
fn total_objective_arithmetic() {
    let w = LossWeights::default();
    assert_eq!((w.lambda_ssim, w.lambda_o, w.m_objects), (0.2, 0.1, 3));
    assert!((total_loss(0.5, 0.25, Some(1.0), &w) - 0.65).abs() < 1e-15);
    assert_eq!(total_loss(0.5, 0.25, Some(0.0), &w), total_loss(0.5, 0.25, None, &w));
    assert!(LossWeights { m_objects: 0, ..w }.validate().is_err());
}

proptest! {
    #[test]
    fn ce_gradient_sign_follows_error(s in 1e-4f64..0.9999, b in any::<bool>()) {
        let img = ImageBuffer::from_data(1, 1, 1, vec![s]).unwrap();
        let m = BinaryMask { width: 1, height: 1, bits: vec![b] };
        let (_, g) = object_ce_loss_grad(&img, &m).unwrap();
        let target = if b { 1.0 } else { 0.0 };
        prop_assert_eq!(g.data[0] >= 0.0, s >= target);
    }

    #[test]
    fn total_is_linear(l1 in 0.0f64..2.0, ss in 0.0f64..2.0, obj in 0.0f64..5.0, lo in 0.0f64..1.0, ls in 0.0f64..1.0) {
        let w = LossWeights { lambda_ssim: ls, lambda_o: lo, m_objects: 2 };
        let t = total_loss(l1, ss, Some(obj), &w);
        prop_assert!((t - (l1 + ls * ss + lo * obj)).abs() < 1e-12);
    }

    #[test]
    fn ssim_is_symmetric(seed in 0u64..500) {
        let a = random_image(12, 11, 3, seed);
        let b = random_image(12, 11, 3, seed + 1000);
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
    }
}
