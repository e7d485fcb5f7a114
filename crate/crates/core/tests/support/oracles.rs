//! Independent reference implementations shared by the test targets.

use dualsplat::oracle::test_camera;
use dualsplat::scene::{Camera, IdMap, ImageBuffer};
use nalgebra::Vector3;

/// Direct 2D windowed SSIM: every window sum is evaluated explicitly, with
/// out-of-image taps contributing zero.
pub fn reference_ssim(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    let (w, h, ch) = (a.width as i64, a.height as i64, a.channels);
    let sigma: f64 = 1.5;
    let raw: Vec<f64> = (-5..=5).map(|k: i64| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = raw.iter().sum();
    let g: Vec<f64> = raw.iter().map(|v| v / norm).collect();
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    for c in 0..ch {
        for y in 0..h {
            for x in 0..w {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in -5..=5i64 {
                    for dx in -5..=5i64 {
                        let (xx, yy) = (x + dx, y + dy);
                        if xx < 0 || yy < 0 || xx >= w || yy >= h {
                            continue;
                        }
                        let wt = g[(dx + 5) as usize] * g[(dy + 5) as usize];
                        let va = a.get(xx as u32, yy as u32, c);
                        let vb = b.get(xx as u32, yy as u32, c);
                        ma += wt * va;
                        mb += wt * vb;
                        saa += wt * va * va;
                        sbb += wt * vb * vb;
                        sab += wt * va * vb;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
    }
    total / (w * h * ch as i64) as f64
}

// Independent reference: pinhole projection written out by hand, counting
// votes in a plain array.
pub fn brute_vote(mu: &Vector3<f64>, cams: &[Camera], maps: &[IdMap], c: u32) -> u32 {
    let mut counts = vec![0u32; c as usize + 1];
    for (cam, map) in cams.iter().zip(maps) {
        let t = cam.rotation * mu + cam.translation;
        if t.z <= 0.01 {
            continue;
        }
        let u = cam.fx * t.x / t.z + cam.cx;
        let v = cam.fy * t.y / t.z + cam.cy;
        let (x, y) = (u.round(), v.round());
        if x < 0.0 || y < 0.0 || x >= cam.width as f64 || y >= cam.height as f64 {
            continue;
        }
        counts[map.data[y as usize * map.width as usize + x as usize] as usize] += 1;
    }
    let mut best = 0;
    for k in 1..counts.len() {
        if counts[k] > counts[best] {
            best = k;
        }
    }
    best as u32
}


/// Uniformly random ID maps from a fixed LCG.
pub fn random_maps(n: usize, w: u32, h: u32, c: u32, seed: u64) -> Vec<IdMap> {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
    (0..n)
        .map(|_| {
            let data = (0..w * h)
                .map(|_| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    ((s >> 33) % (c as u64 + 1)) as u32
                })
                .collect();
            IdMap::from_data(w, h, data).unwrap()
        })
        .collect()
}

/// Copies of the test camera stepped sideways and back.
pub fn shifted_cameras(n: usize, w: u32, h: u32) -> Vec<Camera> {
    (0..n)
        .map(|k| {
            let mut c = test_camera(w, h);
            c.translation = Vector3::new(0.05 * k as f64 - 0.1, -0.03 * k as f64, 0.1 * k as f64);
            c
        })
        .collect()
}
