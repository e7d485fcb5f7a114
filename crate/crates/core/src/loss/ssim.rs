//! SSIM with an 11×11 Gaussian window (σ = 1.5), zero-padded "same"
//! filtering, and its exact gradient.

use crate::error::{Error, Result};
use crate::scene::ImageBuffer;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Normalized 1D Gaussian taps; the 2D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (k, t) in taps.iter_mut().enumerate() {
        let d = k as f64 - half;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.map(|t| t / sum)
}

/// Separable zero-padded filtering of a single-channel plane.
fn filter(plane: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let half = SSIM_WINDOW as isize / 2;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let xx = x as isize + k as isize - half;
                if xx >= 0 && (xx as usize) < w {
                    acc += t * plane[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let yy = y as isize + k as isize - half;
                if yy >= 0 && (yy as usize) < h {
                    acc += t * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn check(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    a.ensure_same_shape(b)?;
    if (a.width as usize) < SSIM_WINDOW || (a.height as usize) < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            a.width, a.height
        )));
    }
    Ok(())
}

fn plane(img: &ImageBuffer, c: usize) -> Vec<f64> {
    let ch = img.channels as usize;
    img.data.iter().skip(c).step_by(ch).copied().collect()
}

/// Mean SSIM over pixels and channels, plus ∂(mean SSIM)/∂a if asked.
fn ssim_impl(a: &ImageBuffer, b: &ImageBuffer, want_grad: bool) -> Result<(f64, Option<ImageBuffer>)> {
    check(a, b)?;
    let (w, h) = (a.width as usize, a.height as usize);
    let ch = a.channels as usize;
    let taps = gaussian_taps();
    let n = (w * h * ch) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| ImageBuffer::new(a.width, a.height, a.channels));

    for c in 0..ch {
        let x = plane(a, c);
        let y = plane(b, c);
        let sq = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| u * v).collect() };
        let mx = filter(&x, w, h, &taps);
        let my = filter(&y, w, h, &taps);
        let exx = filter(&sq(&x, &x), w, h, &taps);
        let eyy = filter(&sq(&y, &y), w, h, &taps);
        let exy = filter(&sq(&x, &y), w, h, &taps);

        let mut d_mx = vec![0.0; w * h];
        let mut d_exx = vec![0.0; w * h];
        let mut d_exy = vec![0.0; w * h];
        for p in 0..w * h {
            let n1 = 2.0 * mx[p] * my[p] + SSIM_C1;
            let n2 = 2.0 * (exy[p] - mx[p] * my[p]) + SSIM_C2;
            let d1 = mx[p] * mx[p] + my[p] * my[p] + SSIM_C1;
            let d2 = (exx[p] - mx[p] * mx[p]) + (eyy[p] - my[p] * my[p]) + SSIM_C2;
            let s = n1 * n2 / (d1 * d2);
            total += s;
            if want_grad {
                let ds_n1 = n2 / (d1 * d2);
                let ds_n2 = n1 / (d1 * d2);
                let ds_d1 = -s / d1;
                let ds_d2 = -s / d2;
                d_mx[p] = (ds_n1 * 2.0 * my[p] - ds_n2 * 2.0 * my[p] + ds_d1 * 2.0 * mx[p]
                    - ds_d2 * 2.0 * mx[p])
                    / n;
                d_exx[p] = ds_d2 / n;
                d_exy[p] = 2.0 * ds_n2 / n;
            }
        }
        if let Some(g) = grad.as_mut() {
            // the window is symmetric, so filtering is self-adjoint
            let ga = filter(&d_mx, w, h, &taps);
            let gb = filter(&d_exx, w, h, &taps);
            let gc = filter(&d_exy, w, h, &taps);
            for p in 0..w * h {
                g.data[p * ch + c] = ga[p] + 2.0 * x[p] * gb[p] + y[p] * gc[p];
            }
        }
    }
    Ok((total / n, grad))
}

/// Mean SSIM of two images.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    ssim_impl(a, b, false).map(|(s, _)| s)
}

/// 1 − SSIM.
pub fn ssim_loss(rendered: &ImageBuffer, target: &ImageBuffer) -> Result<f64> {
    Ok(1.0 - ssim(rendered, target)?)
}

/// 1 − SSIM and its gradient with respect to `rendered`.
pub fn ssim_loss_grad(rendered: &ImageBuffer, target: &ImageBuffer) -> Result<(f64, ImageBuffer)> {
    let (s, g) = ssim_impl(rendered, target, true)?;
    let mut g = g.expect("gradient requested");
    g.data.iter_mut().for_each(|v| *v = -*v);
    Ok((1.0 - s, g))
}
