use crate::error::{Error, Result};
use crate::scene::{BinaryMask, ImageBuffer};

/// Pixels whose occupancy strictly exceeds `tau`.
pub fn extract_mask(s: &ImageBuffer, tau: f64) -> Result<BinaryMask> {
    if s.channels != 1 {
        return Err(Error::shape("occupancy map must have one channel"));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid(format!("threshold {tau} is outside (0, 1)")));
    }
    Ok(BinaryMask {
        width: s.width,
        height: s.height,
        bits: s.data.iter().map(|&v| v > tau).collect(),
    })
}

/// Intersection and union pixel counts.
pub fn overlap_counts(pred: &BinaryMask, gt: &BinaryMask) -> Result<(usize, usize)> {
    pred.ensure_same_shape(gt)?;
    let mut inter = 0;
    let mut union = 0;
    for (&p, &g) in pred.bits.iter().zip(&gt.bits) {
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok((inter, union))
}

fn ratio(inter: usize, union: usize) -> f64 {
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Intersection over union; two empty masks score 1.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    overlap_counts(pred, gt).map(|(i, u)| ratio(i, u))
}

/// Band width for boundary IoU: 2% of the image diagonal, at least 1 px.
pub fn default_band(width: u32, height: u32) -> u32 {
    let diag = ((width as f64).powi(2) + (height as f64).powi(2)).sqrt();
    ((0.02 * diag).round() as u32).max(1)
}

/// Mask pixels with a 4-neighbor outside the mask; the image border counts
/// as outside.
pub fn boundary(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let inside = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && mask.get(x as u32, y as u32);
    let mut out = BinaryMask::new(mask.width, mask.height);
    for y in 0..h {
        for x in 0..w {
            if inside(x, y) && !(inside(x - 1, y) && inside(x + 1, y) && inside(x, y - 1) && inside(x, y + 1)) {
                out.bits[(y * w + x) as usize] = true;
            }
        }
    }
    out
}

/// Pixels within Chebyshev distance `band` of a set pixel.
pub fn dilate(mask: &BinaryMask, band: u32) -> BinaryMask {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let b = band as usize;
    let mut rows = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            if mask.bits[y * w + x] {
                for xx in x.saturating_sub(b)..=(x + b).min(w - 1) {
                    rows[y * w + xx] = true;
                }
            }
        }
    }
    let mut out = BinaryMask::new(mask.width, mask.height);
    for y in 0..h {
        for x in 0..w {
            if rows[y * w + x] {
                for yy in y.saturating_sub(b)..=(y + b).min(h - 1) {
                    out.bits[yy * w + x] = true;
                }
            }
        }
    }
    out
}

/// IoU restricted to pixels within `band` of either mask's boundary.
pub fn boundary_iou(pred: &BinaryMask, gt: &BinaryMask, band: u32) -> Result<f64> {
    pred.ensure_same_shape(gt)?;
    let rp = dilate(&boundary(pred), band);
    let rg = dilate(&boundary(gt), band);
    let mut inter = 0;
    let mut union = 0;
    for k in 0..pred.bits.len() {
        if rp.bits[k] || rg.bits[k] {
            inter += (pred.bits[k] && gt.bits[k]) as usize;
            union += (pred.bits[k] || gt.bits[k]) as usize;
        }
    }
    Ok(ratio(inter, union))
}

/// IoU of one object pooled over several views: summed intersections over
/// summed unions.
pub fn pooled_iou<'a>(pairs: impl IntoIterator<Item = (&'a BinaryMask, &'a BinaryMask)>) -> Result<f64> {
    let mut inter = 0;
    let mut union = 0;
    for (p, g) in pairs {
        let (i, u) = overlap_counts(p, g)?;
        inter += i;
        union += u;
    }
    Ok(ratio(inter, union))
}
