//! Mask extraction, segmentation metrics, object descriptors and text queries.

mod embed;
mod metrics;

use std::collections::BTreeMap;

pub use embed::{serve, EmbeddingProvider, ProcessProvider, StubProvider, KIND_IMAGE, KIND_TEXT, PROTOCOL_MAGIC};
pub use metrics::{boundary, boundary_iou, default_band, dilate, extract_mask, iou, overlap_counts, pooled_iou};

use crate::error::{Error, Result};
use crate::raster::{render, RenderRequest};
use crate::scene::{BinaryMask, Camera, GaussianCloud, ImageBuffer};

/// Threshold used to rank views by visible object area.
pub const VIEW_SELECTION_TAU: f64 = 0.5;
/// Default number of views averaged into a descriptor.
pub const DEFAULT_VIEWS: usize = 5;
/// Crop padding as a fraction of the mask's longer side.
pub const CROP_PADDING: f64 = 0.05;

/// Indices of the `n` views where object `j` covers the most pixels at
/// τ = 0.5, largest first; ties keep view order. Views where the object is
/// invisible are never returned.
pub fn select_views(cloud: &GaussianCloud, cameras: &[Camera], j: u32, n: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::invalid("view count must be at least 1"));
    }
    let mut counts = Vec::with_capacity(cameras.len());
    for (v, cam) in cameras.iter().enumerate() {
        let out = render(cloud, &RenderRequest::new(cam.clone()).with_objects([j]))?;
        let count = extract_mask(&out.occupancy[&j], VIEW_SELECTION_TAU)?.count();
        if count > 0 {
            counts.push((v, count));
        }
    }
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(counts.into_iter().take(n).map(|(v, _)| v).collect())
}

/// Masked, padded, square crop of the object resized to `size`×`size`.
pub fn crop_object(image: &ImageBuffer, mask: &BinaryMask, size: u32) -> Result<ImageBuffer> {
    if image.channels != 3 || image.width != mask.width || image.height != mask.height {
        return Err(Error::shape("crop needs an RGB image matching the mask"));
    }
    if size == 0 {
        return Err(Error::invalid("crop size must be positive"));
    }
    let (x0, y0, x1, y1) = mask.bounding_box().ok_or(Error::NoVisibleViews)?;
    let pad = (CROP_PADDING * (x1 - x0 + 1).max(y1 - y0 + 1) as f64).ceil() as u32;
    let (x0, y0) = (x0.saturating_sub(pad), y0.saturating_sub(pad));
    let (x1, y1) = ((x1 + pad).min(image.width - 1), (y1 + pad).min(image.height - 1));
    let (w, h) = (x1 - x0 + 1, y1 - y0 + 1);
    let side = w.max(h);
    let (ox, oy) = ((side - w) / 2, (side - h) / 2);

    let mut square = image::Rgb32FImage::new(side, side);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = (x0 + x, y0 + y);
            if mask.get(sx, sy) {
                let px = [0u8, 1, 2].map(|c| image.get(sx, sy, c) as f32);
                square.put_pixel(ox + x, oy + y, image::Rgb(px));
            }
        }
    }
    let resized = if side == size {
        square
    } else {
        image::imageops::resize(&square, size, size, image::imageops::FilterType::Triangle)
    };
    let data = resized.into_raw().into_iter().map(f64::from).collect();
    ImageBuffer::from_data(size, size, 3, data)
}

fn normalize(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(Error::NonFinite("embedding".into()));
    }
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(v)
}

/// Normalized mean embedding of the object crops from the first `n`
/// image/mask pairs with a non-empty mask.
pub fn aggregate_embedding<P: EmbeddingProvider + ?Sized>(
    images: &[ImageBuffer],
    masks: &[BinaryMask],
    provider: &mut P,
    n: usize,
) -> Result<Vec<f64>> {
    if images.len() != masks.len() {
        return Err(Error::shape(format!("{} images but {} masks", images.len(), masks.len())));
    }
    let dim = provider.dimension();
    let mut sum = vec![0.0; dim];
    let mut used = 0usize;
    for (img, mask) in images.iter().zip(masks).filter(|(_, m)| !m.is_empty()).take(n) {
        let crop = crop_object(img, mask, provider.input_size())?;
        let e = provider.embed_image(&crop)?;
        if e.len() != dim {
            return Err(Error::Provider(format!("embedding of length {} (expected {dim})", e.len())));
        }
        sum.iter_mut().zip(&e).for_each(|(s, x)| *s += x);
        used += 1;
    }
    if used == 0 {
        return Err(Error::NoVisibleViews);
    }
    normalize(sum.into_iter().map(|s| s / used as f64).collect())
}

/// One unit-norm descriptor per object.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObjectEmbeddingPool {
    pub dimension: usize,
    /// Number of views averaged per descriptor.
    pub views: usize,
    pub descriptors: BTreeMap<u32, Vec<f64>>,
}

impl ObjectEmbeddingPool {
    pub fn new(dimension: usize, views: usize) -> Self {
        Self {
            dimension,
            views,
            descriptors: BTreeMap::new(),
        }
    }

    /// Stores `descriptor` for `id` after normalizing it.
    pub fn insert(&mut self, id: u32, descriptor: Vec<f64>) -> Result<()> {
        if descriptor.len() != self.dimension {
            return Err(Error::shape(format!(
                "descriptor of length {} in a pool of dimension {}",
                descriptor.len(),
                self.dimension
            )));
        }
        self.descriptors.insert(id, normalize(descriptor)?);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }
}

/// Renders every object's occupancy in all views, picks its best `n` views
/// and aggregates their crops. Objects never visible are left out.
pub fn build_pool<P: EmbeddingProvider + ?Sized>(
    cloud: &GaussianCloud,
    cameras: &[Camera],
    images: &[ImageBuffer],
    provider: &mut P,
    n: usize,
) -> Result<ObjectEmbeddingPool> {
    if cameras.len() != images.len() {
        return Err(Error::shape(format!("{} cameras but {} images", cameras.len(), images.len())));
    }
    if cloud.instance.is_none() {
        return Err(Error::NoInstanceField);
    }
    let objects = cloud.object_count();
    let mut pool = ObjectEmbeddingPool::new(provider.dimension(), n);
    for j in 1..=objects {
        let views = select_views(cloud, cameras, j, n)?;
        if views.is_empty() {
            continue;
        }
        let mut imgs = Vec::with_capacity(views.len());
        let mut masks = Vec::with_capacity(views.len());
        for &v in &views {
            let out = render(cloud, &RenderRequest::new(cameras[v].clone()).with_objects([j]))?;
            masks.push(extract_mask(&out.occupancy[&j], VIEW_SELECTION_TAU)?);
            imgs.push(images[v].clone());
        }
        let f = aggregate_embedding(&imgs, &masks, provider, n)?;
        pool.insert(j, f)?;
    }
    Ok(pool)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Object whose descriptor has the highest cosine similarity to `q`; ties go
/// to the smallest id.
pub fn query_vector(q: &[f64], pool: &ObjectEmbeddingPool) -> Result<u32> {
    if q.len() != pool.dimension {
        return Err(Error::shape(format!("query of length {} for a pool of dimension {}", q.len(), pool.dimension)));
    }
    let mut best: Option<(u32, f64)> = None;
    for (&id, f) in &pool.descriptors {
        let c = cosine(q, f);
        if best.is_none_or(|(_, b)| c > b) {
            best = Some((id, c));
        }
    }
    best.map(|(id, _)| id).ok_or(Error::EmptyPool)
}

/// Embeds `prompt` and returns the best-matching object.
pub fn query<P: EmbeddingProvider + ?Sized>(prompt: &str, pool: &ObjectEmbeddingPool, provider: &mut P) -> Result<u32> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let q = provider.embed_text(prompt)?;
    query_vector(&q, pool)
}
