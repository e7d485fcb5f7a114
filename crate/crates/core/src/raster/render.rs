use std::collections::BTreeMap;

use rayon::prelude::*;

use super::binning::{bin_and_sort, SortedSplatList, DEFAULT_TILE_SIZE};
use super::composite::{composite_pixel, CompositeContext, InstanceMapMode, PixelResult};
use crate::error::{Error, Result};
use crate::scene::{Camera, GaussianCloud, IdMap, ImageBuffer, ProjectedGaussian};

#[derive(Clone, Debug)]
pub struct RenderRequest {
    pub camera: Camera,
    pub background: [f64; 3],
    /// Objects j whose occupancy map S_j is rendered.
    pub object_ids: Vec<u32>,
    pub render_instance_map: bool,
    pub instance_mode: InstanceMapMode,
    pub tile_size: u32,
}

impl RenderRequest {
    /// Color-only request with a black background.
    pub fn new(camera: Camera) -> Self {
        Self {
            camera,
            background: [0.0; 3],
            object_ids: Vec::new(),
            render_instance_map: false,
            instance_mode: InstanceMapMode::InstanceOpacity,
            tile_size: DEFAULT_TILE_SIZE,
        }
    }

    pub fn with_objects(mut self, ids: impl IntoIterator<Item = u32>) -> Self {
        self.object_ids = ids.into_iter().collect();
        self
    }

    pub fn with_instance_map(mut self, mode: InstanceMapMode) -> Self {
        self.render_instance_map = true;
        self.instance_mode = mode;
        self
    }

    pub fn with_background(mut self, background: [f64; 3]) -> Self {
        self.background = background;
        self
    }
}

/// Work counters for one render.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RenderStats {
    pub visible_splats: usize,
    pub tile_entries: usize,
    /// Passes run after compositing to turn features into labels. The label
    /// map and occupancy maps come out of the compositing pass, so this
    /// stays 0.
    pub decode_passes: usize,
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub color: ImageBuffer,
    pub occupancy: BTreeMap<u32, ImageBuffer>,
    pub instance_labels: Option<IdMap>,
    pub final_transmittance: ImageBuffer,
    pub contributor_count: Vec<u32>,
    pub stats: RenderStats,
}

/// What the backward pass needs from a forward render.
#[derive(Clone, Debug)]
pub struct ForwardState {
    pub camera: Camera,
    pub background: [f64; 3],
    pub splats: SortedSplatList,
    /// Per pixel: one past the tile-list position of the last blended splat.
    pub end: Vec<u32>,
    pub final_transmittance: Vec<f64>,
}

pub(crate) fn occupancy_slots(object_ids: &[u32], object_count: u32) -> Vec<Option<usize>> {
    let mut slots = vec![None; object_count as usize + 1];
    for (k, &id) in object_ids.iter().enumerate() {
        slots[id as usize] = Some(k);
    }
    slots
}

pub(crate) fn check_request(cloud: &GaussianCloud, req: &RenderRequest) -> Result<()> {
    let needs_instance = !req.object_ids.is_empty() || req.render_instance_map;
    if needs_instance && cloud.instance.is_none() {
        return Err(Error::NoInstanceField);
    }
    let count = cloud.object_count();
    for &id in &req.object_ids {
        if id == 0 || id > count {
            return Err(Error::UnknownObject { id, count });
        }
    }
    let mut sorted = req.object_ids.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != req.object_ids.len() {
        return Err(Error::invalid("duplicate object id in request"));
    }
    Ok(())
}

/// Renders color, requested occupancy maps and the instance label map in
/// one tiled pass.
pub fn render(cloud: &GaussianCloud, req: &RenderRequest) -> Result<RenderOutput> {
    render_with_state(cloud, req).map(|(out, _)| out)
}

pub fn render_with_state(
    cloud: &GaussianCloud,
    req: &RenderRequest,
) -> Result<(RenderOutput, ForwardState)> {
    check_request(cloud, req)?;
    let cam = &req.camera;
    let splats = bin_and_sort(cloud, cam, req.tile_size)?;
    let slot_of_label = occupancy_slots(&req.object_ids, cloud.object_count());
    let ctx = CompositeContext {
        background: req.background,
        slot_of_label: &slot_of_label,
        slots: req.object_ids.len(),
        label_mode: req.render_instance_map.then_some(req.instance_mode),
        early_termination: true,
    };

    let tile_results: Vec<Vec<PixelResult>> = (0..splats.tiles.len())
        .into_par_iter()
        .map(|tile| {
            let list: Vec<&ProjectedGaussian> = splats.tiles[tile]
                .iter()
                .map(|&k| &splats.splats[k as usize])
                .collect();
            let (x0, y0, x1, y1) = splats.tile_pixels(tile, cam);
            let mut out = Vec::with_capacity(((x1 - x0 + 1) * (y1 - y0 + 1)) as usize);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    out.push(composite_pixel(&list, x, y, &ctx, None));
                }
            }
            out
        })
        .collect();

    let (w, h) = (cam.width, cam.height);
    let npix = cam.pixel_count();
    let mut color = ImageBuffer::new(w, h, 3);
    let mut occupancy: Vec<ImageBuffer> = req.object_ids.iter().map(|_| ImageBuffer::new(w, h, 1)).collect();
    let mut labels = req.render_instance_map.then(|| IdMap::new(w, h));
    let mut final_t = vec![1.0; npix];
    let mut contributor_count = vec![0; npix];
    let mut end = vec![0; npix];

    for (tile, results) in tile_results.into_iter().enumerate() {
        let (x0, y0, x1, y1) = splats.tile_pixels(tile, cam);
        let mut it = results.into_iter();
        for y in y0..=y1 {
            for x in x0..=x1 {
                let r = it.next().expect("one result per tile pixel");
                let p = y as usize * w as usize + x as usize;
                color.data[3 * p..3 * p + 3].copy_from_slice(&r.color);
                for (img, v) in occupancy.iter_mut().zip(&r.occupancy) {
                    img.data[p] = *v;
                }
                if let Some(l) = labels.as_mut() {
                    l.data[p] = r.label;
                }
                final_t[p] = r.final_transmittance;
                contributor_count[p] = r.contributors;
                end[p] = r.end;
            }
        }
    }

    let stats = RenderStats {
        visible_splats: splats.splats.len(),
        tile_entries: splats.tiles.iter().map(Vec::len).sum(),
        decode_passes: 0,
    };
    let output = RenderOutput {
        color,
        occupancy: req.object_ids.iter().copied().zip(occupancy).collect(),
        instance_labels: labels,
        final_transmittance: ImageBuffer::from_data(w, h, 1, final_t.clone())?,
        contributor_count,
        stats,
    };
    let state = ForwardState {
        camera: cam.clone(),
        background: req.background,
        splats,
        end,
        final_transmittance: final_t,
    };
    Ok((output, state))
}
