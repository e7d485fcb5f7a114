use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scene::{project_gaussian, Camera, GaussianCloud, ProjectedGaussian};

pub const DEFAULT_TILE_SIZE: u32 = 16;

/// Visible splats of one view, globally depth sorted, binned into tiles.
#[derive(Clone, Debug)]
pub struct SortedSplatList {
    pub tile_size: u32,
    pub tiles_x: u32,
    pub tiles_y: u32,
    /// Non-culled splats in front-to-back order (ties broken by source index).
    pub splats: Vec<ProjectedGaussian>,
    /// Per tile (row-major), increasing indices into `splats`.
    pub tiles: Vec<Vec<u32>>,
}

impl SortedSplatList {
    pub fn tile_index(&self, tx: u32, ty: u32) -> usize {
        (ty * self.tiles_x + tx) as usize
    }

    /// Pixel rectangle `(x0, y0, x1, y1)` (inclusive) covered by a tile.
    pub fn tile_pixels(&self, tile: usize, cam: &Camera) -> (u32, u32, u32, u32) {
        let tx = tile as u32 % self.tiles_x;
        let ty = tile as u32 / self.tiles_x;
        let x0 = tx * self.tile_size;
        let y0 = ty * self.tile_size;
        (
            x0,
            y0,
            (x0 + self.tile_size - 1).min(cam.width - 1),
            (y0 + self.tile_size - 1).min(cam.height - 1),
        )
    }
}

/// Projects every primitive, sorts the survivors by view depth and assigns
/// each to every tile its 3-sigma box overlaps.
pub fn bin_and_sort(cloud: &GaussianCloud, cam: &Camera, tile_size: u32) -> Result<SortedSplatList> {
    if tile_size < 4 {
        return Err(Error::invalid(format!("tile size {tile_size} is below 4")));
    }
    cam.validate()?;
    let mut splats: Vec<ProjectedGaussian> = (0..cloud.len())
        .into_par_iter()
        .filter_map(|i| project_gaussian(cloud, i, cam))
        .collect();
    splats.sort_by(|a, b| {
        a.depth
            .total_cmp(&b.depth)
            .then(a.source_index.cmp(&b.source_index))
    });

    let tiles_x = cam.width.div_ceil(tile_size);
    let tiles_y = cam.height.div_ceil(tile_size);
    let mut tiles = vec![Vec::new(); (tiles_x * tiles_y) as usize];
    for (k, s) in splats.iter().enumerate() {
        let b = s.bbox;
        for ty in b.y0 / tile_size..=b.y1 / tile_size {
            for tx in b.x0 / tile_size..=b.x1 / tile_size {
                tiles[(ty * tiles_x + tx) as usize].push(k as u32);
            }
        }
    }
    Ok(SortedSplatList {
        tile_size,
        tiles_x,
        tiles_y,
        splats,
        tiles,
    })
}
