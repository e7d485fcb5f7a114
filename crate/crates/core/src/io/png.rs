//! PNG encoding of color images, ID maps, occupancy maps and label maps.

use std::path::Path;

use image::{GrayImage, ImageBuffer as Img, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::scene::{IdMap, ImageBuffer};

fn to_u8(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

/// Writes an RGB buffer, clamping to [0, 1] and rounding to 8 bits.
pub fn write_rgb_png(img: &ImageBuffer, path: &Path) -> Result<()> {
    if img.channels != 3 {
        return Err(Error::shape("color PNG needs three channels"));
    }
    let out = RgbImage::from_raw(img.width, img.height, img.data.iter().map(|&v| to_u8(v)).collect())
        .expect("buffer size matches");
    out.save(path)?;
    Ok(())
}

/// Reads any color PNG as RGB in [0, 1].
pub fn read_rgb_png(path: &Path) -> Result<ImageBuffer> {
    let img = image::open(path)?.into_rgb32f();
    let (w, h) = img.dimensions();
    ImageBuffer::from_data(w, h, 3, img.into_raw().into_iter().map(f64::from).collect())
}

/// Writes object ids as 16-bit grayscale.
pub fn write_id_png(ids: &IdMap, path: &Path) -> Result<()> {
    let data = ids
        .data
        .iter()
        .map(|&id| u16::try_from(id).map_err(|_| Error::invalid(format!("object id {id} does not fit 16 bits"))))
        .collect::<Result<Vec<u16>>>()?;
    let out: Img<Luma<u16>, Vec<u16>> = Img::from_raw(ids.width, ids.height, data).expect("buffer size matches");
    out.save(path)?;
    Ok(())
}

/// Reads an 8- or 16-bit grayscale ID map.
pub fn read_id_png(path: &Path) -> Result<IdMap> {
    let (w, h, data) = match image::open(path)? {
        image::DynamicImage::ImageLuma8(g) => (g.width(), g.height(), g.into_raw().into_iter().map(u32::from).collect()),
        image::DynamicImage::ImageLuma16(g) => (g.width(), g.height(), g.into_raw().into_iter().map(u32::from).collect()),
        other => {
            return Err(Error::Format(format!(
                "{}: ID maps must be grayscale, found {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    IdMap::from_data(w, h, data)
}

/// 8-bit encoding of an occupancy map: `round(255·min(S, 1))`.
pub fn occupancy_to_gray(s: &ImageBuffer) -> Result<GrayImage> {
    if s.channels != 1 {
        return Err(Error::shape("occupancy map must have one channel"));
    }
    Ok(GrayImage::from_raw(s.width, s.height, s.data.iter().map(|&v| to_u8(v)).collect()).expect("buffer size matches"))
}

pub fn write_occupancy_png(s: &ImageBuffer, path: &Path) -> Result<()> {
    occupancy_to_gray(s)?.save(path)?;
    Ok(())
}

/// Display color of a label; 0 is black.
pub fn label_color(label: u32) -> [u8; 3] {
    if label == 0 {
        return [0, 0, 0];
    }
    let h = (label as f64 * 0.618_033_988_75).fract() * 6.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [r, g, b].map(|v: f64| (40.0 + 215.0 * v).round() as u8)
}

pub fn write_label_png(labels: &IdMap, path: &Path) -> Result<()> {
    let mut out = RgbImage::new(labels.width, labels.height);
    for (px, &l) in out.pixels_mut().zip(&labels.data) {
        *px = Rgb(label_color(l));
    }
    out.save(path)?;
    Ok(())
}

pub fn write_mask_png(mask: &crate::scene::BinaryMask, path: &Path) -> Result<()> {
    let out = GrayImage::from_raw(mask.width, mask.height, mask.bits.iter().map(|&b| if b { 255 } else { 0 }).collect())
        .expect("buffer size matches");
    out.save(path)?;
    Ok(())
}

pub fn read_mask_png(path: &Path) -> Result<crate::scene::BinaryMask> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    Ok(crate::scene::BinaryMask {
        width: w,
        height: h,
        bits: img.into_raw().into_iter().map(|v| v >= 128).collect(),
    })
}
