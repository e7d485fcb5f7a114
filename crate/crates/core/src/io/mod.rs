//! File formats: checkpoints, PNG images, cameras, manifests and configs.

mod checkpoint;
mod dataset;
pub mod kv;
mod png;

pub use checkpoint::{
    load_checkpoint, quantize, read_checkpoint, save_checkpoint, write_checkpoint, VERSION_INSTANCE, VERSION_STAGE1,
};
pub use dataset::{
    camera_from_text, camera_to_text, load_camera, load_label_dir, load_raw, read_raw, save_camera, save_raw,
    write_raw, Dataset, DatasetManifest, LoadedView, Split, ViewRecord,
};
pub use png::{
    label_color, occupancy_to_gray, read_id_png, read_mask_png, read_rgb_png, write_id_png, write_label_png,
    write_mask_png, write_occupancy_png, write_rgb_png,
};
