//! Camera files, dataset manifests and raw float dumps.
//!
//! A camera file is `key = value` text:
//!
//! ```text
//! width = 128
//! height = 128
//! fx = 175.8
//! fy = 175.8
//! cx = 63.5
//! cy = 63.5
//! rotation = r00 r01 r02 r10 r11 r12 r20 r21 r22   # world to camera, row-major
//! translation = tx ty tz
//! ```
//!
//! A manifest lists views as `view.N = split image ids camera`, with paths
//! relative to the manifest and `-` for a view without an ID map:
//!
//! ```text
//! object_count = 3
//! background = 0 0 0
//! view.0 = train images/train_000.png ids/train_000.png cameras/train_000.cam
//! view.1 = eval images/eval_000.png ids/eval_000.png cameras/eval_000.cam
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};

use super::kv::{list, parse_error, parse_kv, value};
use super::png::{read_id_png, read_rgb_png, write_id_png, write_rgb_png};
use crate::error::{Error, Result};
use crate::labeling::PseudoLabelSet;
use crate::scene::{Camera, IdMap, ImageBuffer};
use crate::train::TrainingData;

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn camera_to_text(cam: &Camera) -> String {
    let r = &cam.rotation;
    let t = &cam.translation;
    let mut s = String::new();
    let _ = writeln!(s, "width = {}", cam.width);
    let _ = writeln!(s, "height = {}", cam.height);
    let _ = writeln!(s, "fx = {}", cam.fx);
    let _ = writeln!(s, "fy = {}", cam.fy);
    let _ = writeln!(s, "cx = {}", cam.cx);
    let _ = writeln!(s, "cy = {}", cam.cy);
    let rows: Vec<String> = (0..3).flat_map(|i| (0..3).map(move |j| r[(i, j)].to_string())).collect();
    let _ = writeln!(s, "rotation = {}", rows.join(" "));
    let _ = writeln!(s, "translation = {} {} {}", t.x, t.y, t.z);
    s
}

pub fn camera_from_text(text: &str, path: &Path) -> Result<Camera> {
    let entries = parse_kv(text, path)?;
    let get = |key: &str| {
        entries
            .iter()
            .find(|e| e.key == key)
            .ok_or_else(|| parse_error(path, 0, format!("missing `{key}`")))
    };
    for e in &entries {
        if !["width", "height", "fx", "fy", "cx", "cy", "rotation", "translation"].contains(&e.key.as_str()) {
            return Err(parse_error(path, e.line, format!("unknown key `{}`", e.key)));
        }
    }
    let rot_entry = get("rotation")?;
    let rot: Vec<f64> = list(rot_entry, path)?;
    if rot.len() != 9 {
        return Err(parse_error(path, rot_entry.line, "rotation needs 9 values"));
    }
    let t_entry = get("translation")?;
    let t: Vec<f64> = list(t_entry, path)?;
    if t.len() != 3 {
        return Err(parse_error(path, t_entry.line, "translation needs 3 values"));
    }
    Camera::new(
        Matrix3::from_row_slice(&rot),
        Vector3::new(t[0], t[1], t[2]),
        (value(get("fx")?, path)?, value(get("fy")?, path)?),
        (value(get("cx")?, path)?, value(get("cy")?, path)?),
        (value(get("width")?, path)?, value(get("height")?, path)?),
    )
}

pub fn load_camera(path: &Path) -> Result<Camera> {
    camera_from_text(&read_text(path)?, path)
}

pub fn save_camera(cam: &Camera, path: &Path) -> Result<()> {
    write_text(path, &camera_to_text(cam))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewRecord {
    pub split: Split,
    pub image: PathBuf,
    pub ids: Option<PathBuf>,
    pub camera: PathBuf,
}

/// Parsed manifest; paths are relative to `root`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub object_count: u32,
    pub background: [f64; 3],
    pub views: Vec<ViewRecord>,
}

impl DatasetManifest {
    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut object_count = None;
        let mut background = [0.0; 3];
        let mut views = BTreeMap::new();
        for e in parse_kv(text, path)? {
            match e.key.as_str() {
                "object_count" => object_count = Some(value(&e, path)?),
                "background" => {
                    let b: Vec<f64> = list(&e, path)?;
                    background = b
                        .try_into()
                        .map_err(|_| parse_error(path, e.line, "background needs 3 values"))?;
                }
                k if k.starts_with("view.") => {
                    let n: usize = k[5..]
                        .parse()
                        .map_err(|_| parse_error(path, e.line, format!("bad view key `{k}`")))?;
                    let parts: Vec<&str> = e.value.split_whitespace().collect();
                    let [split, image, ids, camera] = parts[..] else {
                        return Err(parse_error(path, e.line, "expected `split image ids camera`"));
                    };
                    let split = match split {
                        "train" => Split::Train,
                        "eval" => Split::Eval,
                        other => return Err(parse_error(path, e.line, format!("unknown split `{other}`"))),
                    };
                    views.insert(
                        n,
                        ViewRecord {
                            split,
                            image: image.into(),
                            ids: (ids != "-").then(|| ids.into()),
                            camera: camera.into(),
                        },
                    );
                }
                other => return Err(parse_error(path, e.line, format!("unknown key `{other}`"))),
            }
        }
        let object_count = object_count.ok_or_else(|| parse_error(path, 0, "missing `object_count`"))?;
        Ok(Self {
            root,
            object_count,
            background,
            views: views.into_values().collect(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "object_count = {}", self.object_count);
        let b = self.background;
        let _ = writeln!(s, "background = {} {} {}", b[0], b[1], b[2]);
        for (n, v) in self.views.iter().enumerate() {
            let ids = v.ids.as_ref().map_or("-".to_string(), |p| p.display().to_string());
            let _ = writeln!(
                s,
                "view.{n} = {} {} {ids} {}",
                v.split.as_str(),
                v.image.display(),
                v.camera.display()
            );
        }
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m = Self::from_text(&read_text(path)?, path)?;
        for v in &m.views {
            for p in [Some(&v.image), v.ids.as_ref(), Some(&v.camera)].into_iter().flatten() {
                let full = m.root.join(p);
                if !full.is_file() {
                    return Err(Error::io(
                        full,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "referenced by the manifest"),
                    ));
                }
            }
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadedView {
    pub camera: Camera,
    pub image: ImageBuffer,
    pub ids: Option<IdMap>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub object_count: u32,
    pub background: [f64; 3],
    pub train: Vec<LoadedView>,
    pub eval: Vec<LoadedView>,
}

impl Dataset {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let m = DatasetManifest::load(manifest_path)?;
        let mut train = Vec::new();
        let mut eval = Vec::new();
        for v in &m.views {
            let camera = load_camera(&m.root.join(&v.camera))?;
            let image = read_rgb_png(&m.root.join(&v.image))?;
            let ids = v.ids.as_ref().map(|p| read_id_png(&m.root.join(p))).transpose()?;
            if image.width != camera.width || image.height != camera.height {
                return Err(Error::shape(format!("{}: image does not match its camera", v.image.display())));
            }
            if let Some(ids) = &ids {
                if ids.width != camera.width || ids.height != camera.height {
                    return Err(Error::shape(format!("{}: ID map does not match its camera", v.image.display())));
                }
            }
            let view = LoadedView { camera, image, ids };
            match v.split {
                Split::Train => train.push(view),
                Split::Eval => eval.push(view),
            }
        }
        Ok(Self {
            object_count: m.object_count,
            background: m.background,
            train,
            eval,
        })
    }

    /// Training views with their ID maps; labels are present only when
    /// every training view has one.
    pub fn training_data(&self) -> Result<TrainingData> {
        let maps: Option<Vec<IdMap>> = self.train.iter().map(|v| v.ids.clone()).collect();
        let labels = maps.map(|m| PseudoLabelSet::new(m, self.object_count)).transpose()?;
        Ok(TrainingData {
            cameras: self.train.iter().map(|v| v.camera.clone()).collect(),
            images: self.train.iter().map(|v| v.image.clone()).collect(),
            labels,
        })
    }

    /// Writes images, ID maps, cameras and `manifest.txt` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        for sub in ["images", "ids", "cameras"] {
            std::fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
        }
        let mut views = Vec::new();
        for (split, list) in [(Split::Train, &self.train), (Split::Eval, &self.eval)] {
            for (k, v) in list.iter().enumerate() {
                let stem = format!("{}_{k:03}", split.as_str());
                let image = PathBuf::from(format!("images/{stem}.png"));
                let camera = PathBuf::from(format!("cameras/{stem}.cam"));
                write_rgb_png(&v.image, &dir.join(&image))?;
                save_camera(&v.camera, &dir.join(&camera))?;
                let ids = match &v.ids {
                    Some(map) => {
                        let p = PathBuf::from(format!("ids/{stem}.png"));
                        write_id_png(map, &dir.join(&p))?;
                        Some(p)
                    }
                    None => None,
                };
                views.push(ViewRecord {
                    split,
                    image,
                    ids,
                    camera,
                });
            }
        }
        let manifest = DatasetManifest {
            root: dir.to_path_buf(),
            object_count: self.object_count,
            background: self.background,
            views,
        };
        let path = dir.join("manifest.txt");
        write_text(&path, &manifest.to_text())?;
        Ok(path)
    }
}

/// Replaces the training ID maps with the PNGs in `dir`, taken in file
/// name order.
pub fn load_label_dir(dir: &Path, object_count: u32) -> Result<PseudoLabelSet> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    let maps = files.iter().map(|p| read_id_png(p)).collect::<Result<Vec<_>>>()?;
    PseudoLabelSet::new(maps, object_count)
}

const RAW_MAGIC: &[u8; 4] = b"DSF1";

/// Raw dump: `"DSF1" width:u32le height:u32le channels:u32le` then `f32le`
/// values, row-major and channel-interleaved.
pub fn write_raw(img: &ImageBuffer, mut w: impl Write) -> Result<()> {
    w.write_all(RAW_MAGIC)?;
    for v in [img.width, img.height, img.channels as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for &v in &img.data {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_raw(mut r: impl Read) -> Result<ImageBuffer> {
    let mut head = [0u8; 16];
    r.read_exact(&mut head)
        .map_err(|_| Error::Format("raw dump header is truncated".into()))?;
    if &head[..4] != RAW_MAGIC {
        return Err(Error::Format("not a raw float dump".into()));
    }
    let word = |k: usize| u32::from_le_bytes(head[4 * k..4 * k + 4].try_into().expect("4 bytes"));
    let (w, h, c) = (word(1), word(2), word(3));
    let channels = u8::try_from(c).map_err(|_| Error::Format(format!("{c} channels")))?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
        .collect::<Vec<_>>();
    if body.len() % 4 != 0 {
        return Err(Error::Format("raw dump body is not a whole number of floats".into()));
    }
    ImageBuffer::from_data(w, h, channels, data)
}

pub fn save_raw(img: &ImageBuffer, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_raw(img, std::io::BufWriter::new(f))
}

pub fn load_raw(path: &Path) -> Result<ImageBuffer> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_raw(std::io::BufReader::new(f))
}
