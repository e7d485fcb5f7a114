//! Binary little-endian PLY checkpoints.
//!
//! The vertex layout follows the usual splatting viewer convention
//! (`x y z nx ny nz f_dc_* f_rest_* opacity scale_* rot_*`, `f_rest`
//! channel-major) so geometry opens in third-party tools. Version 2 files
//! append `instance_opacity` (float) and `instance_label` (int); version 1
//! files are stage-1 clouds without them. Header comments record the version,
//! SH degree, object count and stage. Values are stored as `f32`.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::scene::{sh_coeff_count, GaussianCloud, InstanceField};

pub const VERSION_STAGE1: u32 = 1;
pub const VERSION_INSTANCE: u32 = 2;

fn property_names(sh_degree: u8, instance: bool) -> Vec<String> {
    let k = sh_coeff_count(sh_degree);
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz"].map(String::from).to_vec();
    names.extend((0..3).map(|c| format!("f_dc_{c}")));
    names.extend((0..3 * (k - 1)).map(|c| format!("f_rest_{c}")));
    names.push("opacity".into());
    names.extend((0..3).map(|c| format!("scale_{c}")));
    names.extend((0..4).map(|c| format!("rot_{c}")));
    if instance {
        names.push("instance_opacity".into());
        names.push("instance_label".into());
    }
    names
}

/// Serializes `cloud`; clouds without an instance field are written as
/// version 1.
pub fn write_checkpoint(cloud: &GaussianCloud, mut w: impl Write) -> Result<()> {
    cloud.validate()?;
    let inst = cloud.instance.as_ref();
    let version = if inst.is_some() { VERSION_INSTANCE } else { VERSION_STAGE1 };
    let names = property_names(cloud.sh_degree, inst.is_some());
    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("comment dualsplat_version {version}\n"));
    header.push_str(&format!("comment sh_degree {}\n", cloud.sh_degree));
    header.push_str(&format!("comment object_count {}\n", cloud.object_count()));
    header.push_str(&format!("comment stage {}\n", if inst.is_some() { 2 } else { 1 }));
    header.push_str(&format!("element vertex {}\n", cloud.len()));
    for name in &names {
        let ty = if name == "instance_label" { "int" } else { "float" };
        header.push_str(&format!("property {ty} {name}\n"));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())?;

    let k = cloud.sh_count();
    let mut rec = Vec::with_capacity(4 * names.len());
    for i in 0..cloud.len() {
        rec.clear();
        let mut f = |v: f64| rec.extend_from_slice(&(v as f32).to_le_bytes());
        let p = cloud.positions[i];
        [p.x, p.y, p.z, 0.0, 0.0, 0.0].into_iter().for_each(&mut f);
        let sh = cloud.sh(i);
        sh[0].into_iter().for_each(&mut f);
        for c in 0..3 {
            for coef in sh.iter().take(k).skip(1) {
                f(coef[c]);
            }
        }
        f(cloud.opacity_logits[i]);
        let s = cloud.log_scales[i];
        [s.x, s.y, s.z].into_iter().for_each(&mut f);
        cloud.rotations[i].into_iter().for_each(&mut f);
        if let Some(inst) = inst {
            f(inst.opacity_logits[i]);
            let label = i32::try_from(inst.labels[i]).map_err(|_| Error::invalid("label exceeds i32"))?;
            rec.extend_from_slice(&label.to_le_bytes());
        }
        w.write_all(&rec)?;
    }
    w.flush()?;
    Ok(())
}

struct Header {
    version: u32,
    sh_degree: u8,
    object_count: u32,
    count: usize,
    names: Vec<(String, String)>,
}

fn parse_header(r: &mut impl BufRead) -> Result<Header> {
    let bad = |m: String| Error::Format(format!("checkpoint header: {m}"));
    let mut line = String::new();
    let mut next = |r: &mut dyn BufRead| -> Result<String> {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(bad("unexpected end of file".into()));
        }
        Ok(line.trim_end_matches(['\n', '\r']).to_string())
    };
    if next(r)? != "ply" {
        return Err(bad("not a PLY file".into()));
    }
    let (mut version, mut sh_degree, mut object_count, mut count) = (None, None, None, None);
    let mut names = Vec::new();
    loop {
        let l = next(r)?;
        let words: Vec<&str> = l.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["format", "binary_little_endian", "1.0"] => {}
            ["format", other, ..] => return Err(Error::Format(format!("unsupported PLY format {other}"))),
            ["comment", "dualsplat_version", v] => version = v.parse().ok(),
            ["comment", "sh_degree", v] => sh_degree = v.parse().ok(),
            ["comment", "object_count", v] => object_count = v.parse().ok(),
            ["comment", ..] => {}
            ["element", "vertex", n] => count = n.parse().ok(),
            ["element", other, ..] => return Err(bad(format!("unexpected element {other}"))),
            ["property", ty, name] => names.push((ty.to_string(), name.to_string())),
            _ => return Err(bad(format!("cannot parse {l:?}"))),
        }
    }
    let version = version.ok_or_else(|| bad("missing version comment".into()))?;
    if version != VERSION_STAGE1 && version != VERSION_INSTANCE {
        return Err(Error::Format(format!("unknown checkpoint version {version}")));
    }
    let sh_degree: u8 = sh_degree.ok_or_else(|| bad("missing sh_degree comment".into()))?;
    if sh_degree > 3 {
        return Err(bad(format!("sh degree {sh_degree}")));
    }
    Ok(Header {
        version,
        sh_degree,
        object_count: object_count.unwrap_or(0),
        count: count.ok_or_else(|| bad("missing vertex element".into()))?,
        names,
    })
}

pub fn read_checkpoint(r: impl Read) -> Result<GaussianCloud> {
    let mut r = BufReader::new(r);
    let h = parse_header(&mut r)?;
    let instance = h.version == VERSION_INSTANCE;
    let expected = property_names(h.sh_degree, instance);
    let got: Vec<&str> = h.names.iter().map(|(_, n)| n.as_str()).collect();
    if got != expected {
        return Err(Error::Format(format!("checkpoint properties {got:?} do not match version {}", h.version)));
    }
    for (ty, name) in &h.names {
        let want = if name == "instance_label" { "int" } else { "float" };
        if ty != want {
            return Err(Error::Format(format!("property {name} has type {ty}, expected {want}")));
        }
    }

    let k = sh_coeff_count(h.sh_degree);
    let mut cloud = GaussianCloud::new(h.sh_degree);
    let mut inst = InstanceField {
        opacity_logits: Vec::new(),
        labels: Vec::new(),
        object_count: h.object_count,
    };
    let mut rec = vec![0u8; 4 * expected.len()];
    for _ in 0..h.count {
        r.read_exact(&mut rec)
            .map_err(|_| Error::Format("checkpoint is truncated".into()))?;
        let word = |j: usize| -> [u8; 4] { rec[4 * j..4 * j + 4].try_into().expect("4 bytes") };
        let f = |j: usize| f32::from_le_bytes(word(j)) as f64;
        cloud.positions.push(Vector3::new(f(0), f(1), f(2)));
        let dc = 6;
        let rest = dc + 3;
        for coef in 0..k {
            cloud.sh_coeffs.push(if coef == 0 {
                [f(dc), f(dc + 1), f(dc + 2)]
            } else {
                [0, 1, 2].map(|c| f(rest + c * (k - 1) + coef - 1))
            });
        }
        let o = rest + 3 * (k - 1);
        cloud.opacity_logits.push(f(o));
        cloud.log_scales.push(Vector3::new(f(o + 1), f(o + 2), f(o + 3)));
        cloud.rotations.push([f(o + 4), f(o + 5), f(o + 6), f(o + 7)]);
        if instance {
            inst.opacity_logits.push(f(o + 8));
            let label = i32::from_le_bytes(word(o + 9));
            inst.labels
                .push(u32::try_from(label).map_err(|_| Error::Format(format!("negative label {label}")))?);
        }
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after the last vertex".into()));
    }
    if instance {
        cloud.instance = Some(inst);
    }
    cloud.validate()?;
    Ok(cloud)
}

pub fn save_checkpoint(cloud: &GaussianCloud, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(cloud, std::io::BufWriter::new(file))
}

pub fn load_checkpoint(path: &Path) -> Result<GaussianCloud> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(file)
}

/// Rounds every parameter to `f32`, the precision checkpoints store.
pub fn quantize(cloud: &GaussianCloud) -> GaussianCloud {
    let q = |v: f64| v as f32 as f64;
    let mut c = cloud.clone();
    c.positions.iter_mut().for_each(|p| *p = p.map(q));
    c.sh_coeffs.iter_mut().for_each(|s| *s = s.map(q));
    c.opacity_logits.iter_mut().for_each(|v| *v = q(*v));
    c.rotations.iter_mut().for_each(|r| *r = r.map(q));
    c.log_scales.iter_mut().for_each(|s| *s = s.map(q));
    if let Some(inst) = c.instance.as_mut() {
        inst.opacity_logits.iter_mut().for_each(|v| *v = q(*v));
    }
    c
}
