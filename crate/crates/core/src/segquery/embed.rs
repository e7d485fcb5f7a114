//! Image/text encoders behind one interface.
//!
//! # Process protocol
//!
//! [`ProcessProvider`] talks to a child process over stdin/stdout. Each
//! request is
//!
//! ```text
//! "EMB1"  kind:u8  len:u32le  payload[len]
//! ```
//!
//! with kind 0 = text (UTF-8 payload) and kind 1 = image (payload
//! `width:u32le height:u32le` then `width·height·3` RGB `f32le` values,
//! row-major). Each response is
//!
//! ```text
//! status:u8  count:u32le  body
//! ```
//!
//! where status 0 carries `count` `f32le` embedding values and any other
//! status carries a `count`-byte UTF-8 error message. [`serve`] implements
//! the server side for any provider.

use std::hash::{Hash, Hasher};
use std::io::{BufReader, BufWriter, Read, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use crate::error::{Error, Result};
use crate::scene::ImageBuffer;

pub const PROTOCOL_MAGIC: &[u8; 4] = b"EMB1";
pub const KIND_TEXT: u8 = 0;
pub const KIND_IMAGE: u8 = 1;
/// Upper bound on a request or response body, in bytes.
const MAX_FRAME: u32 = 1 << 28;

pub trait EmbeddingProvider {
    fn dimension(&self) -> usize;

    /// Side length of the square crops fed to [`embed_image`](Self::embed_image).
    fn input_size(&self) -> u32 {
        32
    }

    fn embed_image(&mut self, crop: &ImageBuffer) -> Result<Vec<f64>>;

    fn embed_text(&mut self, prompt: &str) -> Result<Vec<f64>>;
}

const COLOR_WORDS: [(&str, [f64; 3]); 12] = [
    ("red", [0.85, 0.2, 0.2]),
    ("green", [0.2, 0.75, 0.25]),
    ("blue", [0.25, 0.35, 0.9]),
    ("yellow", [0.9, 0.8, 0.2]),
    ("purple", [0.7, 0.3, 0.8]),
    ("violet", [0.7, 0.3, 0.8]),
    ("cyan", [0.2, 0.8, 0.8]),
    ("teal", [0.2, 0.8, 0.8]),
    ("orange", [0.95, 0.55, 0.15]),
    ("gray", [0.6, 0.6, 0.6]),
    ("grey", [0.6, 0.6, 0.6]),
    ("white", [0.95, 0.95, 0.95]),
];

/// Deterministic in-process encoder for tests and demos.
///
/// Images embed as the chroma and brightness of their mean non-black color.
/// Text embeds color words through a small lexicon onto the same axes;
/// other words hash into separate dimensions that no image uses.
#[derive(Clone, Debug, Default)]
pub struct StubProvider;

impl StubProvider {
    pub const HASH_DIMS: usize = 16;
    /// Weight of a non-color word, kept small so filler words barely move
    /// a color prompt.
    pub const HASH_WEIGHT: f64 = 0.1;

    fn color_features(c: [f64; 3]) -> [f64; 4] {
        let mean = (c[0] + c[1] + c[2]) / 3.0;
        [c[0] - mean, c[1] - mean, c[2] - mean, 0.25 * mean]
    }
}

impl EmbeddingProvider for StubProvider {
    fn dimension(&self) -> usize {
        4 + Self::HASH_DIMS
    }

    fn embed_image(&mut self, crop: &ImageBuffer) -> Result<Vec<f64>> {
        if crop.channels != 3 {
            return Err(Error::shape("stub provider expects RGB crops"));
        }
        let mut sum = [0.0; 3];
        let mut count = 0usize;
        for px in crop.data.chunks_exact(3) {
            if px.iter().any(|&v| v > 1e-6) {
                for ch in 0..3 {
                    sum[ch] += px[ch];
                }
                count += 1;
            }
        }
        let mut out = vec![0.0; self.dimension()];
        if count > 0 {
            let f = Self::color_features(sum.map(|s| s / count as f64));
            out[..4].copy_from_slice(&f);
        }
        Ok(out)
    }

    fn embed_text(&mut self, prompt: &str) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dimension()];
        for word in prompt
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
        {
            match COLOR_WORDS.iter().find(|(w, _)| *w == word) {
                Some((_, rgb)) => {
                    for (o, f) in out.iter_mut().zip(Self::color_features(*rgb)) {
                        *o += f;
                    }
                }
                None => {
                    let mut h = std::collections::hash_map::DefaultHasher::new();
                    word.hash(&mut h);
                    let slot = 4 + (h.finish() as usize % Self::HASH_DIMS);
                    out[slot] += Self::HASH_WEIGHT;
                }
            }
        }
        Ok(out)
    }
}

fn write_frame(w: &mut impl Write, kind: u8, payload: &[u8]) -> std::io::Result<()> {
    w.write_all(PROTOCOL_MAGIC)?;
    w.write_all(&[kind])?;
    w.write_all(&(payload.len() as u32).to_le_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn encode_image(img: &ImageBuffer) -> Result<Vec<u8>> {
    if img.channels != 3 {
        return Err(Error::shape("crops must be RGB"));
    }
    let mut p = Vec::with_capacity(8 + img.data.len() * 4);
    p.extend_from_slice(&img.width.to_le_bytes());
    p.extend_from_slice(&img.height.to_le_bytes());
    for v in &img.data {
        p.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(p)
}

fn decode_image(p: &[u8]) -> Result<ImageBuffer> {
    if p.len() < 8 {
        return Err(Error::Format("image payload too short".into()));
    }
    let w = u32::from_le_bytes(p[0..4].try_into().expect("4 bytes"));
    let h = u32::from_le_bytes(p[4..8].try_into().expect("4 bytes"));
    let n = w as usize * h as usize * 3;
    if p.len() != 8 + 4 * n {
        return Err(Error::Format(format!("image payload of {} bytes for {w}x{h}", p.len())));
    }
    let data = p[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    ImageBuffer::from_data(w, h, 3, data)
}

/// Answers requests from `input` on `output` until `input` is exhausted.
pub fn serve<P: EmbeddingProvider + ?Sized>(provider: &mut P, input: impl Read, output: impl Write) -> Result<()> {
    let mut r = BufReader::new(input);
    let mut w = BufWriter::new(output);
    loop {
        let mut magic = [0u8; 4];
        match r.read_exact(&mut magic) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(()),
            Err(e) => return Err(e.into()),
        }
        if &magic != PROTOCOL_MAGIC {
            return Err(Error::Format("bad request magic".into()));
        }
        let mut kind = [0u8; 1];
        r.read_exact(&mut kind)?;
        let len = read_u32(&mut r)?;
        if len > MAX_FRAME {
            return Err(Error::Format(format!("request of {len} bytes")));
        }
        let mut payload = vec![0u8; len as usize];
        r.read_exact(&mut payload)?;
        let result = match kind[0] {
            KIND_TEXT => std::str::from_utf8(&payload)
                .map_err(|_| Error::Format("prompt is not UTF-8".into()))
                .and_then(|s| provider.embed_text(s)),
            KIND_IMAGE => decode_image(&payload).and_then(|img| provider.embed_image(&img)),
            other => Err(Error::Format(format!("unknown request kind {other}"))),
        };
        match result {
            Ok(v) => {
                w.write_all(&[0])?;
                w.write_all(&(v.len() as u32).to_le_bytes())?;
                for x in v {
                    w.write_all(&(x as f32).to_le_bytes())?;
                }
            }
            Err(e) => {
                let msg = e.to_string();
                w.write_all(&[1])?;
                w.write_all(&(msg.len() as u32).to_le_bytes())?;
                w.write_all(msg.as_bytes())?;
            }
        }
        w.flush()?;
    }
}

/// Encoder running in a child process that speaks the protocol above.
pub struct ProcessProvider {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    stdout: BufReader<ChildStdout>,
    dimension: usize,
    input_size: u32,
}

impl ProcessProvider {
    /// Starts `command` and probes the embedding dimension with an empty
    /// prompt.
    pub fn spawn(mut command: Command, input_size: u32) -> Result<Self> {
        let mut child = command
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Provider(format!("cannot start encoder: {e}")))?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped stdin"));
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let mut p = Self {
            child,
            stdin,
            stdout,
            dimension: 0,
            input_size,
        };
        p.dimension = p.request(KIND_TEXT, b"")?.len();
        Ok(p)
    }

    fn request(&mut self, kind: u8, payload: &[u8]) -> Result<Vec<f64>> {
        let io = |e: std::io::Error| Error::Provider(format!("encoder pipe: {e}"));
        write_frame(&mut self.stdin, kind, payload).map_err(io)?;
        let mut status = [0u8; 1];
        self.stdout.read_exact(&mut status).map_err(io)?;
        let count = read_u32(&mut self.stdout).map_err(io)?;
        if count > MAX_FRAME / 4 {
            return Err(Error::Provider(format!("response of {count} entries")));
        }
        if status[0] != 0 {
            let mut msg = vec![0u8; count as usize];
            self.stdout.read_exact(&mut msg).map_err(io)?;
            return Err(Error::Provider(String::from_utf8_lossy(&msg).into_owned()));
        }
        let mut body = vec![0u8; 4 * count as usize];
        self.stdout.read_exact(&mut body).map_err(io)?;
        let v: Vec<f64> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        if self.dimension != 0 && v.len() != self.dimension {
            return Err(Error::Provider(format!(
                "expected {} values, got {}",
                self.dimension,
                v.len()
            )));
        }
        Ok(v)
    }
}

impl EmbeddingProvider for ProcessProvider {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn input_size(&self) -> u32 {
        self.input_size
    }

    fn embed_image(&mut self, crop: &ImageBuffer) -> Result<Vec<f64>> {
        let payload = encode_image(crop)?;
        self.request(KIND_IMAGE, &payload)
    }

    fn embed_text(&mut self, prompt: &str) -> Result<Vec<f64>> {
        self.request(KIND_TEXT, prompt.as_bytes())
    }
}

impl Drop for ProcessProvider {
    fn drop(&mut self) {
        let _ = self.stdin.flush();
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
