//! Frame, tensor and weight-bundle I/O.
//!
//! Frames come from a directory of PGM (P5) or PNG images whose lexicographic
//! filename order defines the frame order. Tensors and named weight bundles use
//! two small little-endian container formats:
//!
//! ```text
//! STVT: "STVT" | version u8 = 1 | dtype u8 = 0 (f32) | ndim u8 | reserved u8 = 0
//!       | ndim x u64 LE extents | payload f32 LE, row-major
//! STVB: "STVB" | version u8 = 1 | count u32 LE
//!       | count x (name_len u16 LE | UTF-8 name | STVT record)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"STVT";
pub const BUNDLE_MAGIC: &[u8; 4] = b"STVB";
pub const FORMAT_VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 0;

/// A single decoded frame. `gray` is always present; `rgb` only when the
/// sequence was loaded in [`ColorMode::Rgb`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub gray: Vec<u8>,
    pub rgb: Option<Vec<u8>>,
}

impl Frame {
    pub fn from_gray(height: usize, width: usize, gray: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || gray.len() != height * width {
            return Err(Error::invalid(format!(
                "gray buffer of {} bytes does not match {height}x{width}",
                gray.len()
            )));
        }
        Ok(Self {
            height,
            width,
            gray,
            rgb: None,
        })
    }

    pub fn from_rgb(height: usize, width: usize, rgb: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || rgb.len() != height * width * 3 {
            return Err(Error::invalid(format!(
                "rgb buffer of {} bytes does not match {height}x{width}x3",
                rgb.len()
            )));
        }
        let gray = rgb
            .chunks_exact(3)
            .map(|p| rgb_to_gray(p[0], p[1], p[2]))
            .collect();
        Ok(Self {
            height,
            width,
            gray,
            rgb: Some(rgb),
        })
    }

    #[inline]
    pub fn gray_at(&self, y: usize, x: usize) -> u8 {
        self.gray[y * self.width + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ColorMode {
    #[default]
    Gray,
    Rgb,
}

/// An ordered, non-empty frame sequence with uniform resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoFrames {
    frames: Vec<Frame>,
    source_id: String,
}

impl VideoFrames {
    pub fn new(frames: Vec<Frame>, source_id: impl Into<String>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::invalid("a video needs at least one frame"))?;
        let (h, w) = (first.height, first.width);
        if let Some((i, f)) = frames
            .iter()
            .enumerate()
            .find(|(_, f)| f.height != h || f.width != w)
        {
            return Err(Error::invalid(format!(
                "frame {i} is {}x{}, expected {h}x{w}",
                f.height, f.width
            )));
        }
        Ok(Self {
            frames,
            source_id: source_id.into(),
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }
}

/// Integer-rounded BT.601 luma: `round(0.299 R + 0.587 G + 0.114 B)`.
#[inline]
pub fn rgb_to_gray(r: u8, g: u8, b: u8) -> u8 {
    let acc = 299 * r as u32 + 587 * g as u32 + 114 * b as u32;
    ((acc + 500) / 1000) as u8
}

fn is_frame_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "png"))
        .unwrap_or(false)
}

/// Loads every `.pgm`/`.png` file in `dir`, ordered by filename.
pub fn load_frame_sequence(dir: &Path, mode: ColorMode) -> Result<VideoFrames> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() && is_frame_file(&path) {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(Error::Frames {
            file: dir.display().to_string(),
            reason: "directory contains no .pgm or .png frames".into(),
        });
    }
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));

    let mut frames = Vec::with_capacity(paths.len());
    for path in &paths {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let frame = decode_frame(&bytes, mode).map_err(|reason| Error::Frames {
            file: name.clone(),
            reason,
        })?;
        if let Some(first) = frames.first() {
            let first: &Frame = first;
            if first.height != frame.height || first.width != frame.width {
                return Err(Error::Frames {
                    file: name,
                    reason: format!(
                        "mixed resolutions: {}x{} after {}x{}",
                        frame.height, frame.width, first.height, first.width
                    ),
                });
            }
        }
        frames.push(frame);
    }
    let source_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    VideoFrames::new(frames, source_id)
}

/// Decodes one PGM or PNG image (sniffed by content, not extension).
pub fn decode_frame(bytes: &[u8], mode: ColorMode) -> std::result::Result<Frame, String> {
    if bytes.starts_with(b"P5") {
        let (h, w, gray) = decode_pgm(bytes)?;
        let rgb = match mode {
            ColorMode::Gray => None,
            ColorMode::Rgb => Some(gray.iter().flat_map(|&v| [v, v, v]).collect()),
        };
        return Ok(Frame {
            height: h,
            width: w,
            gray,
            rgb,
        });
    }
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| format!("undecodable image: {e}"))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err("image has zero extent".into());
    }
    let has_color = img.color().has_color();
    if !has_color && mode == ColorMode::Gray {
        let gray = img.to_luma8().into_raw();
        return Ok(Frame {
            height: h,
            width: w,
            gray,
            rgb: None,
        });
    }
    let rgb = img.to_rgb8().into_raw();
    let mut frame = Frame::from_rgb(h, w, rgb).map_err(|e| e.to_string())?;
    if mode == ColorMode::Gray {
        frame.rgb = None;
    }
    Ok(frame)
}

/// Parses a binary PGM (P5) image, rescaling to 8 bits when maxval != 255.
pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<u8>), String> {
    let mut pos = 0usize;
    let magic = next_pnm_token(bytes, &mut pos).ok_or("missing PGM magic")?;
    if magic != b"P5" {
        return Err("not a binary PGM (P5)".into());
    }
    let mut header = [0usize; 3];
    for (slot, what) in header.iter_mut().zip(["width", "height", "maxval"]) {
        let tok = next_pnm_token(bytes, &mut pos).ok_or_else(|| format!("missing PGM {what}"))?;
        let text = std::str::from_utf8(tok).map_err(|_| format!("bad PGM {what}"))?;
        *slot = text
            .parse()
            .map_err(|_| format!("bad PGM {what}: {text:?}"))?;
    }
    let [width, height, maxval] = header;
    if width == 0 || height == 0 {
        return Err("PGM has zero extent".into());
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("PGM maxval {maxval} out of range"));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("PGM header not terminated by whitespace".into());
    }
    pos += 1;
    let bytes_per_sample = if maxval > 255 { 2 } else { 1 };
    let count = width.checked_mul(height).ok_or("PGM dimensions overflow")?;
    let needed = count
        .checked_mul(bytes_per_sample)
        .ok_or("PGM dimensions overflow")?;
    let raster = &bytes[pos..];
    if raster.len() < needed {
        return Err(format!(
            "truncated PGM raster: {} of {needed} bytes",
            raster.len()
        ));
    }
    let max = maxval as u32;
    let gray = if bytes_per_sample == 1 {
        raster[..needed]
            .iter()
            .map(|&v| {
                if max == 255 {
                    v
                } else {
                    ((v.min(maxval as u8) as u32 * 255 + max / 2) / max) as u8
                }
            })
            .collect()
    } else {
        raster[..needed]
            .chunks_exact(2)
            .map(|c| {
                let v = (u16::from_be_bytes([c[0], c[1]]) as u32).min(max);
                ((v * 255 + max / 2) / max) as u8
            })
            .collect()
    };
    Ok((height, width, gray))
}

fn next_pnm_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

/// Encodes an 8-bit grayscale frame as binary PGM.
pub fn encode_pgm(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend_from_slice(&frame.gray);
    out
}

/// Dense f32 tensor in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::invalid("tensor needs at least one dimension"));
        }
        if dims.len() > u8::MAX as usize {
            return Err(Error::invalid(format!(
                "tensor rank {} exceeds 255",
                dims.len()
            )));
        }
        if let Some(i) = dims.iter().position(|&d| d == 0) {
            return Err(Error::invalid(format!("tensor extent {i} is zero")));
        }
        let numel = checked_numel(&dims)
            .ok_or_else(|| Error::invalid(format!("tensor dims {dims:?} overflow")))?;
        if numel != data.len() {
            return Err(Error::invalid(format!(
                "dims {dims:?} need {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let n = checked_numel(&dims).unwrap_or(0);
        Self::new(dims, vec![0.0; n])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn into_parts(self) -> (Vec<usize>, Vec<f32>) {
        (self.dims, self.data)
    }

    /// Same data, new shape.
    pub fn reshape(self, dims: Vec<usize>) -> Result<Self> {
        Self::new(dims, self.data)
    }

    /// Bitwise equality, distinguishing NaN payloads and signed zeros.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.dims == other.dims
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

fn checked_numel(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

/// Serializes a tensor to STVT bytes.
pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * t.dims.len() + 4 * t.data.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&[FORMAT_VERSION, DTYPE_F32, t.dims.len() as u8, 0]);
    for &d in &t.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses one STVT record from the front of `bytes`, returning the tensor and
/// the number of bytes consumed.
pub fn decode_tensor_prefix(bytes: &[u8]) -> Result<(Tensor, usize)> {
    if bytes.len() < 8 {
        return Err(Error::format("STVT header truncated"));
    }
    if &bytes[..4] != TENSOR_MAGIC {
        return Err(Error::format(format!(
            "bad magic {:02x?}, expected \"STVT\"",
            &bytes[..4]
        )));
    }
    let (version, dtype, ndim, reserved) = (bytes[4], bytes[5], bytes[6] as usize, bytes[7]);
    if version != FORMAT_VERSION {
        return Err(Error::format(format!("unsupported STVT version {version}")));
    }
    if dtype != DTYPE_F32 {
        return Err(Error::format(format!(
            "unsupported dtype {dtype}, only f32 (0) is supported"
        )));
    }
    if reserved != 0 {
        return Err(Error::format("reserved header byte must be zero"));
    }
    if ndim == 0 {
        return Err(Error::format("STVT rank must be at least 1"));
    }
    let dims_end = 8 + 8 * ndim;
    if bytes.len() < dims_end {
        return Err(Error::format("STVT extents truncated"));
    }
    let mut dims = Vec::with_capacity(ndim);
    for chunk in bytes[8..dims_end].chunks_exact(8) {
        let d = u64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        let d = usize::try_from(d).map_err(|_| Error::format(format!("extent {d} too large")))?;
        if d == 0 {
            return Err(Error::format("STVT extent of zero"));
        }
        dims.push(d);
    }
    let numel =
        checked_numel(&dims).ok_or_else(|| Error::format(format!("dims {dims:?} overflow")))?;
    let payload_len = numel
        .checked_mul(4)
        .ok_or_else(|| Error::format(format!("dims {dims:?} overflow")))?;
    let available = bytes.len() - dims_end;
    if available < payload_len {
        return Err(Error::format(format!(
            "truncated payload: dims {dims:?} need {numel} values, found {}",
            available / 4
        )));
    }
    let data = bytes[dims_end..dims_end + payload_len]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    Ok((Tensor { dims, data }, dims_end + payload_len))
}

/// Parses a complete STVT file; trailing bytes are rejected.
pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let (t, used) = decode_tensor_prefix(bytes)?;
    if used != bytes.len() {
        return Err(Error::format(format!(
            "{} trailing bytes after STVT payload",
            bytes.len() - used
        )));
    }
    Ok(t)
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes).map_err(|e| e.in_file(path))
}

pub fn write_tensor(t: &Tensor, path: &Path) -> Result<()> {
    fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

/// Named tensors, kept in name order so encoding is deterministic.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightBundle {
    entries: BTreeMap<String, Tensor>,
}

impl WeightBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::invalid("bundle entry names must be nonempty"));
        }
        if name.len() > u16::MAX as usize {
            return Err(Error::invalid("bundle entry name longer than 65535 bytes"));
        }
        if self.entries.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate bundle entry {name:?}")));
        }
        self.entries.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }
}

pub fn encode_bundle(b: &WeightBundle) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(BUNDLE_MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(b.entries.len() as u32).to_le_bytes());
    for (name, t) in &b.entries {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&encode_tensor(t));
    }
    out
}

pub fn decode_bundle(bytes: &[u8]) -> Result<WeightBundle> {
    if bytes.len() < 9 {
        return Err(Error::format("STVB header truncated"));
    }
    if &bytes[..4] != BUNDLE_MAGIC {
        return Err(Error::format(format!(
            "bad magic {:02x?}, expected \"STVB\"",
            &bytes[..4]
        )));
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(Error::format(format!(
            "unsupported STVB version {}",
            bytes[4]
        )));
    }
    let count = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes"));
    let mut pos = 9usize;
    let mut bundle = WeightBundle::new();
    for i in 0..count {
        if bytes.len() < pos + 2 {
            return Err(Error::format(format!("entry {i}: name length truncated")));
        }
        let name_len = u16::from_le_bytes([bytes[pos], bytes[pos + 1]]) as usize;
        pos += 2;
        if bytes.len() < pos + name_len {
            return Err(Error::format(format!("entry {i}: name truncated")));
        }
        let name = std::str::from_utf8(&bytes[pos..pos + name_len])
            .map_err(|_| Error::format(format!("entry {i}: name is not UTF-8")))?
            .to_owned();
        pos += name_len;
        let (t, used) = decode_tensor_prefix(&bytes[pos..])
            .map_err(|e| Error::format(format!("entry {name:?}: {e}")))?;
        pos += used;
        bundle
            .insert(name, t)
            .map_err(|e| Error::format(e.to_string()))?;
    }
    if pos != bytes.len() {
        return Err(Error::format(format!(
            "{} trailing bytes after STVB entries",
            bytes.len() - pos
        )));
    }
    Ok(bundle)
}

pub fn read_bundle(path: &Path) -> Result<WeightBundle> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bundle(&bytes).map_err(|e| e.in_file(path))
}

pub fn write_bundle(b: &WeightBundle, path: &Path) -> Result<()> {
    fs::write(path, encode_bundle(b)).map_err(|e| Error::io(path, e))
}

/// Serializes `value` as pretty JSON with a trailing newline. Struct field
/// order is declaration order, so output is byte-stable.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
