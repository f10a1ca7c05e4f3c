//! IDX files: big-endian magic, dimension sizes, then raw unsigned bytes.

use std::fs;
use std::path::Path;

use super::ImageBatch;
use crate::error::{Error, Result};
use crate::graph::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("truncated header reading {what}")))
}

/// Parse an image file: magic `0x803`, then `n`, rows, cols. Pixels are
/// scaled by `1/255`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<ImageBatch> {
    let magic = read_u32(bytes, 0, "magic")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!("image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}")));
    }
    let n = read_u32(bytes, 4, "count")? as usize;
    let h = read_u32(bytes, 8, "rows")? as usize;
    let w = read_u32(bytes, 12, "cols")? as usize;
    let need = n
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::Format("image dimensions overflow".into()))?;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::Format(format!("truncated pixels: {} of {need} bytes", body.len())));
    }
    if body.len() > need {
        return Err(Error::Format(format!("{} trailing bytes", body.len() - need)));
    }
    let data = body.iter().map(|&b| b as f64 / 255.0).collect();
    ImageBatch::new(Tensor::new(vec![n, h, w], data)?, None)
}

/// Parse a label file: magic `0x801`, then `n`, then one byte per label.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0, "magic")?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!("label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}")));
    }
    let n = read_u32(bytes, 4, "count")? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::Format(format!("{} label bytes for {n} labels", body.len())));
    }
    Ok(body.iter().map(|&b| b as usize).collect())
}

pub fn load_idx(path: impl AsRef<Path>) -> Result<ImageBatch> {
    parse_idx_images(&fs::read(path)?)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    parse_idx_labels(&fs::read(path)?)
}

/// Images with their labels; the counts must agree.
pub fn load_idx_pair(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<ImageBatch> {
    let batch = load_idx(images)?;
    let labels = load_idx_labels(labels)?;
    batch.with_labels(labels)
}

/// Encode images (values rounded from `[0, 1]` to bytes).
pub fn encode_idx_images(batch: &ImageBatch) -> Vec<u8> {
    let (n, h, w) = batch.dims();
    let mut out = Vec::with_capacity(16 + n * h * w);
    for v in [IMAGE_MAGIC, n as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(batch.images.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn encode_idx_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        out.push(u8::try_from(l).map_err(|_| Error::Format(format!("label {l} does not fit a byte")))?);
    }
    Ok(out)
}
