//! IDX (MNIST) reader.
//!
//! Images: big-endian magic `0x00000803`, then `n`, `rows`, `cols` as u32,
//! then `n·rows·cols` unsigned bytes. Labels: magic `0x00000801`, `n`, then
//! `n` bytes.

use std::path::Path;

use super::{Dataset, Standardizer};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header ({} bytes)", bytes.len())))
}

/// Returns `(rows, cols, pixels)` with one `rows·cols` chunk per image.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let magic = read_u32(bytes, 0, "images")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "images: bad magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}"
        )));
    }
    let n = read_u32(bytes, 4, "images")? as usize;
    let rows = read_u32(bytes, 8, "images")? as usize;
    let cols = read_u32(bytes, 12, "images")? as usize;
    let need = n * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::Format(format!(
            "images: expected {need} pixel bytes, found {}",
            body.len()
        )));
    }
    Ok((rows, cols, body[..need].to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0, "labels")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!(
            "labels: bad magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}"
        )));
    }
    let n = read_u32(bytes, 4, "labels")? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::Format(format!(
            "labels: expected {n} label bytes, found {}",
            body.len()
        )));
    }
    Ok(body[..n].to_vec())
}

/// Pixels scaled to `[0, 1]`, not standardized.
pub fn load_idx_unstandardized(images: &Path, labels: &Path) -> Result<Dataset> {
    let img_bytes = std::fs::read(images).map_err(|e| Error::io(images, e))?;
    let lbl_bytes = std::fs::read(labels).map_err(|e| Error::io(labels, e))?;
    let (rows, cols, pixels) = parse_idx_images(&img_bytes)?;
    let labels = parse_idx_labels(&lbl_bytes)?;
    let dim = rows * cols;
    let n = if dim == 0 { 0 } else { pixels.len() / dim };
    if n != labels.len() {
        return Err(Error::Format(format!(
            "{n} images but {} labels",
            labels.len()
        )));
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m as usize + 1).max(2);
    let features = Matrix::new(n, dim, pixels.iter().map(|&p| f64::from(p) / 255.0).collect())?;
    Dataset::new(
        features,
        labels.into_iter().map(usize::from).collect(),
        classes,
        format!("idx({})", images.display()),
    )
}

/// IDX dataset standardized with its own global pixel mean and std.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let mut ds = load_idx_unstandardized(images, labels)?;
    let st = Standardizer::fit_global(&ds.features);
    ds.features = st.apply(&ds.features);
    ds.standardizer = Some(st);
    Ok(ds)
}
