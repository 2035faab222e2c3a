//! Reader and writer for the big-endian IDX container used by MNIST.
//!
//! Files ending in `.gz` are transparently gunzipped on read.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::{ImageDataset, Split};
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Maps a raw byte onto `[-1, 1]`.
#[inline]
pub fn byte_to_intensity(v: u8) -> f32 {
    2.0 * f32::from(v) / 255.0 - 1.0
}

/// Inverse of [`byte_to_intensity`]; exact for every value it produced.
#[inline]
pub fn intensity_to_byte(x: f32) -> u8 {
    ((x + 1.0) * 255.0 / 2.0).round().clamp(0.0, 255.0) as u8
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            path: path.to_owned(),
            msg: format!("truncated header at byte {at}"),
        })
}

/// Raw decoded images file: `(count, rows, cols, pixel bytes)`.
pub fn decode_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format {
            path: path.to_owned(),
            msg: format!("bad magic number {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        });
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let payload = &bytes[16..];
    let expected = n * rows * cols;
    if payload.len() != expected {
        return Err(Error::Format {
            path: path.to_owned(),
            msg: format!("payload is {} bytes, header implies {expected}", payload.len()),
        });
    }
    Ok((n, rows, cols, payload.to_vec()))
}

pub fn decode_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format {
            path: path.to_owned(),
            msg: format!("bad magic number {magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        });
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let payload = &bytes[8..];
    if payload.len() != n {
        return Err(Error::Format {
            path: path.to_owned(),
            msg: format!("payload is {} bytes, header implies {n}", payload.len()),
        });
    }
    Ok(payload.to_vec())
}

/// Loads an image/label file pair into an [`ImageDataset`].
pub fn parse_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<ImageDataset> {
    let (n, rows, cols, pixels) = decode_images(&read_all(images_path)?, images_path)?;
    let labels = decode_labels(&read_all(labels_path)?, labels_path)?;
    if labels.len() != n {
        return Err(Error::Consistency(format!(
            "{} holds {n} images but {} holds {} labels",
            images_path.display(),
            labels_path.display(),
            labels.len()
        )));
    }
    let images = pixels.iter().copied().map(byte_to_intensity).collect();
    ImageDataset::new(rows, cols, 1, images, labels, split)
}

pub fn encode_images(dataset: &ImageDataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + dataset.pixels().len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    out.extend_from_slice(&(dataset.height() as u32).to_be_bytes());
    out.extend_from_slice(&(dataset.width() as u32).to_be_bytes());
    out.extend(dataset.pixels().iter().copied().map(intensity_to_byte));
    out
}

pub fn encode_labels(dataset: &ImageDataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + dataset.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    out.extend_from_slice(dataset.labels());
    out
}

/// Writes uncompressed IDX files.
pub fn write_idx(dataset: &ImageDataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    fs::write(images_path, encode_images(dataset)).map_err(|e| Error::io(images_path, e))?;
    fs::write(labels_path, encode_labels(dataset)).map_err(|e| Error::io(labels_path, e))?;
    Ok(())
}
