//! IDX-format MNIST ingestion.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub struct MnistSample {
    /// Row-major grayscale pixels in `[0, 1]`.
    pub pixels: Vec<f64>,
    pub side: usize,
    pub digit: u8,
}

fn read_u32(bytes: &[u8], offset: usize, what: &'static str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            what,
            offset: offset as u64,
            reason: "file ends inside the header".into(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, what: &'static str) -> Result<()> {
    let magic = read_u32(bytes, 0, what)?;
    if magic != expected {
        return Err(Error::Format {
            what,
            offset: 0,
            reason: format!("bad magic {magic:#010x}, expected {expected:#010x}"),
        });
    }
    Ok(())
}

fn check_len(bytes: &[u8], header: usize, body: usize, what: &'static str) -> Result<()> {
    let need = header + body;
    if bytes.len() < need {
        return Err(Error::Format {
            what,
            offset: bytes.len() as u64,
            reason: format!("truncated: header promises {need} bytes, file has {}", bytes.len()),
        });
    }
    Ok(())
}

/// Parses an image file into `(rows, cols, raw pixel bytes per image)`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, Vec<Vec<u8>>)> {
    const WHAT: &str = "IDX image file";
    check_magic(bytes, IMAGES_MAGIC, WHAT)?;
    let n = read_u32(bytes, 4, WHAT)? as usize;
    let rows = read_u32(bytes, 8, WHAT)? as usize;
    let cols = read_u32(bytes, 12, WHAT)? as usize;
    let size = rows * cols;
    check_len(bytes, 16, n * size, WHAT)?;
    let images = bytes[16..16 + n * size]
        .chunks(size.max(1))
        .take(n)
        .map(|c| c.to_vec())
        .collect();
    Ok((rows, cols, images))
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    const WHAT: &str = "IDX label file";
    check_magic(bytes, LABELS_MAGIC, WHAT)?;
    let n = read_u32(bytes, 4, WHAT)? as usize;
    check_len(bytes, 8, n, WHAT)?;
    let labels = bytes[8..8 + n].to_vec();
    if let Some(pos) = labels.iter().position(|&l| l > 9) {
        return Err(Error::Format {
            what: WHAT,
            offset: 8 + pos as u64,
            reason: format!("label {} out of range", labels[pos]),
        });
    }
    Ok(labels)
}

/// Combines parsed images and labels, scaling bytes to `[0, 1]`.
pub fn samples_from_bytes(images: &[u8], labels: &[u8]) -> Result<Vec<MnistSample>> {
    let (rows, cols, imgs) = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if imgs.len() != labels.len() {
        return Err(Error::Format {
            what: "IDX label file",
            offset: 4,
            reason: format!("{} labels for {} images", labels.len(), imgs.len()),
        });
    }
    if rows != cols {
        return Err(Error::Format {
            what: "IDX image file",
            offset: 8,
            reason: format!("non-square images {rows}x{cols}"),
        });
    }
    Ok(imgs
        .into_iter()
        .zip(labels)
        .map(|(img, digit)| MnistSample {
            pixels: img.iter().map(|&b| b as f64 / 255.0).collect(),
            side: rows,
            digit,
        })
        .collect())
}

pub fn load(images: &Path, labels: &Path) -> Result<Vec<MnistSample>> {
    let ib = fs::read(images).map_err(|e| Error::io(images, e))?;
    let lb = fs::read(labels).map_err(|e| Error::io(labels, e))?;
    samples_from_bytes(&ib, &lb)
}

/// 2×2 average pooling (28×28 → 14×14).
pub fn downsample(sample: &MnistSample) -> MnistSample {
    let side = sample.side / 2;
    let mut pixels = vec![0.0; side * side];
    for r in 0..side {
        for c in 0..side {
            let at = |dr: usize, dc: usize| sample.pixels[(2 * r + dr) * sample.side + 2 * c + dc];
            pixels[r * side + c] = (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) / 4.0;
        }
    }
    MnistSample {
        pixels,
        side,
        digit: sample.digit,
    }
}

/// Expands grayscale pixels into two channels; channel `colour` carries the
/// pixels and the other is zero.
pub fn colourize(pixels: &[f64], colour: bool) -> Vec<f64> {
    let n = pixels.len();
    let mut out = vec![0.0; 2 * n];
    let start = if colour { n } else { 0 };
    out[start..start + n].copy_from_slice(pixels);
    out
}

/// Encodes samples as IDX image and label files (used for fixtures).
pub fn encode_idx(samples: &[(Vec<u8>, u8)], side: usize) -> (Vec<u8>, Vec<u8>) {
    let mut images = Vec::new();
    images.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    images.extend_from_slice(&(samples.len() as u32).to_be_bytes());
    images.extend_from_slice(&(side as u32).to_be_bytes());
    images.extend_from_slice(&(side as u32).to_be_bytes());
    let mut labels = Vec::new();
    labels.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(samples.len() as u32).to_be_bytes());
    for (px, d) in samples {
        images.extend_from_slice(px);
        labels.push(*d);
    }
    (images, labels)
}
