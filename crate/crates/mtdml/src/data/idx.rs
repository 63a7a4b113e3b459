//! IDX image/label file loading (the MNIST container format).
//!
//! Big-endian headers, magic 0x00000803 for images and 0x00000801 for
//! labels. Pixels are scaled from 0..=255 into [0, 1].

use super::{Dataset, Shape};
use crate::error::{Error, Result};
use crate::linalg::Mat;

use std::path::Path;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Loads a paired IDX image file and label file into a dataset.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;

    let (count, h, w, pixels) = parse_images(&images)?;
    let label_values = parse_labels(&labels)?;
    if label_values.len() != count {
        return Err(Error::Format(format!(
            "{count} images but {} labels",
            label_values.len()
        )));
    }
    let num_classes = label_values.iter().copied().max().unwrap_or(0) as usize + 1;
    let name = images_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".to_string());

    let data: Vec<f32> = pixels.iter().map(|&b| b as f32 / 255.0).collect();
    Dataset::new(
        Mat::from_vec(count, h * w, data)?,
        label_values.iter().map(|&l| l as usize).collect(),
        num_classes.max(2),
        (0.0, 1.0),
        &name,
        Shape::Image { h, w, c: 1 },
    )
}

fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    if bytes.len() < 16 {
        return Err(Error::Format("image file shorter than its header".into()));
    }
    let magic = be_u32(bytes, 0);
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "bad image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"
        )));
    }
    let count = be_u32(bytes, 4) as usize;
    let h = be_u32(bytes, 8) as usize;
    let w = be_u32(bytes, 12) as usize;
    let expected = 16 + count * h * w;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "image file has {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    Ok((count, h, w, &bytes[16..]))
}

fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    if bytes.len() < 8 {
        return Err(Error::Format("label file shorter than its header".into()));
    }
    let magic = be_u32(bytes, 0);
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!(
            "bad label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"
        )));
    }
    let count = be_u32(bytes, 4) as usize;
    if bytes.len() != 8 + count {
        return Err(Error::Format(format!(
            "label file has {} bytes, expected {}",
            bytes.len(),
            8 + count
        )));
    }
    Ok(bytes[8..].to_vec())
}

fn be_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_be_bytes(bytes[offset..offset + 4].try_into().expect("bounds checked"))
}

#[cfg(test)]
pub(crate) fn write_idx_pair(
    dir: &Path,
    images: &[Vec<u8>],
    labels: &[u8],
    h: usize,
    w: usize,
) -> (std::path::PathBuf, std::path::PathBuf) {
    let mut img = Vec::new();
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(images.len() as u32).to_be_bytes());
    img.extend_from_slice(&(h as u32).to_be_bytes());
    img.extend_from_slice(&(w as u32).to_be_bytes());
    for im in images {
        img.extend_from_slice(im);
    }
    let mut lab = Vec::new();
    lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);

    let ip = dir.join("images-idx3-ubyte");
    let lp = dir.join("labels-idx1-ubyte");
    std::fs::write(&ip, img).unwrap();
    std::fs::write(&lp, lab).unwrap();
    (ip, lp)
}
