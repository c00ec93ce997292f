//! IDX (MNIST layout) images and labels. Dimensions are big-endian u32;
//! pixels are unsigned bytes scaled to `[0, 1]`.

use std::path::Path;

use crate::codec::read_file;
use crate::data::Split;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub struct IdxDataset {
    /// `[1, rows, cols]` each.
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub rows: usize,
    pub cols: usize,
}

impl IdxDataset {
    pub fn into_split(self) -> Split {
        Split {
            images: self.images,
            labels: self.labels,
            masks: None,
        }
    }
}

fn be_u32(path: &Path, bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Data {
            path: path.to_path_buf(),
            offset: offset as u64,
            message: "truncated header".into(),
        })
}

fn expect_magic(path: &Path, bytes: &[u8], magic: u32) -> Result<()> {
    let found = be_u32(path, bytes, 0)?;
    if found != magic {
        return Err(Error::Data {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("magic {found:#010x}, expected {magic:#010x}"),
        });
    }
    Ok(())
}

fn expect_payload(path: &Path, bytes: &[u8], offset: usize, needed: usize) -> Result<()> {
    let available = bytes.len().saturating_sub(offset);
    if available < needed {
        return Err(Error::Data {
            path: path.to_path_buf(),
            offset: (offset + available) as u64,
            message: format!("truncated payload: {needed} bytes needed, {available} present"),
        });
    }
    Ok(())
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<IdxDataset> {
    let img = read_file(images_path)?;
    expect_magic(images_path, &img, IMAGES_MAGIC)?;
    let count = be_u32(images_path, &img, 4)? as usize;
    let rows = be_u32(images_path, &img, 8)? as usize;
    let cols = be_u32(images_path, &img, 12)? as usize;
    let per = rows * cols;
    expect_payload(images_path, &img, 16, count * per)?;

    let lab = read_file(labels_path)?;
    expect_magic(labels_path, &lab, LABELS_MAGIC)?;
    let label_count = be_u32(labels_path, &lab, 4)? as usize;
    if label_count != count {
        return Err(Error::Data {
            path: labels_path.to_path_buf(),
            offset: 4,
            message: format!("{label_count} labels for {count} images"),
        });
    }
    expect_payload(labels_path, &lab, 8, count)?;

    let images = (0..count)
        .map(|i| {
            let px = &img[16 + i * per..16 + (i + 1) * per];
            Tensor::new(
                vec![1, rows, cols],
                px.iter().map(|&b| b as f32 / 255.0).collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = lab[8..8 + count].iter().map(|&b| b as usize).collect();
    Ok(IdxDataset {
        images,
        labels,
        rows,
        cols,
    })
}

/// Serialises `[count, rows, cols]` bytes in IDX image layout.
pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len() * rows * cols);
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(pixels.len() as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    for p in pixels {
        out.extend_from_slice(p);
    }
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
