//! Datasets, portable file formats and experiment manifests.

mod idx;
mod manifest;
pub mod pnm;
mod record;
mod shapes;
mod tensor_file;

pub use idx::{encode_idx_images, encode_idx_labels, load_idx, IdxDataset};
pub use manifest::{
    file_crc, rebuild_index, DatasetEntry, ExperimentManifest, FileEntry, ManifestWriter,
    ModelEntry, RecordEntry, MANIFEST_FILE,
};
pub use pnm::{load_image_mask_pair, read_pnm, write_pnm, EncodeReport, PnmImage};
pub use record::{encode_record, load_record, save_record, RECORD_EXTENSION};
pub use shapes::{generate_shapes, rasterize, ShapeKind, ShapesConfig, SHAPE_KINDS};
pub use tensor_file::{
    decode_tensor, encode_tensor, encode_tensor_with_meta, load_tensor, save_tensor,
    TensorHeader, TENSOR_MAGIC, TENSOR_VERSION,
};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Images with labels and, when available, binary object masks of shape
/// `[H, W]` (1 = inside the labelled object).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub masks: Option<Vec<Tensor>>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.is_empty() {
            return Err(Error::invalid("empty split"));
        }
        if self.images.len() != self.labels.len() {
            return Err(Error::invalid("image and label counts differ"));
        }
        if let Some(masks) = &self.masks {
            if masks.len() != self.images.len() {
                return Err(Error::invalid("image and mask counts differ"));
            }
        }
        Ok(())
    }

    /// The first `per_class` samples of every class, in class order.
    pub fn first_per_class(&self, num_classes: usize, per_class: usize) -> Split {
        let mut picked = Vec::new();
        for class in 0..num_classes {
            picked.extend(
                self.labels
                    .iter()
                    .enumerate()
                    .filter(|(_, &l)| l == class)
                    .map(|(i, _)| i)
                    .take(per_class),
            );
        }
        self.select(&picked)
    }

    pub fn select(&self, indices: &[usize]) -> Split {
        Split {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            masks: self
                .masks
                .as_ref()
                .map(|m| indices.iter().map(|&i| m[i].clone()).collect()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub image_shape: Vec<usize>,
    pub train: Split,
    pub test: Split,
}

impl Dataset {
    /// CRC32 over a canonical little-endian serialisation of both splits.
    pub fn fingerprint(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        h.update(self.name.as_bytes());
        h.update(&(self.num_classes as u64).to_le_bytes());
        for split in [&self.train, &self.test] {
            h.update(&(split.len() as u64).to_le_bytes());
            for (i, x) in split.images.iter().enumerate() {
                for &d in x.shape() {
                    h.update(&(d as u64).to_le_bytes());
                }
                for v in x.data() {
                    h.update(&v.to_le_bytes());
                }
                h.update(&(split.labels[i] as u64).to_le_bytes());
                if let Some(masks) = &split.masks {
                    for v in masks[i].data() {
                        h.update(&v.to_le_bytes());
                    }
                }
            }
        }
        h.finalize()
    }
}

/// Fraction of mask pixels inside the object divided by the fraction outside.
pub fn areal_ratio(mask: &Tensor) -> f64 {
    let inside = mask.data().iter().filter(|&&v| v > 0.5).count();
    let outside = mask.len() - inside;
    if outside == 0 {
        f64::INFINITY
    } else {
        inside as f64 / outside as f64
    }
}
