//! Procedural geometric-shape dataset with exact object masks.
//!
//! Each image holds one bright shape on a dim textured background. The mask
//! is the shape's rasterised footprint, evaluated at pixel centres, and is
//! exactly the set of pixels painted with the shape's intensity.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng, uniform, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Disk,
    Square,
    Triangle,
    Plus,
    Ring,
    Diamond,
    Cross,
    Frame,
    HalfDisk,
    Bars,
}

pub const SHAPE_KINDS: [ShapeKind; 10] = [
    ShapeKind::Disk,
    ShapeKind::Square,
    ShapeKind::Triangle,
    ShapeKind::Plus,
    ShapeKind::Ring,
    ShapeKind::Diamond,
    ShapeKind::Cross,
    ShapeKind::Frame,
    ShapeKind::HalfDisk,
    ShapeKind::Bars,
];

impl ShapeKind {
    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Disk => "disk",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
            ShapeKind::Plus => "plus",
            ShapeKind::Ring => "ring",
            ShapeKind::Diamond => "diamond",
            ShapeKind::Cross => "cross",
            ShapeKind::Frame => "frame",
            ShapeKind::HalfDisk => "half_disk",
            ShapeKind::Bars => "bars",
        }
    }

    /// Membership test in shape-local coordinates scaled to the unit radius.
    pub fn contains(self, u: f64, v: f64) -> bool {
        let r = (u * u + v * v).sqrt();
        let cheb = u.abs().max(v.abs());
        match self {
            ShapeKind::Disk => r <= 1.0,
            ShapeKind::Square => cheb <= 0.85,
            ShapeKind::Triangle => (-0.95..=0.9).contains(&v) && u.abs() <= 0.6 * (v + 0.95),
            ShapeKind::Plus => {
                (u.abs() <= 0.4 && v.abs() <= 0.95) || (v.abs() <= 0.4 && u.abs() <= 0.95)
            }
            ShapeKind::Ring => (0.45..=1.0).contains(&r),
            ShapeKind::Diamond => u.abs() + v.abs() <= 1.0,
            ShapeKind::Cross => cheb <= 0.85 && ((u - v).abs() <= 0.55 || (u + v).abs() <= 0.55),
            ShapeKind::Frame => (0.4..=0.85).contains(&cheb),
            ShapeKind::HalfDisk => r <= 1.0 && v >= -0.1,
            ShapeKind::Bars => u.abs() <= 0.9 && (0.15..=0.75).contains(&v.abs()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapesConfig {
    pub seed: u64,
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub image_size: usize,
    #[serde(default = "one")]
    pub channels: usize,
}

fn one() -> usize {
    1
}

const MIN_IMAGE_SIZE: usize = 12;
const STRIPE_PERIOD: f64 = 4.0;

/// Rasterises a shape of radius `radius` centred at `(cx, cy)` into an
/// `[H, W]` mask, sampling at pixel centres.
pub fn rasterize(kind: ShapeKind, size: usize, cx: f64, cy: f64, radius: f64) -> Tensor {
    Tensor::from_fn(&[size, size], |i| {
        let (y, x) = (i / size, i % size);
        let u = (x as f64 + 0.5 - cx) / radius;
        let v = (y as f64 + 0.5 - cy) / radius;
        if kind.contains(u, v) {
            1.0
        } else {
            0.0
        }
    })
}

pub fn generate_shapes(cfg: &ShapesConfig) -> Result<Dataset> {
    if cfg.num_classes < 2 || cfg.num_classes > SHAPE_KINDS.len() {
        return Err(Error::invalid(format!(
            "shapes dataset supports 2..={} classes, got {}",
            SHAPE_KINDS.len(),
            cfg.num_classes
        )));
    }
    if cfg.image_size < MIN_IMAGE_SIZE {
        return Err(Error::invalid(format!(
            "image size {} is too small for the shape scale (minimum {MIN_IMAGE_SIZE})",
            cfg.image_size
        )));
    }
    if cfg.channels != 1 && cfg.channels != 3 {
        return Err(Error::invalid("shapes dataset supports 1 or 3 channels"));
    }
    if cfg.train_per_class == 0 || cfg.test_per_class == 0 {
        return Err(Error::invalid("need at least one image per class and split"));
    }
    let train = split(cfg, "shapes-train", cfg.train_per_class);
    let test = split(cfg, "shapes-test", cfg.test_per_class);
    Ok(Dataset {
        name: format!("shapes-k{}-s{}-c{}", cfg.num_classes, cfg.image_size, cfg.channels),
        num_classes: cfg.num_classes,
        class_names: SHAPE_KINDS[..cfg.num_classes]
            .iter()
            .map(|k| k.name().to_string())
            .collect(),
        image_shape: vec![cfg.channels, cfg.image_size, cfg.image_size],
        train,
        test,
    })
}

/// Interleaves classes (0, 1, .., K-1, 0, 1, ..) so class balance is exact.
fn split(cfg: &ShapesConfig, purpose: &str, per_class: usize) -> Split {
    let total = per_class * cfg.num_classes;
    let mut out = Split {
        images: Vec::with_capacity(total),
        labels: Vec::with_capacity(total),
        masks: Some(Vec::with_capacity(total)),
    };
    for i in 0..total {
        let label = i % cfg.num_classes;
        let mut r = rng(derive_seed(cfg.seed, purpose, i as u64));
        let (image, mask) = draw(cfg, SHAPE_KINDS[label], &mut r);
        out.images.push(image);
        out.labels.push(label);
        out.masks.as_mut().expect("masks").push(mask);
    }
    out
}

fn range(r: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * uniform(r)
}

fn draw(cfg: &ShapesConfig, kind: ShapeKind, r: &mut Rng) -> (Tensor, Tensor) {
    use std::f64::consts::{PI, TAU};
    let s = cfg.image_size;
    let sf = s as f64;
    let radius = range(r, 0.40, 0.48) * sf;
    let margin = radius * 0.95 + 1.0;
    let cx = range(r, margin, sf - margin);
    let cy = range(r, margin, sf - margin);
    let mask = rasterize(kind, s, cx, cy, radius);

    // Objects carry stripes at a class-specific angle; the background carries
    // stripes at a random angle, so only the object's texture is informative.
    let class_angle = SHAPE_KINDS.iter().position(|&k| k == kind).unwrap_or(0) as f64 * PI
        / SHAPE_KINDS.len() as f64;
    let clutter_angle = range(r, 0.0, PI);
    let c = cfg.channels;
    let mut image = vec![0.0f32; c * s * s];
    for ch in 0..c {
        let base = range(r, 0.0, 0.2);
        let clutter_amp = range(r, 0.1, 0.2);
        let clutter_phase = range(r, 0.0, TAU);
        let fg = range(r, 0.7, 0.9);
        let stripe_phase = range(r, 0.0, TAU);
        for y in 0..s {
            for x in 0..s {
                let idx = y * s + x;
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let value = if mask.data()[idx] > 0.5 {
                    let along = dx * class_angle.cos() + dy * class_angle.sin();
                    fg + 0.08 * (along * TAU / STRIPE_PERIOD + stripe_phase).sin()
                        + range(r, -0.03, 0.03)
                } else {
                    let along = dx * clutter_angle.cos() + dy * clutter_angle.sin();
                    base + clutter_amp * (along * TAU / STRIPE_PERIOD + clutter_phase).sin()
                        + range(r, -0.08, 0.08)
                };
                image[ch * s * s + idx] = value.clamp(0.0, 1.0) as f32;
            }
        }
    }
    (
        Tensor::new(vec![c, s, s], image).expect("consistent shape"),
        mask,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ShapesConfig {
        ShapesConfig {
            seed: 5,
            num_classes: 10,
            train_per_class: 3,
            test_per_class: 2,
            image_size: 32,
            channels: 1,
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = generate_shapes(&cfg()).unwrap();
        let b = generate_shapes(&cfg()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn classes_are_balanced() {
        let d = generate_shapes(&cfg()).unwrap();
        for k in 0..10 {
            assert_eq!(d.train.labels.iter().filter(|&&l| l == k).count(), 3);
            assert_eq!(d.test.labels.iter().filter(|&&l| l == k).count(), 2);
        }
    }

    #[test]
    fn masks_are_the_rasterised_footprint() {
        let c = cfg();
        let d = generate_shapes(&c).unwrap();
        let masks = d.train.masks.as_ref().unwrap();
        let sf = c.image_size as f64;
        for (i, (x, m)) in d.train.images.iter().zip(masks).enumerate() {
            let mut r = rng(derive_seed(c.seed, "shapes-train", i as u64));
            let radius = range(&mut r, 0.40, 0.48) * sf;
            let margin = radius * 0.95 + 1.0;
            let cx = range(&mut r, margin, sf - margin);
            let cy = range(&mut r, margin, sf - margin);
            let kind = SHAPE_KINDS[d.train.labels[i]];
            assert_eq!(m, &rasterize(kind, c.image_size, cx, cy, radius));
            assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.0));
            let inside: Vec<f32> = x.data().iter().zip(m.data()).filter(|(_, &v)| v == 1.0).map(|(&p, _)| p).collect();
            let outside: Vec<f32> = x.data().iter().zip(m.data()).filter(|(_, &v)| v == 0.0).map(|(&p, _)| p).collect();
            let mean = |v: &[f32]| v.iter().sum::<f32>() / v.len() as f32;
            assert!(mean(&inside) > mean(&outside) + 0.3);
        }
    }

    #[test]
    fn too_small_images_are_rejected() {
        let mut c = cfg();
        c.image_size = 6;
        assert!(generate_shapes(&c).is_err());
        c.image_size = 32;
        c.num_classes = 1;
        assert!(generate_shapes(&c).is_err());
    }
}
