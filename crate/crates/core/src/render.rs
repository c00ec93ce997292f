//! Viewable renderings of perturbations, adversarial examples, similarity
//! heat maps and accuracy curves. Nothing here clips; out-of-range values
//! are saturated only when a file is encoded, and the saturated fraction is
//! written to a JSON sidecar next to the image.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::write_file;
use crate::data::pnm::write_pnm;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-channel mean and standard deviation of a reference image set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl DatasetStats {
    pub fn from_images(images: &[Tensor]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::invalid("dataset statistics need at least one image"))?;
        if first.shape().len() != 3 {
            return Err(Error::invalid("images must be [channels, height, width]"));
        }
        let channels = first.shape()[0];
        let plane = first.shape()[1] * first.shape()[2];
        let mut sum = vec![0.0f64; channels];
        let mut sum_sq = vec![0.0f64; channels];
        for img in images {
            img.ensure_shape(first.shape(), "dataset statistics")?;
            for (c, chunk) in img.data().chunks(plane).enumerate() {
                for &v in chunk {
                    sum[c] += v as f64;
                    sum_sq[c] += (v as f64) * (v as f64);
                }
            }
        }
        let count = (images.len() * plane) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let stats = Self {
            mean: mean.iter().map(|&m| m as f32).collect(),
            std: sum_sq
                .iter()
                .zip(&mean)
                .map(|(sq, m)| (sq / count - m * m).max(0.0).sqrt() as f32)
                .collect(),
        };
        stats.validate()?;
        Ok(stats)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.is_empty() || self.mean.len() != self.std.len() {
            return Err(Error::invalid("dataset statistics need one mean and std per channel"));
        }
        if self.std.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("dataset standard deviations must be positive"));
        }
        Ok(())
    }
}

/// Inverts `v` and matches each channel's mean and standard deviation to
/// `stats`. A constant channel renders as the reference mean.
pub fn render_untargeted(v: &Tensor, stats: &DatasetStats) -> Result<Tensor> {
    stats.validate()?;
    let shape = v.shape();
    if shape.len() != 3 || shape[0] != stats.mean.len() {
        return Err(Error::ShapeMismatch {
            context: "render_untargeted".into(),
            expected: vec![stats.mean.len(), 0, 0],
            actual: shape.to_vec(),
        });
    }
    let plane = shape[1] * shape[2];
    let mut out = Tensor::zeros(shape);
    for (c, (src, dst)) in v
        .data()
        .chunks(plane)
        .zip(out.data_mut().chunks_mut(plane))
        .enumerate()
    {
        let n = plane as f64;
        let mean = src.iter().map(|&x| -(x as f64)).sum::<f64>() / n;
        let var = src
            .iter()
            .map(|&x| (-(x as f64) - mean).powi(2))
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        let (target_mean, target_std) = (stats.mean[c] as f64, stats.std[c] as f64);
        for (d, &x) in dst.iter_mut().zip(src) {
            *d = if std > 0.0 {
                ((-(x as f64) - mean) / std * target_std + target_mean) as f32
            } else {
                target_mean as f32
            };
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetedRender {
    pub image: Tensor,
    /// Factor applied to the perturbation before it was added.
    pub scale: f32,
    /// Set when the perturbation had no positive entry and was used unscaled.
    pub unscaled: bool,
}

/// Scales `v` so its maximum is 0.5 and adds it to `x`.
pub fn render_targeted(x: &Tensor, v: &Tensor) -> Result<TargetedRender> {
    let max = v.max();
    let (scale, unscaled) = if max > 0.0 { (0.5 / max, false) } else { (1.0, true) };
    let scaled = if unscaled {
        v.clone()
    } else {
        v.map(|e| if e == max { 0.5 } else { e * scale })
    };
    Ok(TargetedRender {
        image: x.add(&scaled)?,
        scale,
        unscaled,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderMetadata {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stats: Option<DatasetStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<f32>,
    #[serde(default)]
    pub unscaled: bool,
    pub saturated_fraction: f64,
    pub min_value: f32,
    pub max_value: f32,
}

pub fn sidecar_path(image_path: &Path) -> PathBuf {
    image_path.with_extension("json")
}

/// Writes `image` as PGM/PPM and its metadata as a JSON sidecar. The
/// saturation fields of `meta` are filled in from the encoder.
pub fn write_render(image: &Tensor, path: &Path, mut meta: RenderMetadata) -> Result<RenderMetadata> {
    let report = write_pnm(image, path)?;
    meta.saturated_fraction = report.saturated_fraction;
    meta.min_value = report.min_value;
    meta.max_value = report.max_value;
    let mut bytes = serde_json::to_vec_pretty(&meta)?;
    bytes.push(b'\n');
    write_file(&sidecar_path(path), &bytes)?;
    Ok(meta)
}

impl RenderMetadata {
    pub fn new(kind: &str) -> Self {
        Self {
            kind: kind.into(),
            stats: None,
            scale: None,
            unscaled: false,
            saturated_fraction: 0.0,
            min_value: 0.0,
            max_value: 0.0,
        }
    }
}

/// Blue-white-red colour map over [-1, 1], returned as RGB in [0, 1].
fn diverging(v: f64) -> [f32; 3] {
    let t = v.clamp(-1.0, 1.0) as f32;
    if t >= 0.0 {
        [1.0, 1.0 - t, 1.0 - t]
    } else {
        [1.0 + t, 1.0 + t, 1.0]
    }
}

/// Square heat map of a matrix with entries in [-1, 1], `cell` pixels per entry.
pub fn heatmap(values: &[Vec<f64>], cell: usize) -> Result<Tensor> {
    let n = values.len();
    if n == 0 || cell == 0 || values.iter().any(|r| r.len() != n) {
        return Err(Error::invalid("heat map needs a non-empty square matrix"));
    }
    let side = n * cell;
    let mut img = Tensor::zeros(&[3, side, side]);
    let data = img.data_mut();
    for y in 0..side {
        for x in 0..side {
            let rgb = diverging(values[y / cell][x / cell]);
            for (c, v) in rgb.into_iter().enumerate() {
                data[c * side * side + y * side + x] = v;
            }
        }
    }
    Ok(img)
}

const PALETTE: [[f32; 3]; 6] = [
    [0.85, 0.10, 0.10],
    [0.10, 0.35, 0.85],
    [0.10, 0.60, 0.20],
    [0.85, 0.55, 0.05],
    [0.55, 0.15, 0.70],
    [0.20, 0.20, 0.20],
];

/// Line plot of several series sharing an x axis, y fixed to [0, 1].
pub fn line_plot(xs: &[f64], series: &[Vec<f64>], width: usize, height: usize) -> Result<Tensor> {
    if xs.is_empty() || series.iter().any(|s| s.len() != xs.len()) || width < 16 || height < 16 {
        return Err(Error::invalid("line plot needs equal-length series and a canvas of at least 16x16"));
    }
    let mut img = Tensor::full(&[3, height, width], 1.0);
    let margin = 6usize;
    let (w, h) = (width - 2 * margin, height - 2 * margin);
    let x_min = xs[0];
    let x_span = (xs[xs.len() - 1] - x_min).max(f64::EPSILON);
    let to_px = |x: f64, y: f64| -> (i64, i64) {
        let px = margin as f64 + (x - x_min) / x_span * (w - 1) as f64;
        let py = margin as f64 + (1.0 - y.clamp(0.0, 1.0)) * (h - 1) as f64;
        (px.round() as i64, py.round() as i64)
    };
    let axis = [0.0, 0.0, 0.0];
    draw_line(&mut img, (margin as i64, margin as i64), (margin as i64, (margin + h - 1) as i64), axis);
    draw_line(
        &mut img,
        (margin as i64, (margin + h - 1) as i64),
        ((margin + w - 1) as i64, (margin + h - 1) as i64),
        axis,
    );
    for (k, s) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        for i in 1..xs.len() {
            draw_line(&mut img, to_px(xs[i - 1], s[i - 1]), to_px(xs[i], s[i]), colour);
        }
    }
    Ok(img)
}

fn draw_line(img: &mut Tensor, (x0, y0): (i64, i64), (x1, y1): (i64, i64), rgb: [f32; 3]) {
    let (h, w) = (img.shape()[1] as i64, img.shape()[2] as i64);
    let data = img.data_mut();
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if (0..w).contains(&x) && (0..h).contains(&y) {
            for (c, v) in rgb.iter().enumerate() {
                data[(c as i64 * h * w + y * w + x) as usize] = *v;
            }
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}
