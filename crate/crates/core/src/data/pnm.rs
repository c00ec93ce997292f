//! Binary PGM (P5) and PPM (P6) images with maxval 255.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{read_file, write_file};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct PnmImage {
    /// `[channels, height, width]` with values in `[0, 1]`.
    pub pixels: Tensor,
}

/// What encoding to 8 bits did to out-of-range values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodeReport {
    pub saturated_fraction: f64,
    pub min_value: f32,
    pub max_value: f32,
}

/// Encodes a `[1|3, H, W]` tensor; values outside `[0, 1]` saturate.
pub fn encode_pnm(image: &Tensor) -> Result<(Vec<u8>, EncodeReport)> {
    let [c, h, w] = image.shape()[..] else {
        return Err(Error::invalid("images must be [C, H, W]"));
    };
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::invalid("PNM output needs 1 or 3 channels")),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let data = image.data();
    let mut saturated = 0usize;
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = data[(ch * h + y) * w + x];
                if !(0.0..=1.0).contains(&v) {
                    saturated += 1;
                }
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    let report = EncodeReport {
        saturated_fraction: saturated as f64 / data.len().max(1) as f64,
        min_value: data.iter().copied().fold(f32::INFINITY, f32::min),
        max_value: image.max(),
    };
    Ok((out, report))
}

pub fn write_pnm(image: &Tensor, path: &Path) -> Result<EncodeReport> {
    let (bytes, report) = encode_pnm(image)?;
    write_file(path, &bytes)?;
    Ok(report)
}

pub fn decode_pnm(path: &Path, bytes: &[u8]) -> Result<PnmImage> {
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated PNM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let channels = match fields[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::format(path, format!("unsupported PNM kind {other}"))),
    };
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format(path, format!("bad PNM header field `{s}`")))
    };
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(path, "only 8-bit PNM is supported"));
    }
    let n = w * h * channels;
    let payload = bytes.get(pos..pos + n).ok_or_else(|| Error::Data {
        path: path.to_path_buf(),
        offset: bytes.len() as u64,
        message: format!("PNM payload needs {n} bytes"),
    })?;
    let mut data = vec![0.0f32; n];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..channels {
                data[(ch * h + y) * w + x] =
                    payload[(y * w + x) * channels + ch] as f32 / maxval as f32;
            }
        }
    }
    Ok(PnmImage {
        pixels: Tensor::new(vec![channels, h, w], data)?,
    })
}

pub fn read_pnm(path: &Path) -> Result<PnmImage> {
    decode_pnm(path, &read_file(path)?)
}

/// Ingests an externally annotated `{image, mask}` pair. The mask is a PGM
/// whose nonzero pixels mark the object; it is returned as a `[H, W]` 0/1
/// tensor.
pub fn load_image_mask_pair(image_path: &Path, mask_path: &Path) -> Result<(Tensor, Tensor)> {
    let image = read_pnm(image_path)?.pixels;
    let mask = read_pnm(mask_path)?.pixels;
    if mask.shape()[0] != 1 {
        return Err(Error::format(mask_path, "mask must be a single-channel PGM"));
    }
    let (h, w) = (image.shape()[1], image.shape()[2]);
    if mask.shape()[1..] != [h, w] {
        return Err(Error::ShapeMismatch {
            context: format!("mask {}", mask_path.display()),
            expected: vec![1, h, w],
            actual: mask.shape().to_vec(),
        });
    }
    let binary = mask.map(|v| if v > 0.0 { 1.0 } else { 0.0 }).reshape(&[h, w])?;
    Ok((image, binary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn in_range_images_round_trip_at_8_bits() {
        let t = Tensor::from_fn(&[3, 4, 5], |i| (i * 7 % 256) as f32 / 255.0);
        let (bytes, report) = encode_pnm(&t).unwrap();
        assert_eq!(report.saturated_fraction, 0.0);
        let back = decode_pnm(Path::new("x.ppm"), &bytes).unwrap().pixels;
        assert_eq!(back, t);
    }

    #[test]
    fn out_of_range_values_saturate_and_are_counted() {
        let t = Tensor::new(vec![1, 1, 4], vec![-0.5, 0.25, 1.5, 1.0]).unwrap();
        let (bytes, report) = encode_pnm(&t).unwrap();
        assert_eq!(report.saturated_fraction, 0.5);
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 64, 255, 255]);
    }
}
