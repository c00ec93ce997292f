//! `PLTN` tensor files.
//!
//! Layout: `PLTN`, u16 LE version, u32 LE header length, a JSON header
//! `{"dtype":"f32","shape":[..],"byte_order":"LE"}` (optionally with a `meta`
//! object), the raw little-endian f32 payload, and a CRC32 (IEEE) of all
//! preceding bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"PLTN";
pub const TENSOR_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub dtype: String,
    pub shape: Vec<usize>,
    pub byte_order: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>> {
    encode_tensor_with_meta(t, None)
}

pub fn encode_tensor_with_meta(t: &Tensor, meta: Option<serde_json::Value>) -> Result<Vec<u8>> {
    let header = TensorHeader {
        dtype: "f32".into(),
        shape: t.shape().to_vec(),
        byte_order: "LE".into(),
        meta,
    };
    let json = serde_json::to_vec(&header)?;
    let mut w = Writer::new(TENSOR_MAGIC, TENSOR_VERSION);
    w.u32(json.len() as u32);
    w.bytes(&json);
    w.f32s(t.data());
    Ok(w.finish())
}

pub fn decode_tensor(path: &Path, bytes: &[u8]) -> Result<(TensorHeader, Tensor)> {
    let mut r = Reader::open(path, bytes, TENSOR_MAGIC, TENSOR_VERSION)?;
    let len = r.u32()? as usize;
    let header: TensorHeader = serde_json::from_slice(r.bytes(len)?)
        .map_err(|e| Error::format(path, format!("header: {e}")))?;
    if header.dtype != "f32" || header.byte_order != "LE" {
        return Err(Error::format(
            path,
            format!("unsupported dtype/byte order {}/{}", header.dtype, header.byte_order),
        ));
    }
    let numel = header.shape.iter().product();
    let data = r.f32s(numel)?;
    r.finish()?;
    let t = Tensor::new(header.shape.clone(), data)?;
    Ok((header, t))
}

pub fn save_tensor(t: &Tensor, path: &Path) -> Result<()> {
    write_file(path, &encode_tensor(t)?)
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    Ok(decode_tensor(path, &read_file(path)?)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_preserves_bits(
            dims in proptest::collection::vec(1usize..5, 1..4),
            seed in any::<u32>(),
        ) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n)
                .map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32) & 0x7f7f_ffff))
                .collect();
            let t = Tensor::new(dims, data).unwrap();
            let bytes = encode_tensor(&t).unwrap();
            let (_, back) = decode_tensor(Path::new("p"), &bytes).unwrap();
            prop_assert_eq!(
                back.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
            prop_assert_eq!(back.shape(), t.shape());
        }
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let mut bytes = encode_tensor(&Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        let n = bytes.len();
        bytes[n - 6] ^= 1;
        assert!(matches!(
            decode_tensor(Path::new("c"), &bytes),
            Err(Error::Checksum { .. })
        ));
    }
}
