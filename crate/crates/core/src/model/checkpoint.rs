//! `PLCK` checkpoints: magic, u16 version, u32-length JSON metadata, u32
//! tensor count, then per tensor a u16-length name, u8 rank, u32 dims and a
//! little-endian f32 payload; a CRC32 of everything before it closes the file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::model::{ArchitectureDescriptor, Model, Network, Role, TrainMetadata};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PLCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    id: String,
    role: Role,
    seed: u64,
    architecture: ArchitectureDescriptor,
    metadata: TrainMetadata,
}

pub fn encode_model(model: &Model) -> Result<Vec<u8>> {
    let header = Header {
        id: model.id.clone(),
        role: model.role,
        seed: model.seed,
        architecture: model.architecture().clone(),
        metadata: model.metadata.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut w = Writer::new(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
    w.u32(json.len() as u32);
    w.bytes(&json);
    let params = model.network.params();
    w.u32(params.len() as u32);
    for (name, t) in model.network.param_names().iter().zip(params) {
        w.u16(name.len() as u16);
        w.bytes(name.as_bytes());
        w.u8(t.shape().len() as u8);
        for &d in t.shape() {
            w.u32(d as u32);
        }
        w.f32s(t.data());
    }
    Ok(w.finish())
}

pub fn decode_model(path: &Path, bytes: &[u8]) -> Result<Model> {
    let mut r = Reader::open(path, bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let len = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.bytes(len)?)
        .map_err(|e| Error::format(path, format!("metadata: {e}")))?;
    let count = r.u32()? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        r.bytes(name_len)?;
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel = shape.iter().product();
        params.push(Tensor::new(shape, r.f32s(numel)?)?);
    }
    r.finish()?;
    let network = Network::from_params(header.architecture, params)?;
    Ok(Model {
        id: header.id,
        role: header.role,
        seed: header.seed,
        network,
        metadata: header.metadata,
    })
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    write_file(path, &encode_model(model)?)
}

pub fn load_model(path: &Path) -> Result<Model> {
    decode_model(path, &read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{catalog, TrainConfig};

    fn sample() -> Model {
        let arch = catalog(1, 8, 3).remove(0);
        Model {
            id: "m0".into(),
            role: Role::Testing,
            seed: 11,
            network: Network::init(arch, 11).unwrap(),
            metadata: TrainMetadata {
                config: TrainConfig {
                    dataset_id: "toy".into(),
                    epochs: 1,
                    batch_size: 4,
                    learning_rate: 0.1,
                    momentum: 0.9,
                    seed: 11,
                },
                epochs_run: 1,
                final_train_loss: 0.5,
                train_accuracy: 0.75,
                test_accuracy: 0.5,
            },
        }
    }

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.plck");
        let m = sample();
        save_model(&m, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), m);
    }

    #[test]
    fn truncation_is_a_checksum_error() {
        let bytes = encode_model(&sample()).unwrap();
        let cut = &bytes[..bytes.len() - 9];
        assert!(matches!(
            decode_model(Path::new("cut.plck"), cut),
            Err(Error::Checksum { .. })
        ));
    }

    #[test]
    fn wrong_magic_names_the_path() {
        let mut bytes = encode_model(&sample()).unwrap();
        bytes[0] = b'X';
        let err = decode_model(Path::new("runs/x/models/bad.plck"), &bytes).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        assert!(err.to_string().contains("runs/x/models/bad.plck"));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut bytes = encode_model(&sample()).unwrap();
        bytes[4] = 9;
        let n = bytes.len();
        let crc = crc32fast::hash(&bytes[..n - 4]);
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            decode_model(Path::new("v.plck"), &bytes),
            Err(Error::Version { found: 9, .. })
        ));
    }
}
