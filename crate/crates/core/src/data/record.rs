//! Perturbation records on disk: a `PLTN` tensor file whose header `meta`
//! object carries the full provenance.

use std::path::Path;

use crate::codec::{read_file, write_file};
use crate::data::tensor_file::{decode_tensor, encode_tensor_with_meta};
use crate::ensemble::PerturbationRecord;
use crate::error::{Error, Result};

pub const RECORD_EXTENSION: &str = "pltn";

pub fn encode_record(record: &PerturbationRecord) -> Result<Vec<u8>> {
    record.validate()?;
    let meta = serde_json::to_value(record)?;
    encode_tensor_with_meta(&record.perturbation, Some(meta))
}

pub fn save_record(record: &PerturbationRecord, path: &Path) -> Result<()> {
    write_file(path, &encode_record(record)?)
}

pub fn load_record(path: &Path) -> Result<PerturbationRecord> {
    let bytes = read_file(path)?;
    let (header, tensor) = decode_tensor(path, &bytes)?;
    let meta = header
        .meta
        .ok_or_else(|| Error::format(path, "tensor file carries no record provenance"))?;
    let mut record: PerturbationRecord = serde_json::from_value(meta)
        .map_err(|e| Error::format(path, format!("record provenance: {e}")))?;
    record.perturbation = tensor;
    record.validate()?;
    Ok(record)
}
