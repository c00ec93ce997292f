//! Experiment manifests: everything needed to regenerate and verify a run.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::attack::Algorithm;
use crate::codec::{read_file, write_file};
use crate::data::record::{load_record, RECORD_EXTENSION};
use crate::ensemble::Setting;
use crate::error::{Error, Result};
use crate::model::Role;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub name: String,
    pub fingerprint: String,
    pub train_count: usize,
    pub test_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub id: String,
    pub role: Role,
    pub seed: u64,
    pub architecture: String,
    /// Path relative to the run directory.
    pub file: String,
    pub crc32: String,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub image_id: String,
    pub algorithm: Algorithm,
    pub setting: Option<Setting>,
    pub file: String,
    pub crc32: String,
    #[serde(default)]
    pub generated_at: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub file: String,
    pub crc32: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub tool_version: String,
    pub config: serde_json::Value,
    pub dataset: Option<DatasetEntry>,
    pub models: Vec<ModelEntry>,
    pub records: Vec<RecordEntry>,
    #[serde(default)]
    pub outputs: Vec<FileEntry>,
}

pub fn file_crc(path: &Path) -> Result<String> {
    Ok(format!("{:08x}", crc32fast::hash(&read_file(path)?)))
}

impl ExperimentManifest {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        let bytes = read_file(&path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::format(&path, e.to_string()))
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        write_file(&run_dir.join(MANIFEST_FILE), &bytes)
    }

    /// Every referenced file must exist and match its recorded checksum.
    pub fn verify(&self, run_dir: &Path) -> Result<()> {
        let files = self
            .models
            .iter()
            .map(|m| (&m.file, &m.crc32))
            .chain(self.records.iter().map(|r| (&r.file, &r.crc32)))
            .chain(self.outputs.iter().map(|o| (&o.file, &o.crc32)));
        for (file, crc) in files {
            let path = run_dir.join(file);
            let actual = file_crc(&path)?;
            if &actual != crc {
                return Err(Error::Checksum {
                    path,
                    stored: u32::from_str_radix(crc, 16).unwrap_or(0),
                    computed: u32::from_str_radix(&actual, 16).unwrap_or(0),
                });
            }
        }
        Ok(())
    }

    pub fn upsert_model(&mut self, entry: ModelEntry) {
        match self.models.iter_mut().find(|m| m.id == entry.id) {
            Some(existing) => *existing = entry,
            None => self.models.push(entry),
        }
    }

    pub fn upsert_record(&mut self, entry: RecordEntry) {
        match self.records.iter_mut().find(|r| r.file == entry.file) {
            Some(existing) => *existing = entry,
            None => self.records.push(entry),
        }
    }

    pub fn upsert_output(&mut self, entry: FileEntry) {
        match self.outputs.iter_mut().find(|o| o.file == entry.file) {
            Some(existing) => *existing = entry,
            None => self.outputs.push(entry),
        }
    }
}

/// Serialises manifest updates from concurrent producers; every update is
/// flushed to disk before the lock is released.
pub struct ManifestWriter {
    run_dir: PathBuf,
    inner: Mutex<ExperimentManifest>,
}

impl ManifestWriter {
    pub fn new(run_dir: &Path, manifest: ExperimentManifest) -> Self {
        Self {
            run_dir: run_dir.to_path_buf(),
            inner: Mutex::new(manifest),
        }
    }

    pub fn update(&self, f: impl FnOnce(&mut ExperimentManifest)) -> Result<()> {
        let mut guard = self.inner.lock().expect("manifest lock poisoned");
        f(&mut guard);
        guard.save(&self.run_dir)
    }

    pub fn snapshot(&self) -> ExperimentManifest {
        self.inner.lock().expect("manifest lock poisoned").clone()
    }
}

/// Scans `<run_dir>/perturbations` and rebuilds the record index from the
/// files themselves, sorted by path.
pub fn rebuild_index(run_dir: &Path) -> Result<Vec<RecordEntry>> {
    let dir = run_dir.join("perturbations");
    let mut paths = Vec::new();
    collect(&dir, &mut paths)?;
    paths.sort();
    paths
        .into_iter()
        .map(|path| {
            let record = load_record(&path)?;
            let file = path
                .strip_prefix(run_dir)
                .unwrap_or(&path)
                .to_string_lossy()
                .replace('\\', "/");
            Ok(RecordEntry {
                image_id: record.image_id,
                algorithm: record.attack.algorithm(),
                setting: record.setting,
                crc32: file_crc(&path)?,
                file,
                generated_at: record.generated_at,
            })
        })
        .collect()
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = match std::fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(Error::io(dir, e)),
    };
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect(&path, out)?;
        } else if path.extension().is_some_and(|e| e == RECORD_EXTENSION) {
            out.push(path);
        }
    }
    Ok(())
}
