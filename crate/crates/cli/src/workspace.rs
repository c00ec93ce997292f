//! A run directory: manifest, dataset, evaluation images and the trained
//! model population.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::{info, warn};
use rayon::prelude::*;

use perturblab_core::attack::Algorithm;
use perturblab_core::codec::write_file;
use perturblab_core::data::{
    file_crc, generate_shapes, load_idx, Dataset, DatasetEntry, ExperimentManifest, FileEntry,
    ManifestWriter, ModelEntry, ShapesConfig, Split,
};
use perturblab_core::ensemble::{Population, Setting};
use perturblab_core::model::{load_model, save_model, train_model, Model, Role, TrainConfig};
use perturblab_core::seed::derive_seed;
use perturblab_core::Tensor;

use crate::config::{DatasetConfig, RunConfig};
use crate::error::{CliError, Result};

pub const SUBDIRS: [&str; 4] = ["models", "perturbations", "tables", "renders"];

pub struct Workspace {
    pub config: RunConfig,
    pub run_id: String,
    pub dir: PathBuf,
    pub manifest: ManifestWriter,
}

impl Workspace {
    pub fn open(config: &RunConfig, run_id: Option<&str>) -> Result<Self> {
        let run_id = config.run_id(run_id);
        if run_id.is_empty() || run_id.contains(['/', '\\']) || run_id == ".." {
            return Err(CliError::config(format!("invalid run id `{run_id}`")));
        }
        let dir = config.runs_root().join(&run_id);
        for sub in SUBDIRS {
            let path = dir.join(sub);
            std::fs::create_dir_all(&path)
                .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        }
        let mut manifest = if dir.join(perturblab_core::data::MANIFEST_FILE).exists() {
            ExperimentManifest::load(&dir)?
        } else {
            ExperimentManifest::default()
        };
        manifest.tool_version = env!("CARGO_PKG_VERSION").to_string();
        let resolved = config.resolved();
        if !manifest.config.is_null() && manifest.config != resolved {
            warn!("configuration differs from the one recorded in {}; updating", dir.display());
        }
        manifest.config = resolved;
        manifest.save(&dir)?;
        Ok(Self {
            config: config.clone(),
            run_id,
            manifest: ManifestWriter::new(&dir, manifest),
            dir,
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    /// Writes a derived output (table, plot) and registers its checksum.
    pub fn write_output(&self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(rel);
        write_file(&path, bytes)?;
        self.register_output(rel)
    }

    pub fn register_output(&self, rel: &str) -> Result<()> {
        let crc32 = file_crc(&self.path(rel))?;
        self.manifest.update(|m| {
            m.upsert_output(FileEntry {
                file: rel.to_string(),
                crc32,
            })
        })?;
        Ok(())
    }
}

pub fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn algorithm_slug(a: Algorithm) -> &'static str {
    match a {
        Algorithm::Bim => "bim",
        Algorithm::Cw => "cw",
        Algorithm::DeepFool => "deepfool",
        Algorithm::Square => "square",
        Algorithm::OnePixel => "onepixel",
    }
}

pub fn setting_slug(s: Setting) -> &'static str {
    match s {
        Setting::Sm => "sm",
        Setting::Mm => "mm",
        Setting::MmG => "mmg",
    }
}

/// Column name used in tables, e.g. `MM+G/BIM`.
pub fn column_name(s: Setting, a: Algorithm) -> String {
    format!("{}/{}", s.label(), a.label())
}

/// The dataset plus the test images that are attacked and evaluated.
pub struct Data {
    pub dataset: Dataset,
    pub fingerprint: u32,
    pub eval_ids: Vec<String>,
    pub eval_images: Vec<Tensor>,
    pub eval_labels: Vec<usize>,
    pub eval_masks: Option<Vec<Tensor>>,
}

impl Data {
    pub fn load(config: &RunConfig) -> Result<Self> {
        let dataset = match &config.dataset {
            DatasetConfig::Shapes {
                num_classes,
                train_per_class,
                test_per_class,
                image_size,
                channels,
                ..
            } => generate_shapes(&ShapesConfig {
                seed: config.dataset_seed(),
                num_classes: *num_classes,
                train_per_class: *train_per_class,
                test_per_class: *test_per_class,
                image_size: *image_size,
                channels: *channels,
            })
            .map_err(|e| CliError::config(e.to_string()))?,
            DatasetConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                train_limit,
                test_limit,
            } => idx_dataset(
                (train_images, train_labels, *train_limit),
                (test_images, test_labels, *test_limit),
            )?,
        };
        if let Some(subset) = &config.analysis.class_subset {
            if subset.iter().any(|&c| c >= dataset.num_classes) {
                return Err(CliError::config("analysis.class_subset names an unknown class"));
            }
        }
        let per_class = config.analysis.eval_per_class;
        let mut indices = Vec::new();
        for class in 0..dataset.num_classes {
            indices.extend(
                dataset
                    .test
                    .labels
                    .iter()
                    .enumerate()
                    .filter(|(_, &l)| l == class)
                    .map(|(i, _)| i)
                    .take(per_class),
            );
        }
        let eval = dataset.test.select(&indices);
        Ok(Self {
            fingerprint: dataset.fingerprint(),
            eval_ids: indices.iter().map(|i| format!("test-{i:05}")).collect(),
            eval_images: eval.images,
            eval_labels: eval.labels,
            eval_masks: eval.masks,
            dataset,
        })
    }

    pub fn dataset_id(&self) -> String {
        format!("{}-{:08x}", self.dataset.name, self.fingerprint)
    }

    pub fn entry(&self) -> DatasetEntry {
        DatasetEntry {
            name: self.dataset.name.clone(),
            fingerprint: format!("{:08x}", self.fingerprint),
            train_count: self.dataset.train.len(),
            test_count: self.dataset.test.len(),
        }
    }

    pub fn masks(&self) -> Result<&[Tensor]> {
        self.eval_masks
            .as_deref()
            .ok_or_else(|| CliError::data(format!("dataset {} carries no object masks", self.dataset.name)))
    }
}

fn idx_dataset(
    train: (&PathBuf, &PathBuf, Option<usize>),
    test: (&PathBuf, &PathBuf, Option<usize>),
) -> Result<Dataset> {
    let load = |(images, labels, limit): (&PathBuf, &PathBuf, Option<usize>)| -> Result<(Split, usize, usize)> {
        let d = load_idx(images, labels)?;
        let (rows, cols) = (d.rows, d.cols);
        let mut split = d.into_split();
        if let Some(n) = limit {
            split.images.truncate(n);
            split.labels.truncate(n);
        }
        Ok((split, rows, cols))
    };
    let (train, rows, cols) = load(train)?;
    let (test, test_rows, test_cols) = load(test)?;
    if (rows, cols) != (test_rows, test_cols) {
        return Err(CliError::data("train and test IDX images differ in size"));
    }
    train.validate()?;
    test.validate()?;
    let num_classes = train.labels.iter().chain(&test.labels).max().map_or(0, |m| m + 1).max(2);
    Ok(Dataset {
        name: format!("idx-{rows}x{cols}"),
        num_classes,
        class_names: (0..num_classes).map(|c| c.to_string()).collect(),
        image_shape: vec![1, rows, cols],
        train,
        test,
    })
}

/// One member of the configured population.
#[derive(Clone, Debug)]
pub struct ModelSlot {
    pub id: String,
    pub role: Role,
    pub seed: u64,
    pub architecture: usize,
    pub file: String,
}

pub fn population_slots(config: &RunConfig) -> Vec<ModelSlot> {
    let p = &config.population;
    let archs = p.architectures.len();
    let slot = |role: Role, i: usize| {
        let (prefix, purpose) = match role {
            Role::Source => ("source", "source-model"),
            Role::Testing => ("testing", "testing-model"),
        };
        let id = format!("{prefix}-{i:03}");
        ModelSlot {
            file: format!("models/{id}.plck"),
            seed: derive_seed(config.master_seed, purpose, i as u64),
            architecture: i % archs,
            role,
            id,
        }
    };
    (0..p.sources)
        .map(|i| slot(Role::Source, i))
        .chain((0..p.testing).map(|i| slot(Role::Testing, i)))
        .collect()
}

fn train_config(config: &RunConfig, data: &Data, seed: u64) -> TrainConfig {
    let t = &config.population.training;
    TrainConfig {
        dataset_id: data.dataset_id(),
        epochs: t.epochs,
        batch_size: t.batch_size,
        learning_rate: t.learning_rate,
        momentum: t.momentum,
        seed,
    }
}

/// Loads and checks a checkpoint against its slot. `Err(None)` means there
/// is no file; `Err(Some(reason))` means it cannot be used.
fn check_checkpoint(
    ws: &Workspace,
    data: &Data,
    slot: &ModelSlot,
    arch_name: &str,
) -> Result<Model, Option<String>> {
    let path = ws.path(&slot.file);
    if !path.exists() {
        return Err(None);
    }
    let model = load_model(&path).map_err(|e| Some(e.to_string()))?;
    let expected = train_config(&ws.config, data, slot.seed);
    if model.id != slot.id
        || model.seed != slot.seed
        || model.role != slot.role
        || model.architecture().name != arch_name
        || model.metadata.config != expected
    {
        return Err(Some(format!(
            "{}: checkpoint does not match the configuration",
            path.display()
        )));
    }
    Ok(model)
}

fn model_entry(ws: &Workspace, slot: &ModelSlot, model: &Model) -> Result<ModelEntry> {
    Ok(ModelEntry {
        id: model.id.clone(),
        role: model.role,
        seed: model.seed,
        architecture: model.architecture().name.clone(),
        file: slot.file.clone(),
        crc32: file_crc(&ws.path(&slot.file))?,
        test_accuracy: model.metadata.test_accuracy,
    })
}

fn into_population(ws: &Workspace, models: Vec<Model>) -> Population {
    let (sources, testing): (Vec<Model>, Vec<Model>) =
        models.into_iter().partition(|m| m.role == Role::Source);
    Population {
        sources,
        testing,
        white_box: ws.config.population.white_box,
    }
}

/// Trains every model whose checkpoint is missing, corrupt or stale and
/// reuses the rest.
pub fn train_population(ws: &Workspace, data: &Data) -> Result<Population> {
    let shape = &data.dataset.image_shape;
    let archs = ws.config.architectures(shape[0], shape[1], data.dataset.num_classes)?;
    if shape[1] != shape[2] {
        return Err(CliError::config("the architecture catalog expects square images"));
    }
    let slots = population_slots(&ws.config);
    let models = slots
        .par_iter()
        .map(|slot| -> Result<(Model, bool)> {
            let arch = &archs[slot.architecture];
            match check_checkpoint(ws, data, slot, &arch.name) {
                Ok(model) => {
                    info!("{}: verified checkpoint, skipping", slot.id);
                    return Ok((model, false));
                }
                Err(None) => {}
                Err(Some(reason)) => warn!("{}: {reason}; retraining", slot.id),
            }
            let cfg = train_config(&ws.config, data, slot.seed);
            let model = train_model(
                slot.id.clone(),
                slot.role,
                arch.clone(),
                &cfg,
                &data.dataset.train,
                &data.dataset.test,
            )?;
            save_model(&model, &ws.path(&slot.file))?;
            info!(
                "{}: trained {} (test accuracy {:.3})",
                slot.id, arch.name, model.metadata.test_accuracy
            );
            Ok((model, true))
        })
        .collect::<Result<Vec<_>>>()?;
    let entries = slots
        .iter()
        .zip(&models)
        .map(|(slot, (model, _))| model_entry(ws, slot, model))
        .collect::<Result<Vec<_>>>()?;
    let dataset = data.entry();
    ws.manifest.update(|m| {
        m.dataset = Some(dataset);
        m.models.retain(|e| entries.iter().any(|n| n.id == e.id));
        for e in entries {
            m.upsert_model(e);
        }
    })?;
    write_population_table(ws, &models.iter().map(|(m, _)| m).collect::<Vec<_>>())?;
    Ok(into_population(ws, models.into_iter().map(|(m, _)| m).collect()))
}

/// Loads the trained population; every checkpoint must be present, match
/// the configuration and its manifest checksum.
pub fn load_population(ws: &Workspace, data: &Data) -> Result<Population> {
    let shape = &data.dataset.image_shape;
    let archs = ws.config.architectures(shape[0], shape[1], data.dataset.num_classes)?;
    let manifest = ws.manifest.snapshot();
    let models = population_slots(&ws.config)
        .iter()
        .map(|slot| {
            let entry = manifest.models.iter().find(|e| e.id == slot.id).ok_or_else(|| {
                CliError::data(format!("model {} is not trained; run `perturblab train` first", slot.id))
            })?;
            let model = check_checkpoint(ws, data, slot, &archs[slot.architecture].name)
                .map_err(|reason| {
                    let reason = reason.unwrap_or_else(|| "checkpoint missing".into());
                    CliError::data(format!("model {}: {reason}; run `perturblab train`", slot.id))
                })?;
            let crc = file_crc(&ws.path(&slot.file))?;
            if crc != entry.crc32 {
                return Err(CliError::data(format!(
                    "model {}: checksum {crc} differs from manifest {}",
                    slot.id, entry.crc32
                )));
            }
            Ok(model)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(into_population(ws, models))
}

fn write_population_table(ws: &Workspace, models: &[&Model]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::data(e.to_string());
    w.write_record(["id", "role", "architecture", "seed", "epochs", "train_accuracy", "test_accuracy"])
        .map_err(io)?;
    for m in models {
        let role = match m.role {
            Role::Source => "source",
            Role::Testing => "testing",
        };
        w.write_record([
            m.id.clone(),
            role.to_string(),
            m.architecture().name.clone(),
            m.seed.to_string(),
            m.metadata.epochs_run.to_string(),
            format!("{:.6}", m.metadata.train_accuracy),
            format!("{:.6}", m.metadata.test_accuracy),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::data(e.to_string()))?;
    ws.write_output("tables/population.csv", &bytes)
}

pub fn relative(run_dir: &Path, path: &Path) -> String {
    path.strip_prefix(run_dir)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}
