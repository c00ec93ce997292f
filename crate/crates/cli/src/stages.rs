//! The subcommands. Each one opens the run directory, does its part and
//! records what it wrote in the manifest.

use log::info;
use rayon::prelude::*;

use perturblab_core::analysis::{
    attack_strength_eval, cosine_similarity_matrix, epsilon_sweep, recognizability_eval,
    EvalSet, RecordColumn, SignScaleSpec, TestingModel,
};
use perturblab_core::data::{file_crc, load_record, save_record, write_pnm, RecordEntry};
use perturblab_core::ensemble::{
    generate_averaged, image_specs, setting_models, PerturbationRecord, Population, Setting,
};
use perturblab_core::render::{
    heatmap, line_plot, render_targeted, render_untargeted, write_render, DatasetStats,
    RenderMetadata,
};
use perturblab_core::seed::derive_seed;
use perturblab_core::Tensor;

use crate::config::{AttackConfig, RenderMode, RunConfig};
use crate::error::{CliError, Result};
use crate::workspace::{
    algorithm_slug, column_name, load_population, now, setting_slug, train_population, Data,
    Workspace,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Train,
    Attack,
    Evaluate,
    Contour,
    Sweep,
    Similarity,
    Render,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Train,
        Command::Attack,
        Command::Evaluate,
        Command::Contour,
        Command::Sweep,
        Command::Similarity,
        Command::Render,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Attack => "attack",
            Command::Evaluate => "evaluate",
            Command::Contour => "contour",
            Command::Sweep => "sweep",
            Command::Similarity => "similarity",
            Command::Render => "render",
        }
    }
}

/// Runs one subcommand and returns the run directory.
pub fn execute(command: Command, config: &RunConfig, run_id: Option<&str>) -> Result<std::path::PathBuf> {
    config.validate()?;
    let ws = Workspace::open(config, run_id)?;
    let data = Data::load(config)?;
    info!(
        "{}: run {} ({}, {} evaluation images)",
        command.name(),
        ws.run_id,
        data.dataset.name,
        data.eval_ids.len()
    );
    match command {
        Command::Train => {
            train_population(&ws, &data)?;
        }
        Command::Attack => {
            let population = load_population(&ws, &data)?;
            attack(&ws, &data, &population)?;
        }
        Command::Evaluate => {
            let population = load_population(&ws, &data)?;
            evaluate(&ws, &data, &population)?;
        }
        Command::Contour => {
            let population = load_population(&ws, &data)?;
            contour(&ws, &data, &population)?;
        }
        Command::Sweep => {
            let population = load_population(&ws, &data)?;
            sweep(&ws, &data, &population)?;
        }
        Command::Similarity => similarity(&ws, &data)?,
        Command::Render => render(&ws, &data)?,
    }
    Ok(ws.dir)
}

fn record_file(attack: &AttackConfig, setting: Setting, image_id: &str) -> String {
    format!(
        "perturbations/{}/{}/{image_id}.pltn",
        algorithm_slug(attack.algorithm),
        setting_slug(setting)
    )
}

/// The record a configuration expects for one image, minus the tensor.
fn expected_provenance(
    config: &RunConfig,
    attack: &AttackConfig,
    setting: Setting,
    index: usize,
) -> Result<(perturblab_core::ensemble::EnsembleSpec, perturblab_core::attack::AttackSpec)> {
    let spec = config.attack_spec(attack)?;
    let ensemble = config.ensemble_spec(setting, attack);
    Ok(image_specs(&ensemble, &spec, index))
}

fn matches(record: &PerturbationRecord, data: &Data, index: usize, setting: Setting, expected: &(perturblab_core::ensemble::EnsembleSpec, perturblab_core::attack::AttackSpec)) -> bool {
    record.image_id == data.eval_ids[index]
        && record.label == data.eval_labels[index]
        && record.setting == Some(setting)
        && record.ensemble == expected.0
        && record.attack == expected.1
}

/// Generates every missing or stale record for each configured attack and
/// setting.
pub fn attack(ws: &Workspace, data: &Data, population: &Population) -> Result<usize> {
    let config = &ws.config;
    let mut written = 0;
    for attack in &config.attacks {
        for &setting in &config.settings {
            let ensemble = config.ensemble_spec(setting, attack);
            let models = setting_models(setting, &ensemble, population)?;
            let entries = (0..data.eval_ids.len())
                .into_par_iter()
                .map(|idx| -> Result<(RecordEntry, bool)> {
                    let id = &data.eval_ids[idx];
                    let file = record_file(attack, setting, id);
                    let path = ws.path(&file);
                    let expected = expected_provenance(config, attack, setting, idx)?;
                    if let Ok(existing) = load_record(&path) {
                        if matches(&existing, data, idx, setting, &expected) {
                            let previous = ws
                                .manifest
                                .snapshot()
                                .records
                                .into_iter()
                                .find(|r| r.file == file)
                                .and_then(|r| r.generated_at);
                            return Ok((
                                RecordEntry {
                                    image_id: id.clone(),
                                    algorithm: attack.algorithm,
                                    setting: Some(setting),
                                    crc32: file_crc(&path)?,
                                    file,
                                    generated_at: previous,
                                },
                                false,
                            ));
                        }
                    }
                    let (spec, attack_spec) = expected;
                    let mut record = generate_averaged(
                        &data.eval_images[idx],
                        data.eval_labels[idx],
                        id,
                        &models,
                        &spec,
                        &attack_spec,
                    )?;
                    record.setting = Some(setting);
                    save_record(&record, &path)?;
                    Ok((
                        RecordEntry {
                            image_id: id.clone(),
                            algorithm: attack.algorithm,
                            setting: Some(setting),
                            crc32: file_crc(&path)?,
                            file,
                            generated_at: Some(now()),
                        },
                        true,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let fresh = entries.iter().filter(|(_, f)| *f).count();
            written += fresh;
            info!(
                "{}: {} records ({} generated, {} components each)",
                column_name(setting, attack.algorithm),
                entries.len(),
                fresh,
                ensemble.components()
            );
            ws.manifest.update(|m| {
                for (entry, _) in entries {
                    m.upsert_record(entry);
                }
            })?;
        }
    }
    Ok(written)
}

/// Loads the records of one attack and setting, in evaluation order. Any
/// missing, corrupt or stale record is a hard error.
pub fn load_records(
    ws: &Workspace,
    data: &Data,
    attack: &AttackConfig,
    setting: Setting,
) -> Result<Vec<PerturbationRecord>> {
    let manifest = ws.manifest.snapshot();
    (0..data.eval_ids.len())
        .map(|idx| {
            let id = &data.eval_ids[idx];
            let file = record_file(attack, setting, id);
            let what = format!("{} record for image {id}", column_name(setting, attack.algorithm));
            let entry = manifest.records.iter().find(|r| r.file == file).ok_or_else(|| {
                CliError::data(format!("missing {what}; run `perturblab attack` first"))
            })?;
            let path = ws.path(&file);
            if !path.exists() {
                return Err(CliError::data(format!("missing {what}: {} does not exist", path.display())));
            }
            let crc = file_crc(&path)?;
            if crc != entry.crc32 {
                return Err(CliError::data(format!(
                    "{what}: checksum {crc} differs from manifest {}",
                    entry.crc32
                )));
            }
            let record = load_record(&path)?;
            let expected = expected_provenance(&ws.config, attack, setting, idx)?;
            if !matches(&record, data, idx, setting, &expected) {
                return Err(CliError::data(format!(
                    "{what} was generated with a different configuration; rerun `perturblab attack`"
                )));
            }
            Ok(record)
        })
        .collect()
}

struct Columns {
    names: Vec<String>,
    records: Vec<Vec<PerturbationRecord>>,
    keys: Vec<(Setting, usize)>,
}

fn all_columns(ws: &Workspace, data: &Data) -> Result<Columns> {
    let mut out = Columns {
        names: Vec::new(),
        records: Vec::new(),
        keys: Vec::new(),
    };
    for (a, attack) in ws.config.attacks.iter().enumerate() {
        for &setting in &ws.config.settings {
            out.names.push(column_name(setting, attack.algorithm));
            out.records.push(load_records(ws, data, attack, setting)?);
            out.keys.push((setting, a));
        }
    }
    Ok(out)
}

fn eval_set(data: &Data) -> Result<EvalSet<'_>> {
    Ok(EvalSet::new(&data.eval_ids, &data.eval_images, &data.eval_labels)?)
}

fn testing_models(population: &Population) -> Vec<TestingModel<'_>> {
    population
        .testing
        .iter()
        .map(|m| TestingModel {
            name: m.id.clone(),
            model: m,
        })
        .collect()
}

/// Testing models other than the white-box one.
fn held_out(population: &Population) -> Vec<TestingModel<'_>> {
    testing_models(population)
        .into_iter()
        .enumerate()
        .filter(|(i, _)| *i != population.white_box)
        .map(|(_, t)| t)
        .collect()
}

fn held_out_or_all(population: &Population) -> Vec<TestingModel<'_>> {
    let models = held_out(population);
    if models.is_empty() {
        testing_models(population)
    } else {
        models
    }
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::data(e.to_string());
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(row).map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::data(e.to_string()))
}

fn dataset_stats(data: &Data) -> Result<DatasetStats> {
    Ok(DatasetStats::from_images(&data.dataset.train.images)?)
}

/// Attack-strength table (clean, noise and every record column, one row per
/// testing model plus the average) and the recognizability table.
pub fn evaluate(ws: &Workspace, data: &Data, population: &Population) -> Result<()> {
    let columns = all_columns(ws, data)?;
    let record_columns: Vec<RecordColumn> = columns
        .names
        .iter()
        .zip(&columns.records)
        .map(|(name, records)| RecordColumn {
            name: name.clone(),
            records,
        })
        .collect();
    let a = &ws.config.analysis;
    let table = attack_strength_eval(
        eval_set(data)?,
        &record_columns,
        &testing_models(population),
        SignScaleSpec::new(a.epsilon)?,
        derive_seed(ws.config.master_seed, "evaluation-noise", 0),
    )?;
    ws.write_output("tables/attack_strength.csv", &table.to_csv()?)?;

    let stats = dataset_stats(data)?;
    let classifier = &population.testing[a.recognizability_model];
    let subset: Vec<usize> = a
        .class_subset
        .clone()
        .unwrap_or_else(|| (0..data.dataset.num_classes).collect());
    let mut rows = Vec::new();
    for ((name, records), (setting, attack)) in columns.names.iter().zip(&columns.records).zip(&columns.keys) {
        let r = recognizability_eval(records, classifier, &stats, &subset, a.recognizability_scale)?;
        rows.push(vec![
            name.clone(),
            ws.config.attacks[*attack].algorithm.label().to_string(),
            setting.label().to_string(),
            classifier.id.clone(),
            format!("{:.6}", r.accuracy),
            format!("{:.6}", r.chance),
            r.count.to_string(),
        ]);
    }
    ws.write_output(
        "tables/recognizability.csv",
        &csv_bytes(
            &["column", "algorithm", "setting", "classifier", "accuracy", "chance", "count"],
            &rows,
        )?,
    )?;
    info!("evaluate: wrote attack_strength.csv and recognizability.csv");
    Ok(())
}

fn mean_abs(v: &Tensor, mask: &Tensor, inside: bool) -> (f64, usize) {
    let plane = mask.len();
    let mut sum = 0.0;
    let mut count = 0;
    for (i, &x) in v.data().iter().enumerate() {
        if (mask.data()[i % plane] > 0.5) == inside {
            sum += x.abs() as f64;
            count += 1;
        }
    }
    (sum, count)
}

/// Contour-only versus background-only attack strength at the evaluation
/// budget, and where each record puts its mass.
pub fn contour(ws: &Workspace, data: &Data, population: &Population) -> Result<()> {
    let masks = data.masks()?;
    let columns = all_columns(ws, data)?;
    let testing = held_out_or_all(population);
    let eps = ws.config.analysis.epsilon;
    let areal = masks.iter().map(perturblab_core::data::areal_ratio).sum::<f64>() / masks.len() as f64;
    let mut rows = Vec::new();
    for (records, (setting, attack)) in columns.records.iter().zip(&columns.keys) {
        let sweep = epsilon_sweep(eval_set(data)?, records, masks, &testing, &[eps])?;
        let (mut ci, mut ni, mut co, mut no) = (0.0, 0, 0.0, 0);
        for (r, m) in records.iter().zip(masks) {
            let (s, n) = mean_abs(&r.perturbation, m, true);
            ci += s;
            ni += n;
            let (s, n) = mean_abs(&r.perturbation, m, false);
            co += s;
            no += n;
        }
        rows.push(vec![
            ws.config.attacks[*attack].algorithm.label().to_string(),
            setting.label().to_string(),
            format!("{eps}"),
            format!("{:.6}", sweep.contour[0]),
            format!("{:.6}", sweep.background[0]),
            format!("{:.6}", ci / ni.max(1) as f64),
            format!("{:.6}", co / no.max(1) as f64),
            format!("{areal:.6}"),
        ]);
    }
    ws.write_output(
        "tables/contour.csv",
        &csv_bytes(
            &[
                "algorithm",
                "setting",
                "epsilon",
                "contour_accuracy",
                "background_accuracy",
                "contour_mean_abs",
                "background_mean_abs",
                "areal_ratio",
            ],
            &rows,
        )?,
    )?;
    info!("contour: wrote contour.csv");
    Ok(())
}

/// Accuracy under contour-only and background-only perturbations across the
/// configured budgets, for the sweep setting.
pub fn sweep(ws: &Workspace, data: &Data, population: &Population) -> Result<()> {
    let masks = data.masks()?;
    let testing = held_out_or_all(population);
    let a = &ws.config.analysis;
    if !ws.config.settings.contains(&a.sweep_setting) {
        return Err(CliError::config(format!(
            "analysis.sweep_setting {} is not among the configured settings",
            a.sweep_setting.label()
        )));
    }
    let mut rows = Vec::new();
    for attack in &ws.config.attacks {
        let records = load_records(ws, data, attack, a.sweep_setting)?;
        let table = epsilon_sweep(eval_set(data)?, &records, masks, &testing, &a.sweep_epsilons)?;
        for (part, values) in [("contour", &table.contour), ("background", &table.background)] {
            for (eps, acc) in table.epsilons.iter().zip(values) {
                rows.push(vec![
                    attack.algorithm.label().to_string(),
                    a.sweep_setting.label().to_string(),
                    part.to_string(),
                    format!("{eps}"),
                    format!("{acc:.6}"),
                ]);
            }
        }
        let xs: Vec<f64> = table.epsilons.iter().map(|&e| e as f64).collect();
        let plot = line_plot(&xs, &[table.contour.clone(), table.background.clone()], 240, 160)?;
        let rel = format!("renders/sweep_{}.ppm", algorithm_slug(attack.algorithm));
        write_pnm(&plot, &ws.path(&rel))?;
        ws.register_output(&rel)?;
    }
    ws.write_output(
        "tables/sweep.csv",
        &csv_bytes(&["algorithm", "setting", "part", "epsilon", "accuracy"], &rows)?,
    )?;
    info!("sweep: wrote sweep.csv");
    Ok(())
}

/// Places images of equal height side by side with a white gap.
fn side_by_side(images: &[Tensor], gap: usize) -> Result<Tensor> {
    let h = images[0].shape()[1];
    if images.iter().any(|i| i.shape()[0] != 3 || i.shape()[1] != h) {
        return Err(CliError::data("heat maps differ in size"));
    }
    let w: usize = images.iter().map(|i| i.shape()[2]).sum::<usize>() + gap * (images.len() - 1);
    let mut out = Tensor::full(&[3, h, w], 1.0);
    let mut x0 = 0;
    for img in images {
        let iw = img.shape()[2];
        for c in 0..3 {
            for y in 0..h {
                for x in 0..iw {
                    out.data_mut()[c * h * w + y * w + x0 + x] = img.data()[c * h * iw + y * iw + x];
                }
            }
        }
        x0 += iw + gap;
    }
    Ok(out)
}

/// Cross-algorithm cosine similarity of contour parts, one matrix per
/// setting, plus a side-by-side heat map.
pub fn similarity(ws: &Workspace, data: &Data) -> Result<()> {
    let masks = data.masks()?;
    if ws.config.attacks.len() < 2 {
        return Err(CliError::config("similarity needs at least two attacks"));
    }
    let mut summary = Vec::new();
    let mut maps = Vec::new();
    for &setting in &ws.config.settings {
        let records = ws
            .config
            .attacks
            .iter()
            .map(|a| load_records(ws, data, a, setting))
            .collect::<Result<Vec<_>>>()?;
        let columns: Vec<RecordColumn> = ws
            .config
            .attacks
            .iter()
            .zip(&records)
            .map(|(a, r)| RecordColumn {
                name: a.algorithm.label().to_string(),
                records: r,
            })
            .collect();
        let matrix = cosine_similarity_matrix(eval_set(data)?, &columns, masks)?;
        ws.write_output(
            &format!("tables/similarity_{}.csv", setting_slug(setting)),
            &matrix.to_csv()?,
        )?;
        let excluded: usize = matrix.excluded.iter().flatten().sum();
        summary.push(vec![
            setting.label().to_string(),
            format!("{:.6}", matrix.mean_off_diagonal()),
            excluded.to_string(),
        ]);
        maps.push(heatmap(&matrix.values, 24)?);
    }
    ws.write_output(
        "tables/similarity_summary.csv",
        &csv_bytes(&["setting", "mean_off_diagonal", "excluded_pairs"], &summary)?,
    )?;
    let rel = "renders/similarity.ppm";
    write_pnm(&side_by_side(&maps, 8)?, &ws.path(rel))?;
    ws.register_output(rel)?;
    info!("similarity: wrote {} matrices", summary.len());
    Ok(())
}

/// One image plus JSON sidecar per record.
pub fn render(ws: &Workspace, data: &Data) -> Result<()> {
    let stats = dataset_stats(data)?;
    let ext = if data.dataset.image_shape[0] == 1 { "pgm" } else { "ppm" };
    let mode = ws.config.render.mode;
    let mut count = 0;
    for attack in &ws.config.attacks {
        for &setting in &ws.config.settings {
            let records = load_records(ws, data, attack, setting)?;
            for (idx, record) in records.iter().enumerate() {
                let rel = format!(
                    "renders/{}/{}/{}.{ext}",
                    algorithm_slug(attack.algorithm),
                    setting_slug(setting),
                    record.image_id
                );
                let (image, meta) = match mode {
                    RenderMode::Untargeted => {
                        let mut meta = RenderMetadata::new("untargeted");
                        meta.stats = Some(stats.clone());
                        (render_untargeted(&record.perturbation, &stats)?, meta)
                    }
                    RenderMode::Targeted => {
                        if record.attack.target.is_none() {
                            return Err(CliError::data(format!(
                                "targeted rendering of {} needs a target class in the record provenance",
                                record.image_id
                            )));
                        }
                        let view = render_targeted(&data.eval_images[idx], &record.perturbation)?;
                        let mut meta = RenderMetadata::new("targeted");
                        meta.scale = Some(view.scale);
                        meta.unscaled = view.unscaled;
                        (view.image, meta)
                    }
                };
                write_render(&image, &ws.path(&rel), meta)?;
                ws.register_output(&rel)?;
                ws.register_output(&rel.replace(&format!(".{ext}"), ".json"))?;
                count += 1;
            }
        }
    }
    info!("render: wrote {count} images");
    Ok(())
}
