//! Quantitative evaluations of perturbation records: sign-scaled attack
//! strength, contour/background splits and epsilon sweeps, recognizability
//! of rendered perturbations, and cross-algorithm cosine similarity.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::codec::write_file;
use crate::ensemble::PerturbationRecord;
use crate::error::{Error, Result};
use crate::render::{render_untargeted, DatasetStats};
use crate::seed::{derive_seed, rng};
use crate::tensor::{argmax, dot, sign, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignScaleSpec {
    pub epsilon: f32,
}

impl SignScaleSpec {
    pub fn new(epsilon: f32) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be >= 0, got {epsilon}")));
        }
        Ok(Self { epsilon })
    }
}

/// `epsilon * sign(v)` elementwise, with `sign(0) = 0`.
pub fn sign_scale(v: &Tensor, spec: SignScaleSpec) -> Tensor {
    v.map(|e| spec.epsilon * sign(e))
}

/// The evaluation images, their labels and the ids records refer to.
#[derive(Clone, Copy, Debug)]
pub struct EvalSet<'a> {
    pub ids: &'a [String],
    pub images: &'a [Tensor],
    pub labels: &'a [usize],
}

impl<'a> EvalSet<'a> {
    pub fn new(ids: &'a [String], images: &'a [Tensor], labels: &'a [usize]) -> Result<Self> {
        if ids.len() != images.len() || ids.len() != labels.len() {
            return Err(Error::invalid("ids, images and labels differ in length"));
        }
        if ids.is_empty() {
            return Err(Error::invalid("evaluation set is empty"));
        }
        Ok(Self { ids, images, labels })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// One record per image, in image order.
    fn align<'r>(&self, records: &'r [PerturbationRecord], what: &str) -> Result<Vec<&'r PerturbationRecord>> {
        let by_id: HashMap<&str, &PerturbationRecord> =
            records.iter().map(|r| (r.image_id.as_str(), r)).collect();
        self.ids
            .iter()
            .zip(self.images)
            .map(|(id, x)| {
                let r = by_id
                    .get(id.as_str())
                    .ok_or_else(|| Error::invalid(format!("{what}: no record for image {id}")))?;
                r.perturbation.ensure_shape(x.shape(), "perturbation record")?;
                Ok(*r)
            })
            .collect()
    }
}

pub struct TestingModel<'a> {
    pub name: String,
    pub model: &'a dyn Classifier,
}

/// A named group of records, one per evaluation image.
pub struct RecordColumn<'a> {
    pub name: String,
    pub records: &'a [PerturbationRecord],
}

/// Fraction of `inputs` classified as `labels` by `model`.
pub fn accuracy(model: &dyn Classifier, inputs: &[Tensor], labels: &[usize]) -> Result<f64> {
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(Error::invalid("accuracy needs equally many, non-empty inputs and labels"));
    }
    let hits = inputs
        .par_iter()
        .zip(labels.par_iter())
        .map(|(x, &y)| model.predict(x).map(|p| (p == y) as usize))
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / inputs.len() as f64)
}

fn mean_accuracy(testing: &[TestingModel], inputs: &[Tensor], labels: &[usize]) -> Result<f64> {
    if testing.is_empty() {
        return Err(Error::invalid("no testing models"));
    }
    let mut total = 0.0;
    for t in testing {
        total += accuracy(t.model, inputs, labels)?;
    }
    Ok(total / testing.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub name: String,
    pub values: Vec<f64>,
}

/// Accuracy per testing model (rows) and input condition (columns), with a
/// trailing `Avg.` row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
}

pub const AVERAGE_ROW: &str = "Avg.";

impl AccuracyTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn value(&self, row: &str, column: &str) -> Option<f64> {
        let c = self.column(column)?;
        self.rows.iter().find(|r| r.name == row).map(|r| r.values[c])
    }

    pub fn average(&self, column: &str) -> Option<f64> {
        self.value(AVERAGE_ROW, column)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["model".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut fields = vec![row.name.clone()];
            fields.extend(row.values.iter().map(|v| format!("{v:.6}")));
            w.write_record(&fields)?;
        }
        w.into_inner().map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_csv()?)
    }
}

/// Independent `±epsilon` per pixel with equal probability.
pub fn random_sign_noise(shape: &[usize], epsilon: f32, seed: u64) -> Tensor {
    use rand::Rng;
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| if r.gen::<bool>() { epsilon } else { -epsilon }).collect(),
    )
    .expect("length matches shape")
}

/// Clean accuracy, the random-sign noise baseline, and accuracy under every
/// record column, each attacked input being `x + epsilon * sign(V)`.
pub fn attack_strength_eval(
    eval: EvalSet,
    columns: &[RecordColumn],
    testing: &[TestingModel],
    spec: SignScaleSpec,
    noise_seed: u64,
) -> Result<AccuracyTable> {
    if testing.is_empty() {
        return Err(Error::invalid("no testing models"));
    }
    let mut names = vec!["Image".to_string(), "Noise".to_string()];
    let mut inputs: Vec<Vec<Tensor>> = vec![eval.images.to_vec()];
    inputs.push(
        eval.images
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let noise = random_sign_noise(x.shape(), spec.epsilon, derive_seed(noise_seed, "sign-noise", i as u64));
                x.add(&noise)
            })
            .collect::<Result<_>>()?,
    );
    for col in columns {
        let aligned = eval.align(col.records, &col.name)?;
        names.push(col.name.clone());
        inputs.push(
            eval.images
                .iter()
                .zip(aligned)
                .map(|(x, r)| x.add(&sign_scale(&r.perturbation, spec)))
                .collect::<Result<_>>()?,
        );
    }
    let mut rows = Vec::with_capacity(testing.len() + 1);
    for t in testing {
        let values = inputs
            .iter()
            .map(|xs| accuracy(t.model, xs, eval.labels))
            .collect::<Result<Vec<_>>>()?;
        rows.push(TableRow {
            name: t.name.clone(),
            values,
        });
    }
    let avg = (0..names.len())
        .map(|c| rows.iter().map(|r| r.values[c]).sum::<f64>() / rows.len() as f64)
        .collect();
    rows.push(TableRow {
        name: AVERAGE_ROW.into(),
        values: avg,
    });
    Ok(AccuracyTable { columns: names, rows })
}

/// Splits `v` into the part inside the mask and the part outside it. A
/// single-channel mask is broadcast across the channels of `v`.
pub fn contour_split(v: &Tensor, mask: &Tensor) -> Result<(Tensor, Tensor)> {
    let vs = v.shape();
    let ms = mask.shape();
    let spatial_ok = match (vs.len(), ms.len()) {
        (3, 3) => ms[0] == 1 && ms[1..] == vs[1..] || ms == vs,
        (3, 2) => ms == &vs[1..],
        _ => ms == vs,
    };
    if !spatial_ok {
        return Err(Error::ShapeMismatch {
            context: "contour_split mask".into(),
            expected: vs.to_vec(),
            actual: ms.to_vec(),
        });
    }
    let period = mask.len();
    let mut contour = Tensor::zeros(vs);
    let mut background = Tensor::zeros(vs);
    for (i, &e) in v.data().iter().enumerate() {
        if mask.data()[i % period] > 0.5 {
            contour.data_mut()[i] = e;
        } else {
            background.data_mut()[i] = e;
        }
    }
    Ok((contour, background))
}

/// Mean testing accuracy with only the contour or only the background part
/// of each perturbation applied, at every epsilon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub epsilons: Vec<f32>,
    pub contour: Vec<f64>,
    pub background: Vec<f64>,
}

impl SweepTable {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epsilon", "contour", "background"])?;
        for ((e, c), b) in self.epsilons.iter().zip(&self.contour).zip(&self.background) {
            w.write_record([format!("{e:.4}"), format!("{c:.6}"), format!("{b:.6}")])?;
        }
        w.into_inner().map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_csv()?)
    }
}

pub fn epsilon_sweep(
    eval: EvalSet,
    records: &[PerturbationRecord],
    masks: &[Tensor],
    testing: &[TestingModel],
    epsilons: &[f32],
) -> Result<SweepTable> {
    if epsilons.is_empty() || epsilons.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("epsilon list must be non-empty and ascending"));
    }
    if masks.len() != eval.len() {
        return Err(Error::invalid("need one mask per evaluation image"));
    }
    let aligned = eval.align(records, "epsilon sweep")?;
    let parts = aligned
        .iter()
        .zip(masks)
        .map(|(r, m)| contour_split(&r.perturbation, m))
        .collect::<Result<Vec<_>>>()?;
    let mut table = SweepTable {
        epsilons: epsilons.to_vec(),
        contour: Vec::new(),
        background: Vec::new(),
    };
    for &eps in epsilons {
        let spec = SignScaleSpec::new(eps)?;
        let apply = |pick: fn(&(Tensor, Tensor)) -> &Tensor| -> Result<Vec<Tensor>> {
            eval.images
                .iter()
                .zip(&parts)
                .map(|(x, p)| x.add(&sign_scale(pick(p), spec)))
                .collect()
        };
        table.contour.push(mean_accuracy(testing, &apply(|p| &p.0)?, eval.labels)?);
        table.background.push(mean_accuracy(testing, &apply(|p| &p.1)?, eval.labels)?);
    }
    Ok(table)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recognizability {
    pub accuracy: f64,
    pub chance: f64,
    pub count: usize,
}

/// Renders each perturbation, multiplies it by `scale` and asks `classifier`
/// for the highest raw logit among `class_subset`; a hit is the record's
/// own label.
pub fn recognizability_eval(
    records: &[PerturbationRecord],
    classifier: &dyn Classifier,
    stats: &DatasetStats,
    class_subset: &[usize],
    scale: f32,
) -> Result<Recognizability> {
    if class_subset.len() < 2 {
        return Err(Error::invalid("class subset needs at least two classes"));
    }
    if let Some(&c) = class_subset.iter().find(|&&c| c >= classifier.num_classes()) {
        return Err(Error::invalid(format!("class {c} is outside the classifier's range")));
    }
    if records.is_empty() {
        return Err(Error::invalid("no records to evaluate"));
    }
    let hits = records
        .par_iter()
        .map(|r| -> Result<usize> {
            if !class_subset.contains(&r.label) {
                return Err(Error::invalid(format!(
                    "label {} of image {} is not in the class subset",
                    r.label, r.image_id
                )));
            }
            let rendered = render_untargeted(&r.perturbation, stats)?.scale(scale);
            let logits = classifier.logits(&rendered)?;
            let restricted: Vec<f32> = class_subset.iter().map(|&c| logits.data()[c]).collect();
            Ok((class_subset[argmax(&restricted)] == r.label) as usize)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Recognizability {
        accuracy: hits.iter().sum::<usize>() as f64 / records.len() as f64,
        chance: 1.0 / class_subset.len() as f64,
        count: records.len(),
    })
}

/// Mean pairwise cosine similarity of contour parts across algorithms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    /// Images contributing to each entry.
    pub counts: Vec<Vec<usize>>,
    /// Images dropped from each entry because a contour part had zero norm.
    pub excluded: Vec<Vec<usize>>,
}

impl SimilarityMatrix {
    pub fn mean_off_diagonal(&self) -> f64 {
        let n = self.labels.len();
        if n < 2 {
            return f64::NAN;
        }
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    sum += self.values[i][j];
                }
            }
        }
        sum / (n * (n - 1)) as f64
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["algorithm".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for (label, row) in self.labels.iter().zip(&self.values) {
            let mut fields = vec![label.clone()];
            fields.extend(row.iter().map(|v| format!("{v:.6}")));
            w.write_record(&fields)?;
        }
        w.into_inner().map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_csv()?)
    }
}

pub fn cosine_similarity_matrix(
    eval: EvalSet,
    columns: &[RecordColumn],
    masks: &[Tensor],
) -> Result<SimilarityMatrix> {
    if masks.len() != eval.len() {
        return Err(Error::invalid("need one mask per evaluation image"));
    }
    let contours = columns
        .iter()
        .map(|col| {
            eval.align(col.records, &col.name)?
                .iter()
                .zip(masks)
                .map(|(r, m)| contour_split(&r.perturbation, m).map(|(c, _)| c))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let n = columns.len();
    let mut values = vec![vec![1.0; n]; n];
    let mut counts = vec![vec![eval.len(); n]; n];
    let mut excluded = vec![vec![0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let (mut sum, mut count) = (0.0, 0usize);
            for (a, b) in contours[i].iter().zip(&contours[j]) {
                let (na, nb) = (a.norm_l2(), b.norm_l2());
                if na == 0.0 || nb == 0.0 {
                    continue;
                }
                sum += (dot(a.data(), b.data()) / (na * nb)).clamp(-1.0, 1.0);
                count += 1;
            }
            let mean = if count > 0 { sum / count as f64 } else { f64::NAN };
            values[i][j] = mean;
            values[j][i] = mean;
            counts[i][j] = count;
            counts[j][i] = count;
            excluded[i][j] = eval.len() - count;
            excluded[j][i] = eval.len() - count;
        }
    }
    Ok(SimilarityMatrix {
        labels: columns.iter().map(|c| c.name.clone()).collect(),
        values,
        counts,
        excluded,
    })
}
