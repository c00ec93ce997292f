//! Noise-augmented multi-model perturbation averaging.
//!
//! For `m` source models and `n` Gaussian copies of the input per model, every
//! component attack runs on `x + N_ij` against logits shifted by
//! `f(x) - f(x + N_ij)`, and the result is the uniform mean of the `m * n`
//! component perturbations. Components may execute in any order or in
//! parallel; the mean is always reduced in `(i, j)` order in 64-bit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::AttackSpec;
use crate::classifier::{Classifier, Shifted};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::seed::{derive_seed, Gaussian};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub m: usize,
    pub n: usize,
    pub sigma: f32,
    pub seed: u64,
}

impl EnsembleSpec {
    pub fn single() -> Self {
        Self {
            m: 1,
            n: 1,
            sigma: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::Invariant("ensemble needs m >= 1 and n >= 1".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Invariant(format!(
                "noise standard deviation must be >= 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    pub fn components(&self) -> usize {
        self.m * self.n
    }

    pub fn noise_seed(&self, model: usize, copy: usize) -> u64 {
        derive_seed(self.seed, "noise", (model * self.n + copy) as u64)
    }
}

/// The three generation settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Setting {
    /// One model (the white-box testing model), no noise.
    #[serde(rename = "SM")]
    Sm,
    /// Several source models, no noise.
    #[serde(rename = "MM")]
    Mm,
    /// Several source models, several noise copies each.
    #[serde(rename = "MM+G")]
    MmG,
}

impl Setting {
    pub const ALL: [Setting; 3] = [Setting::Sm, Setting::Mm, Setting::MmG];

    pub fn label(self) -> &'static str {
        match self {
            Setting::Sm => "SM",
            Setting::Mm => "MM",
            Setting::MmG => "MM+G",
        }
    }

    pub fn check(self, spec: &EnsembleSpec) -> Result<()> {
        spec.validate()?;
        let ok = match self {
            Setting::Sm => spec.m == 1 && spec.n == 1 && spec.sigma == 0.0,
            Setting::Mm => spec.m > 1 && spec.sigma == 0.0,
            Setting::MmG => spec.m > 1 && spec.sigma > 0.0,
        };
        if !ok {
            return Err(Error::invalid(format!(
                "ensemble m={} n={} sigma={} is inconsistent with the {} setting",
                spec.m,
                spec.n,
                spec.sigma,
                self.label()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentSeeds {
    pub noise: u64,
    pub attack: u64,
}

/// An averaged perturbation and everything needed to regenerate it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRecord {
    #[serde(skip)]
    pub perturbation: Tensor,
    pub image_id: String,
    pub label: usize,
    pub setting: Option<Setting>,
    pub attack: AttackSpec,
    pub ensemble: EnsembleSpec,
    pub models: Vec<String>,
    pub components: usize,
    pub seeds: Vec<ComponentSeeds>,
    /// Seconds since the Unix epoch; left unset by the library so record
    /// files are reproducible byte for byte.
    #[serde(default)]
    pub generated_at: Option<u64>,
}

impl PerturbationRecord {
    pub fn validate(&self) -> Result<()> {
        self.ensemble.validate()?;
        if self.components != self.ensemble.components() {
            return Err(Error::Invariant(format!(
                "record claims {} components for m*n = {}",
                self.components,
                self.ensemble.components()
            )));
        }
        if !self.perturbation.is_finite() {
            return Err(Error::Invariant("perturbation holds non-finite values".into()));
        }
        Ok(())
    }
}

/// I.i.d. `N(0, sigma^2)` entries from a seeded ChaCha8 stream via Box-Muller.
pub fn sample_noise(shape: &[usize], sigma: f32, seed: u64) -> Tensor {
    if sigma == 0.0 {
        return Tensor::zeros(shape);
    }
    let mut g = Gaussian::new(seed);
    let s = sigma as f64;
    Tensor::from_fn(shape, |_| (g.next_standard() * s) as f32)
}

/// Logit correction `f(x) - f(x + noise)`.
pub fn compute_calibration(model: &dyn Classifier, x: &Tensor, noise: &Tensor) -> Result<Tensor> {
    let clean = model.logits(x)?;
    let noisy = model.logits(&x.add(noise)?)?;
    clean.sub(&noisy)
}

/// How the component jobs are scheduled. The result does not depend on it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Serial,
    #[default]
    Parallel,
}

/// One component attack: `(classifier, noisy input, label, attack seed)`.
pub type ComponentAttack<'a> = dyn Fn(&dyn Classifier, &Tensor, usize, u64) -> Result<Tensor> + Sync + 'a;

/// Averages `m * n` component perturbations produced by `attack`.
pub fn generate_averaged_with(
    x: &Tensor,
    label: usize,
    models: &[&dyn Classifier],
    spec: &EnsembleSpec,
    attack_seed: u64,
    attack: &ComponentAttack<'_>,
    execution: Execution,
) -> Result<(Tensor, Vec<ComponentSeeds>)> {
    spec.validate()?;
    if models.len() != spec.m {
        return Err(Error::invalid(format!(
            "ensemble expects {} source models, got {}",
            spec.m,
            models.len()
        )));
    }
    let shape = models[0].input_shape().to_vec();
    let classes = models[0].num_classes();
    if models
        .iter()
        .any(|m| m.input_shape() != shape.as_slice() || m.num_classes() != classes)
    {
        return Err(Error::invalid("source models disagree on input shape or class count"));
    }
    x.ensure_shape(&shape, "ensemble input")?;

    let seeds: Vec<ComponentSeeds> = (0..spec.components())
        .map(|k| ComponentSeeds {
            noise: spec.noise_seed(k / spec.n, k % spec.n),
            attack: derive_seed(attack_seed, "component", k as u64),
        })
        .collect();

    let job = |k: usize| -> Result<Tensor> {
        let (i, j) = (k / spec.n, k % spec.n);
        let model = models[i];
        let run = || -> Result<Tensor> {
            if spec.sigma == 0.0 {
                return attack(model, x, label, seeds[k].attack);
            }
            let noise = sample_noise(&shape, spec.sigma, seeds[k].noise);
            let noisy = x.add(&noise)?;
            let calib = compute_calibration(model, x, &noise)?;
            let shifted = Shifted::new(model, calib.into_data())?;
            attack(&shifted, &noisy, label, seeds[k].attack)
        };
        let delta = run().map_err(|e| Error::AttackFailed {
            model: i,
            copy: j,
            source: Box::new(e),
        })?;
        delta
            .ensure_shape(&shape, "component perturbation")
            .map_err(|e| Error::AttackFailed {
                model: i,
                copy: j,
                source: Box::new(e),
            })?;
        Ok(delta)
    };

    let parts: Vec<Result<Tensor>> = match execution {
        Execution::Serial => (0..spec.components()).map(job).collect(),
        Execution::Parallel => (0..spec.components()).into_par_iter().map(job).collect(),
    };
    let mut acc = vec![0.0f64; x.len()];
    for part in parts {
        let part = part?;
        for (a, &v) in acc.iter_mut().zip(part.data()) {
            *a += v as f64;
        }
    }
    let inv = spec.components() as f64;
    let mean = Tensor::new(shape, acc.into_iter().map(|a| (a / inv) as f32).collect())?;
    Ok((mean, seeds))
}

/// Averaged perturbation for one image with a concrete attack.
pub fn generate_averaged(
    x: &Tensor,
    label: usize,
    image_id: &str,
    models: &[&Model],
    spec: &EnsembleSpec,
    attack: &AttackSpec,
) -> Result<PerturbationRecord> {
    attack.validate()?;
    let classifiers: Vec<&dyn Classifier> = models.iter().map(|m| *m as &dyn Classifier).collect();
    let runner = |clf: &dyn Classifier, input: &Tensor, y: usize, seed: u64| {
        let mut spec = attack.clone();
        spec.seed = seed;
        spec.run(clf, input, y)
    };
    let (perturbation, seeds) = generate_averaged_with(
        x,
        label,
        &classifiers,
        spec,
        attack.seed,
        &runner,
        Execution::Parallel,
    )?;
    Ok(PerturbationRecord {
        perturbation,
        image_id: image_id.to_string(),
        label,
        setting: None,
        attack: attack.clone(),
        ensemble: spec.clone(),
        models: models.iter().map(|m| m.id.clone()).collect(),
        components: spec.components(),
        seeds,
        generated_at: None,
    })
}

/// Source and testing models of an experiment. `white_box` indexes the
/// testing model that doubles as the single source model of the SM setting.
#[derive(Clone, Debug)]
pub struct Population {
    pub sources: Vec<Model>,
    pub testing: Vec<Model>,
    pub white_box: usize,
}

/// The models contributing to a setting: the white-box testing model for SM,
/// the first `m` source models otherwise.
pub fn setting_models<'p>(
    setting: Setting,
    ensemble: &EnsembleSpec,
    population: &'p Population,
) -> Result<Vec<&'p Model>> {
    setting.check(ensemble)?;
    match setting {
        Setting::Sm => Ok(vec![population
            .testing
            .get(population.white_box)
            .ok_or_else(|| Error::invalid("white-box testing model is missing"))?]),
        Setting::Mm | Setting::MmG => {
            if population.sources.len() < ensemble.m {
                return Err(Error::invalid(format!(
                    "population has {} source models, {} requested",
                    population.sources.len(),
                    ensemble.m
                )));
            }
            Ok(population.sources[..ensemble.m].iter().collect())
        }
    }
}

/// Per-image ensemble and attack specs: both seeds are re-derived from the
/// image's position in the list.
pub fn image_specs(ensemble: &EnsembleSpec, attack: &AttackSpec, index: usize) -> (EnsembleSpec, AttackSpec) {
    (
        EnsembleSpec {
            seed: derive_seed(ensemble.seed, "image", index as u64),
            ..ensemble.clone()
        },
        AttackSpec {
            seed: derive_seed(attack.seed, "image", index as u64),
            ..attack.clone()
        },
    )
}

/// Runs one setting over a list of images, handing each record to `sink`
/// as soon as it is complete.
#[allow(clippy::too_many_arguments)]
pub fn run_setting(
    images: &[Tensor],
    labels: &[usize],
    image_ids: &[String],
    setting: Setting,
    ensemble: &EnsembleSpec,
    attack: &AttackSpec,
    population: &Population,
    sink: &mut dyn FnMut(&PerturbationRecord) -> Result<()>,
) -> Result<Vec<PerturbationRecord>> {
    setting.check(ensemble)?;
    if images.len() != labels.len() || images.len() != image_ids.len() {
        return Err(Error::invalid("images, labels and ids differ in length"));
    }
    let models = setting_models(setting, ensemble, population)?;
    let mut records = Vec::with_capacity(images.len());
    for (idx, ((x, &y), id)) in images.iter().zip(labels).zip(image_ids).enumerate() {
        let (spec, attack) = image_specs(ensemble, attack, idx);
        let mut record = generate_averaged(x, y, id, &models, &spec, &attack)?;
        record.setting = Some(setting);
        sink(&record)?;
        records.push(record);
    }
    Ok(records)
}
