//! The run configuration: one JSON file drives every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use perturblab_core::attack::{Algorithm, AttackParams, AttackSpec, Mode};
use perturblab_core::ensemble::{EnsembleSpec, Setting};
use perturblab_core::model::{catalog, ArchitectureDescriptor};
use perturblab_core::seed::derive_seed;

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_master_seed")]
    pub master_seed: u64,
    /// Root under which `<run-id>/` is created. `PERTURBLAB_RUNS_DIR` wins.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub run_id: Option<String>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub population: PopulationConfig,
    #[serde(default = "default_attacks")]
    pub attacks: Vec<AttackConfig>,
    #[serde(default = "default_settings")]
    pub settings: Vec<Setting>,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub render: RenderConfig,
}

fn default_master_seed() -> u64 {
    0
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_attacks() -> Vec<AttackConfig> {
    vec![AttackConfig::new(Algorithm::Bim)]
}

fn default_settings() -> Vec<Setting> {
    Setting::ALL.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Shapes {
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default = "ten")]
        num_classes: usize,
        #[serde(default = "default_train_per_class")]
        train_per_class: usize,
        #[serde(default = "default_test_per_class")]
        test_per_class: usize,
        #[serde(default = "default_image_size")]
        image_size: usize,
        #[serde(default = "one")]
        channels: usize,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
}

fn ten() -> usize {
    10
}

fn one() -> usize {
    1
}

fn default_train_per_class() -> usize {
    60
}

fn default_test_per_class() -> usize {
    20
}

fn default_image_size() -> usize {
    32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    /// Names from the built-in catalog, assigned round-robin by model index.
    pub architectures: Vec<String>,
    pub sources: usize,
    pub testing: usize,
    /// Index of the testing model that doubles as the SM source.
    pub white_box: usize,
    pub training: TrainingConfig,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            architectures: vec!["stride-cnn".into(), "pool-cnn".into(), "residual-cnn".into()],
            sources: 32,
            testing: 4,
            white_box: 0,
            training: TrainingConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 8,
            batch_size: 16,
            learning_rate: 0.02,
            momentum: 0.9,
        }
    }
}

/// One attack algorithm. `params` holds only the fields to override; the
/// rest keep their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub algorithm: Algorithm,
    #[serde(default)]
    pub params: serde_json::Map<String, serde_json::Value>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub target: Option<usize>,
    /// Overrides `ensemble.sigma` for this algorithm.
    #[serde(default)]
    pub sigma: Option<f32>,
}

impl AttackConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            params: serde_json::Map::new(),
            mode: Mode::Untargeted,
            target: None,
            sigma: None,
        }
    }

    pub fn resolve_params(&self) -> Result<AttackParams, CliError> {
        let mut object = self.params.clone();
        if object.contains_key("algorithm") {
            return Err(CliError::config("attack params must not repeat `algorithm`"));
        }
        object.insert(
            "algorithm".into(),
            serde_json::to_value(self.algorithm).expect("algorithm serialises"),
        );
        serde_json::from_value(serde_json::Value::Object(object)).map_err(|e| {
            CliError::config(format!("{} params: {e}", self.algorithm.label()))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub m: usize,
    pub n: usize,
    pub sigma: f32,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            m: 16,
            n: 10,
            sigma: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Test images per class that are attacked and evaluated.
    pub eval_per_class: usize,
    /// Sign-scaling budget for attack-strength and contour evaluation.
    pub epsilon: f32,
    pub sweep_epsilons: Vec<f32>,
    pub sweep_setting: Setting,
    /// Classes the recognizability classifier may answer; `None` means all.
    pub class_subset: Option<Vec<usize>>,
    pub recognizability_scale: f32,
    /// Testing model used as the held-out recognizability classifier.
    pub recognizability_model: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            eval_per_class: 3,
            epsilon: 0.15,
            sweep_epsilons: (0..=10).map(|i| i as f32 * 0.03).collect(),
            sweep_setting: Setting::MmG,
            class_subset: None,
            recognizability_scale: 0.5,
            recognizability_model: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    /// The perturbation alone, inverted and matched to the data statistics.
    #[default]
    Untargeted,
    /// The adversarial example `x + V` with `V` scaled to a 0.5 peak.
    Targeted,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub mode: RenderMode,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let p = &self.population;
        if p.architectures.is_empty() {
            return Err(CliError::config("population.architectures is empty"));
        }
        if p.testing == 0 {
            return Err(CliError::config("population.testing must be at least 1"));
        }
        if p.white_box >= p.testing {
            return Err(CliError::config("population.white_box must index a testing model"));
        }
        let t = &p.training;
        if t.epochs == 0 || t.batch_size == 0 || !(t.learning_rate > 0.0) {
            return Err(CliError::config("training epochs, batch size and learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&t.momentum) {
            return Err(CliError::config("training momentum must lie in [0, 1)"));
        }
        if self.attacks.is_empty() {
            return Err(CliError::config("no attacks configured"));
        }
        for (i, a) in self.attacks.iter().enumerate() {
            if self.attacks[..i].iter().any(|b| b.algorithm == a.algorithm) {
                return Err(CliError::config(format!(
                    "attack {} is configured twice",
                    a.algorithm.label()
                )));
            }
            self.attack_spec(a)?
                .validate()
                .map_err(|e| CliError::config(format!("{}: {e}", a.algorithm.label())))?;
        }
        if self.settings.is_empty() {
            return Err(CliError::config("no settings configured"));
        }
        for &s in &self.settings {
            for a in &self.attacks {
                s.check(&self.ensemble_spec(s, a))
                    .map_err(|e| CliError::config(e.to_string()))?;
            }
        }
        if self.needs_sources() && p.sources < self.ensemble.m {
            return Err(CliError::config(format!(
                "ensemble.m = {} exceeds population.sources = {}",
                self.ensemble.m, p.sources
            )));
        }
        let a = &self.analysis;
        if a.eval_per_class == 0 {
            return Err(CliError::config("analysis.eval_per_class must be positive"));
        }
        if !(a.epsilon >= 0.0) {
            return Err(CliError::config("analysis.epsilon must be >= 0"));
        }
        if a.sweep_epsilons.is_empty() || a.sweep_epsilons.windows(2).any(|w| w[1] < w[0]) {
            return Err(CliError::config("analysis.sweep_epsilons must be non-empty and ascending"));
        }
        if a.recognizability_model >= p.testing {
            return Err(CliError::config("analysis.recognizability_model must index a testing model"));
        }
        if let DatasetConfig::Shapes { num_classes, .. } = &self.dataset {
            if let Some(subset) = &a.class_subset {
                if subset.iter().any(|c| c >= num_classes) {
                    return Err(CliError::config("analysis.class_subset names an unknown class"));
                }
            }
        }
        Ok(())
    }

    fn needs_sources(&self) -> bool {
        self.settings.iter().any(|&s| s != Setting::Sm)
    }

    /// Every default filled in, as recorded in the manifest.
    pub fn resolved(&self) -> serde_json::Value {
        let mut value = serde_json::to_value(self).expect("config serialises");
        if let Some(attacks) = value.get_mut("attacks").and_then(|a| a.as_array_mut()) {
            for (entry, cfg) in attacks.iter_mut().zip(&self.attacks) {
                if let Ok(params) = cfg.resolve_params() {
                    let mut full = serde_json::to_value(params).expect("params serialise");
                    if let Some(obj) = full.as_object_mut() {
                        obj.remove("algorithm");
                    }
                    entry["params"] = full;
                }
                entry["sigma"] = serde_json::json!(self.sigma_for(cfg));
            }
        }
        value
    }

    pub fn sigma_for(&self, attack: &AttackConfig) -> f32 {
        attack.sigma.unwrap_or(self.ensemble.sigma)
    }

    pub fn attack_spec(&self, attack: &AttackConfig) -> Result<AttackSpec, CliError> {
        Ok(AttackSpec {
            params: attack.resolve_params()?,
            mode: attack.mode,
            target: attack.target,
            seed: derive_seed(self.master_seed, "attack", attack.algorithm as u64),
        })
    }

    pub fn ensemble_spec(&self, setting: Setting, attack: &AttackConfig) -> EnsembleSpec {
        let seed = derive_seed(self.master_seed, "ensemble", attack.algorithm as u64);
        let e = &self.ensemble;
        match setting {
            Setting::Sm => EnsembleSpec {
                m: 1,
                n: 1,
                sigma: 0.0,
                seed,
            },
            Setting::Mm => EnsembleSpec {
                m: e.m,
                n: 1,
                sigma: 0.0,
                seed,
            },
            Setting::MmG => EnsembleSpec {
                m: e.m,
                n: e.n,
                sigma: self.sigma_for(attack),
                seed,
            },
        }
    }

    pub fn dataset_seed(&self) -> u64 {
        match &self.dataset {
            DatasetConfig::Shapes { seed: Some(s), .. } => *s,
            _ => derive_seed(self.master_seed, "dataset", 0),
        }
    }

    pub fn architectures(
        &self,
        channels: usize,
        size: usize,
        num_classes: usize,
    ) -> Result<Vec<ArchitectureDescriptor>, CliError> {
        let available = catalog(channels, size, num_classes);
        self.population
            .architectures
            .iter()
            .map(|name| {
                available.iter().find(|a| &a.name == name).cloned().ok_or_else(|| {
                    let names: Vec<_> = available.iter().map(|a| a.name.as_str()).collect();
                    CliError::config(format!(
                        "unknown architecture `{name}` (available: {})",
                        names.join(", ")
                    ))
                })
            })
            .collect()
    }

    /// `--run-id`, then the config's `run_id`, then a name derived from the
    /// configuration itself.
    pub fn run_id(&self, flag: Option<&str>) -> String {
        if let Some(id) = flag.or(self.run_id.as_deref()) {
            return id.to_string();
        }
        let mut canonical = self.clone();
        canonical.run_id = None;
        canonical.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&canonical).expect("config serialises");
        format!("run-{:08x}", crc32fast::hash(&bytes))
    }

    pub fn runs_root(&self) -> PathBuf {
        match std::env::var_os("PERTURBLAB_RUNS_DIR") {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }
}
