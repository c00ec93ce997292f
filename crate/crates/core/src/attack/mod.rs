//! The five perturbation generators. Each maps `(classifier, image, goal)`
//! to a dense perturbation with the image's shape. Adversarial examples
//! `x + delta` are never clamped to the valid pixel range.

mod bim;
mod cw;
mod deepfool;
mod one_pixel;
mod square;

pub use bim::bim_attack;
pub use cw::cw_attack;
pub use deepfool::{deepfool_attack, DeepFoolOutcome};
pub use one_pixel::{apply_pixels, one_pixel_attack, one_pixel_attack_with_history, OnePixelOutcome};
pub use square::{square_attack, SquareOutcome};

use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::loss::{best_other, LossSpec};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Bim,
    Cw,
    DeepFool,
    Square,
    OnePixel,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Bim,
        Algorithm::Cw,
        Algorithm::DeepFool,
        Algorithm::Square,
        Algorithm::OnePixel,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Bim => "BIM",
            Algorithm::Cw => "CW",
            Algorithm::DeepFool => "DeepFool",
            Algorithm::Square => "Square",
            Algorithm::OnePixel => "OnePixel",
        }
    }

    pub fn default_params(self) -> AttackParams {
        match self {
            Algorithm::Bim => AttackParams::Bim(BimParams::default()),
            Algorithm::Cw => AttackParams::Cw(CwParams::default()),
            Algorithm::DeepFool => AttackParams::DeepFool(DeepFoolParams::default()),
            Algorithm::Square => AttackParams::Square(SquareParams::default()),
            Algorithm::OnePixel => AttackParams::OnePixel(OnePixelParams::default()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Untargeted,
    Targeted,
}

/// Basic iterative method under an L-infinity budget (pixel units).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BimParams {
    pub epsilon: f32,
    pub step: f32,
    pub iterations: usize,
}

impl Default for BimParams {
    fn default() -> Self {
        Self {
            epsilon: 0.02,
            step: 0.0008,
            iterations: 50,
        }
    }
}

/// Carlini-Wagner L2. `learning_rate` is the Adam step size in the
/// tanh-reparameterised space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CwParams {
    pub c: f32,
    pub kappa: f32,
    pub iterations: usize,
    #[serde(default = "cw_lr")]
    pub learning_rate: f32,
}

fn cw_lr() -> f32 {
    0.01
}

impl Default for CwParams {
    fn default() -> Self {
        Self {
            c: 5.0,
            kappa: 5.0,
            iterations: 1000,
            learning_rate: cw_lr(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeepFoolParams {
    pub overshoot: f32,
    pub max_iterations: usize,
    pub top_k: usize,
}

impl Default for DeepFoolParams {
    fn default() -> Self {
        Self {
            overshoot: 0.02,
            max_iterations: 50,
            top_k: 10,
        }
    }
}

/// L-infinity square attack, started from a zero perturbation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SquareParams {
    pub epsilon: f32,
    pub p_init: f32,
    pub iterations: usize,
}

impl Default for SquareParams {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            p_init: 0.1,
            iterations: 1000,
        }
    }
}

/// Differential evolution over `(row, col, value per channel)` tuples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnePixelParams {
    pub pixels: usize,
    pub population: usize,
    pub generations: usize,
    #[serde(default = "de_f")]
    pub mutation: f32,
    #[serde(default = "de_cr")]
    pub crossover: f32,
    #[serde(default = "value_range")]
    pub value_range: (f32, f32),
    /// When set, pixel values snap to the nearest of these levels.
    #[serde(default)]
    pub value_levels: Option<Vec<f32>>,
}

fn de_f() -> f32 {
    0.5
}

fn de_cr() -> f32 {
    0.9
}

fn value_range() -> (f32, f32) {
    (0.0, 1.0)
}

impl Default for OnePixelParams {
    fn default() -> Self {
        Self {
            pixels: 3,
            population: 200,
            generations: 400,
            mutation: de_f(),
            crossover: de_cr(),
            value_range: value_range(),
            value_levels: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum AttackParams {
    Bim(BimParams),
    Cw(CwParams),
    DeepFool(DeepFoolParams),
    Square(SquareParams),
    OnePixel(OnePixelParams),
}

impl AttackParams {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            AttackParams::Bim(_) => Algorithm::Bim,
            AttackParams::Cw(_) => Algorithm::Cw,
            AttackParams::DeepFool(_) => Algorithm::DeepFool,
            AttackParams::Square(_) => Algorithm::Square,
            AttackParams::OnePixel(_) => Algorithm::OnePixel,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub params: AttackParams,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub target: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl AttackSpec {
    pub fn untargeted(params: AttackParams) -> Self {
        Self {
            params,
            mode: Mode::Untargeted,
            target: None,
            seed: 0,
        }
    }

    pub fn targeted(params: AttackParams, target: usize) -> Self {
        Self {
            params,
            mode: Mode::Targeted,
            target: Some(target),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn algorithm(&self) -> Algorithm {
        self.params.algorithm()
    }

    pub fn validate(&self) -> Result<()> {
        match (self.mode, self.target) {
            (Mode::Targeted, None) => {
                return Err(Error::invalid("targeted attack without a target class"))
            }
            (Mode::Untargeted, Some(_)) => {
                return Err(Error::invalid("untargeted attack must not carry a target"))
            }
            _ => {}
        }
        match &self.params {
            AttackParams::Bim(p) => {
                if !(p.epsilon >= 0.0 && p.step >= 0.0 && p.step <= p.epsilon) {
                    return Err(Error::invalid("BIM needs 0 <= step <= epsilon"));
                }
            }
            AttackParams::Cw(p) => {
                if !(p.c >= 0.0 && p.kappa >= 0.0 && p.learning_rate > 0.0) {
                    return Err(Error::invalid("CW needs c >= 0, kappa >= 0, lr > 0"));
                }
            }
            AttackParams::DeepFool(p) => {
                if self.mode == Mode::Targeted {
                    return Err(Error::invalid("DeepFool does not support targeted attacks"));
                }
                if !(p.overshoot > 0.0) || p.top_k < 2 {
                    return Err(Error::invalid("DeepFool needs overshoot > 0 and top_k >= 2"));
                }
            }
            AttackParams::Square(p) => {
                if !(p.p_init > 0.0 && p.p_init <= 1.0) || !(p.epsilon >= 0.0) {
                    return Err(Error::invalid("square attack needs 0 < p <= 1, epsilon >= 0"));
                }
            }
            AttackParams::OnePixel(p) => {
                if p.population < 4 {
                    return Err(Error::invalid(
                        "differential evolution needs a population of at least 4",
                    ));
                }
                if p.pixels == 0 {
                    return Err(Error::invalid("one-pixel attack needs at least one pixel"));
                }
                if !(p.value_range.0 <= p.value_range.1) {
                    return Err(Error::invalid("empty pixel value range"));
                }
                if matches!(&p.value_levels, Some(l) if l.is_empty()) {
                    return Err(Error::invalid("empty value level list"));
                }
            }
        }
        Ok(())
    }

    fn goal(&self, label: usize) -> Goal {
        match self.target {
            Some(t) if self.mode == Mode::Targeted => Goal::Targeted(t),
            _ => Goal::Untargeted(label),
        }
    }

    /// Runs the attack and returns the dense perturbation.
    pub fn run(&self, model: &dyn Classifier, x: &Tensor, label: usize) -> Result<Tensor> {
        self.validate()?;
        x.ensure_shape(model.input_shape(), "attack input")?;
        let k = model.num_classes();
        if label >= k || self.target.is_some_and(|t| t >= k) {
            return Err(Error::invalid(format!("class index out of range for {k} classes")));
        }
        let goal = self.goal(label);
        let delta = match &self.params {
            AttackParams::Bim(p) => bim_attack(model, x, goal, p)?,
            AttackParams::Cw(p) => cw_attack(model, x, goal, p)?,
            AttackParams::DeepFool(p) => deepfool_attack(model, x, p)?.delta,
            AttackParams::Square(p) => square_attack(model, x, goal, p, self.seed)?.delta,
            AttackParams::OnePixel(p) => one_pixel_attack(model, x, goal, p, self.seed)?.delta,
        };
        if !delta.is_finite() {
            return Err(Error::NonFinite(format!("{} perturbation", self.algorithm().label())));
        }
        Ok(delta)
    }
}

/// What the attacker is pushing towards.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Goal {
    /// Away from the true label.
    Untargeted(usize),
    /// Towards the target class.
    Targeted(usize),
}

impl Goal {
    pub fn class(self) -> usize {
        match self {
            Goal::Untargeted(c) | Goal::Targeted(c) => c,
        }
    }

    pub fn is_targeted(self) -> bool {
        matches!(self, Goal::Targeted(_))
    }

    /// The loss a search attack minimises: the true-class margin
    /// `z_y - max_{i != y} z_i` when untargeted, the cross-entropy of the
    /// target when targeted.
    pub fn search_loss(self, logits: &[f32]) -> Result<f64> {
        match self {
            Goal::Untargeted(y) => {
                let other = best_other(logits, y);
                Ok(logits[y] as f64 - logits[other] as f64)
            }
            Goal::Targeted(t) => Ok(LossSpec::CrossEntropy { label: t }.value_and_grad(logits)?.0),
        }
    }

    pub fn is_success(self, logits: &[f32]) -> bool {
        let pred = crate::tensor::argmax(logits);
        match self {
            Goal::Untargeted(y) => pred != y,
            Goal::Targeted(t) => pred == t,
        }
    }
}
