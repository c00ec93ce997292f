use crate::error::{Error, Result};

/// Differentiable scalar read-outs of a logit vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossSpec {
    /// Softmax cross-entropy against `label`.
    CrossEntropy { label: usize },
    /// Carlini-Wagner style margin, floored at `-kappa`.
    ///
    /// Untargeted (`class` = true label): `max(z_y - max_{i != y} z_i, -kappa)`.
    /// Targeted (`class` = target): `max(max_{i != t} z_i - z_t, -kappa)`.
    /// Both are minimised by an attacker. `kappa = inf` removes the floor.
    Margin {
        class: usize,
        kappa: f32,
        targeted: bool,
    },
    /// The raw logit of `class`.
    Logit { class: usize },
}

impl LossSpec {
    /// Builds a loss from its token. Tokens naming piecewise-constant
    /// read-outs (`zero-one`, `argmax`, `accuracy`) are rejected.
    pub fn parse(token: &str, class: usize) -> Result<Self> {
        match token {
            "cross-entropy" | "cross_entropy" | "ce" => Ok(Self::CrossEntropy { label: class }),
            "margin" | "logit-margin" | "logit_margin" => Ok(Self::Margin {
                class,
                kappa: 0.0,
                targeted: false,
            }),
            "logit" | "single-logit" | "single_logit" => Ok(Self::Logit { class }),
            "zero-one" | "zero_one" | "argmax" | "accuracy" => {
                Err(Error::NonDifferentiable(token.to_string()))
            }
            other => Err(Error::invalid(format!("unknown loss `{other}`"))),
        }
    }

    fn class(&self) -> usize {
        match *self {
            Self::CrossEntropy { label } => label,
            Self::Margin { class, .. } => class,
            Self::Logit { class } => class,
        }
    }

    /// Loss value and its gradient with respect to the logits.
    pub fn value_and_grad(&self, logits: &[f32]) -> Result<(f64, Vec<f32>)> {
        let k = logits.len();
        let class = self.class();
        if class >= k {
            return Err(Error::invalid(format!(
                "class {class} out of range for {k} logits"
            )));
        }
        let mut grad = vec![0.0f32; k];
        let value = match *self {
            Self::CrossEntropy { label } => {
                let probs = softmax(logits);
                for (g, p) in grad.iter_mut().zip(&probs) {
                    *g = *p as f32;
                }
                grad[label] -= 1.0;
                let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
                let lse = max
                    + logits
                        .iter()
                        .map(|&z| (z as f64 - max).exp())
                        .sum::<f64>()
                        .ln();
                lse - logits[label] as f64
            }
            Self::Margin {
                class,
                kappa,
                targeted,
            } => {
                let other = best_other(logits, class);
                let margin = if targeted {
                    logits[other] as f64 - logits[class] as f64
                } else {
                    logits[class] as f64 - logits[other] as f64
                };
                let floor = -(kappa as f64);
                if margin > floor {
                    let s = if targeted { -1.0 } else { 1.0 };
                    grad[class] = s;
                    grad[other] = -s;
                    margin
                } else {
                    floor
                }
            }
            Self::Logit { class } => {
                grad[class] = 1.0;
                logits[class] as f64
            }
        };
        if !value.is_finite() {
            return Err(Error::NonFinite("loss value".into()));
        }
        Ok((value, grad))
    }
}

/// Index of the largest logit other than `class` (first on ties).
pub fn best_other(logits: &[f32], class: usize) -> usize {
    let mut best: Option<usize> = None;
    for (i, &z) in logits.iter().enumerate() {
        if i == class {
            continue;
        }
        match best {
            Some(b) if logits[b] >= z => {}
            _ => best = Some(i),
        }
    }
    best.unwrap_or(class)
}

pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits.iter().map(|&z| (z as f64 - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_differentiable_tokens_are_rejected() {
        assert!(matches!(
            LossSpec::parse("zero-one", 0),
            Err(Error::NonDifferentiable(_))
        ));
        assert!(matches!(
            LossSpec::parse("bogus", 0),
            Err(Error::InvalidArgument(_))
        ));
        assert_eq!(
            LossSpec::parse("ce", 2).unwrap(),
            LossSpec::CrossEntropy { label: 2 }
        );
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let (v, g) = LossSpec::CrossEntropy { label: 1 }
            .value_and_grad(&[0.0, 0.0])
            .unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-12);
        assert_eq!(g, vec![0.5, -0.5]);
    }

    #[test]
    fn margin_floors_at_minus_kappa() {
        let spec = LossSpec::Margin {
            class: 0,
            kappa: 1.0,
            targeted: false,
        };
        let (v, g) = spec.value_and_grad(&[0.0, 5.0, 1.0]).unwrap();
        assert_eq!(v, -1.0);
        assert_eq!(g, vec![0.0; 3]);
        let (v, g) = spec.value_and_grad(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(v, 1.0);
        assert_eq!(g, vec![1.0, 0.0, -1.0]);
    }

    #[test]
    fn targeted_margin_prefers_target() {
        let spec = LossSpec::Margin {
            class: 2,
            kappa: 0.0,
            targeted: true,
        };
        let (v, g) = spec.value_and_grad(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(v, 1.0);
        assert_eq!(g, vec![1.0, 0.0, -1.0]);
    }
}
