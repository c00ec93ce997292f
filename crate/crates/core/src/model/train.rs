use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::data::Split;
use crate::error::{Error, Result};
use crate::graph::ParamGrads;
use crate::loss::LossSpec;
use crate::model::{ArchitectureDescriptor, Network, Role, Model, TrainMetadata};
use crate::seed::{below, derive_seed, rng};

/// Plain SGD with momentum. The seed alone fixes initialisation and the
/// shuffling order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset_id: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        Ok(())
    }
}

pub fn train_model(
    id: impl Into<String>,
    role: Role,
    arch: ArchitectureDescriptor,
    cfg: &TrainConfig,
    train: &Split,
    test: &Split,
) -> Result<Model> {
    cfg.validate()?;
    train.validate()?;
    test.validate()?;
    let mut net = Network::init(arch, derive_seed(cfg.seed, "init", 0))?;
    let mut grads = ParamGrads::zeros_like(net.params());
    let mut velocity: Vec<Vec<f64>> = net.params().iter().map(|p| vec![0.0; p.len()]).collect();
    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut last_loss = f64::NAN;

    for epoch in 0..cfg.epochs {
        let mut shuffler = rng(derive_seed(cfg.seed, "shuffle", epoch as u64));
        for i in (1..n).rev() {
            let j = below(&mut shuffler, i + 1);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            grads.clear();
            for &idx in batch {
                let loss = LossSpec::CrossEntropy {
                    label: train.labels[idx],
                };
                let mut value = 0.0;
                let mut failed = None;
                let outcome = net.accumulate_param_grads(
                    &train.images[idx],
                    |logits| match loss.value_and_grad(logits) {
                        Ok((v, g)) => {
                            value = v;
                            g
                        }
                        Err(e) => {
                            failed = Some(e);
                            vec![0.0; logits.len()]
                        }
                    },
                    &mut grads,
                );
                if outcome.is_err() || failed.is_some() || !value.is_finite() {
                    return Err(Error::Diverged { epoch, step });
                }
                epoch_loss += value;
            }
            let scale = 1.0 / batch.len() as f64;
            let lr = cfg.learning_rate as f64;
            let mu = cfg.momentum as f64;
            for ((param, vel), g) in net
                .params_mut()
                .iter_mut()
                .zip(&mut velocity)
                .zip(&grads.buffers)
            {
                for ((p, v), &gv) in param.data_mut().iter_mut().zip(vel.iter_mut()).zip(g) {
                    *v = mu * *v + gv * scale;
                    *p = (*p as f64 - lr * *v) as f32;
                }
                if !param.is_finite() {
                    return Err(Error::Diverged { epoch, step });
                }
            }
        }
        last_loss = epoch_loss / n as f64;
    }

    let train_accuracy = evaluate_accuracy(&net, &train.images, &train.labels)?;
    let test_accuracy = evaluate_accuracy(&net, &test.images, &test.labels)?;
    Ok(Model {
        id: id.into(),
        role,
        seed: cfg.seed,
        network: net,
        metadata: TrainMetadata {
            config: cfg.clone(),
            epochs_run: cfg.epochs,
            final_train_loss: last_loss,
            train_accuracy,
            test_accuracy,
        },
    })
}

/// Fraction of images whose arg-max logit equals the label.
pub fn evaluate_accuracy(
    model: &dyn Classifier,
    images: &[crate::tensor::Tensor],
    labels: &[usize],
) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::invalid("accuracy of an empty image list"));
    }
    if images.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let mut correct = 0usize;
    for (x, &y) in images.iter().zip(labels) {
        if model.predict(x)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / images.len() as f64)
}
