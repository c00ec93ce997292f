use crate::attack::{BimParams, Goal};
use crate::classifier::{input_gradient, Classifier};
use crate::error::Result;
use crate::loss::LossSpec;
use crate::tensor::{sign, Tensor};

/// Iterated signed-gradient steps on the cross-entropy (ascending for the
/// true label, descending for a target), with the perturbation clamped to
/// the epsilon ball after every step.
pub fn bim_attack(
    model: &dyn Classifier,
    x: &Tensor,
    goal: Goal,
    params: &BimParams,
) -> Result<Tensor> {
    let direction = if goal.is_targeted() { -1.0 } else { 1.0 };
    let loss = LossSpec::CrossEntropy { label: goal.class() };
    let eps = params.epsilon;
    let mut delta = Tensor::zeros(x.shape());
    for _ in 0..params.iterations {
        let adv = x.add(&delta)?;
        let g = input_gradient(model, &adv, &loss)?.grad;
        for (d, &gv) in delta.data_mut().iter_mut().zip(g.data()) {
            *d = (*d + direction * params.step * sign(gv)).clamp(-eps, eps);
        }
    }
    Ok(delta)
}
