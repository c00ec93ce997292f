use crate::attack::{CwParams, Goal};
use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::loss::LossSpec;
use crate::tensor::Tensor;

/// Carlini-Wagner L2: minimises `||delta||^2 + c * f(x + delta)` over
/// `x + delta = lo + (hi - lo) * (tanh(w) + 1) / 2` with Adam.
///
/// The box `[lo, hi]` is `[0, 1]` widened to contain `x`, so noise-augmented
/// inputs stay representable. Returns the lowest-objective iterate whose
/// margin reached `-kappa`, else the final iterate.
pub fn cw_attack(
    model: &dyn Classifier,
    x: &Tensor,
    goal: Goal,
    params: &CwParams,
) -> Result<Tensor> {
    const EDGE: f64 = 1e-6;
    let lo = x.data().iter().fold(0.0f32, |m, &v| m.min(v)) as f64;
    let hi = x.data().iter().fold(1.0f32, |m, &v| m.max(v)) as f64;
    let span = hi - lo;
    let mut w: Vec<f64> = x
        .data()
        .iter()
        .map(|&v| {
            let unit = (2.0 * (v as f64 - lo) / span - 1.0).clamp(-1.0 + EDGE, 1.0 - EDGE);
            unit.atanh()
        })
        .collect();
    let loss = LossSpec::Margin {
        class: goal.class(),
        kappa: params.kappa,
        targeted: goal.is_targeted(),
    };
    let c = params.c as f64;
    let floor = -(params.kappa as f64);
    let (beta1, beta2, adam_eps) = (0.9f64, 0.999f64, 1e-8f64);
    let lr = params.learning_rate as f64;
    let mut m = vec![0.0f64; w.len()];
    let mut v = vec![0.0f64; w.len()];

    let mut best: Option<(f64, Tensor)> = None;
    let mut last = Tensor::zeros(x.shape());
    for step in 0..=params.iterations {
        let adv_data: Vec<f32> = w
            .iter()
            .map(|&wi| (lo + span * 0.5 * (wi.tanh() + 1.0)) as f32)
            .collect();
        let adv = Tensor::new(x.shape().to_vec(), adv_data)?;
        let delta = adv.sub(x)?;
        let dist = delta.norm_l2().powi(2);

        let mut margin_value = 0.0;
        let (_, mut grads) = model.pullback(&adv, &mut |logits| {
            let (val, g) = loss.value_and_grad(logits)?;
            margin_value = val;
            Ok(vec![g.iter().map(|&gi| gi * params.c).collect()])
        })?;
        let objective = dist + c * margin_value;
        if !objective.is_finite() {
            return Err(Error::NonFinite(format!("CW objective at step {step}")));
        }
        if margin_value <= floor && best.as_ref().is_none_or(|(o, _)| objective < *o) {
            best = Some((objective, delta.clone()));
        }
        if step == params.iterations {
            last = delta;
            break;
        }
        let margin_grad = grads.pop().expect("one seed");
        let t = (step + 1) as i32;
        for i in 0..w.len() {
            let dadv = 2.0 * delta.data()[i] as f64 + margin_grad.data()[i] as f64;
            let th = w[i].tanh();
            let g = dadv * span * 0.5 * (1.0 - th * th);
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let mh = m[i] / (1.0 - beta1.powi(t));
            let vh = v[i] / (1.0 - beta2.powi(t));
            w[i] -= lr * mh / (vh.sqrt() + adam_eps);
        }
    }
    Ok(best.map(|(_, d)| d).unwrap_or(last))
}
