use crate::attack::DeepFoolParams;
use crate::classifier::Classifier;
use crate::error::Result;
use crate::tensor::{argmax, Tensor};

#[derive(Clone, Debug)]
pub struct DeepFoolOutcome {
    pub delta: Tensor,
    /// Linearisation steps taken.
    pub iterations: usize,
    /// Class whose boundary each step projected onto.
    pub targets: Vec<usize>,
    /// The candidate classes considered (top-k of the initial logits, minus
    /// the initial prediction).
    pub candidates: Vec<usize>,
}

/// DeepFool against the classifier's own current prediction, restricted to
/// the `top_k` highest initial logits. The accumulated step is scaled by
/// `1 + overshoot`; the loop stops once the prediction changes.
pub fn deepfool_attack(
    model: &dyn Classifier,
    x: &Tensor,
    params: &DeepFoolParams,
) -> Result<DeepFoolOutcome> {
    let logits0 = model.logits(x)?;
    let origin = logits0.argmax();
    let mut ranked: Vec<usize> = (0..logits0.len()).collect();
    ranked.sort_by(|&a, &b| {
        logits0.data()[b]
            .total_cmp(&logits0.data()[a])
            .then(a.cmp(&b))
    });
    let candidates: Vec<usize> = ranked
        .into_iter()
        .take(params.top_k)
        .filter(|&k| k != origin)
        .collect();
    let scale = 1.0 + params.overshoot as f64;
    let mut r_total = vec![0.0f64; x.len()];
    let mut targets = Vec::new();
    let mut iterations = 0;
    let k = logits0.len();

    let perturb = |r: &[f64]| -> Tensor {
        Tensor::from_fn(&[r.len()], |i| (r[i] * scale) as f32)
            .reshape(x.shape())
            .expect("same element count")
    };

    while iterations < params.max_iterations {
        let xi = x.add(&perturb(&r_total))?;
        let (logits, grads) = model.pullback(&xi, &mut |_| {
            Ok(candidates
                .iter()
                .map(|&c| {
                    let mut seed = vec![0.0f32; k];
                    seed[c] = 1.0;
                    seed[origin] = -1.0;
                    seed
                })
                .collect())
        })?;
        if argmax(logits.data()) != origin {
            break;
        }
        let mut choice: Option<(f64, usize)> = None;
        for (ci, &c) in candidates.iter().enumerate() {
            let norm = grads[ci].norm_l2();
            if norm == 0.0 {
                continue;
            }
            let gap = (logits.data()[c] as f64 - logits.data()[origin] as f64).abs();
            let dist = gap / norm;
            if choice.is_none_or(|(d, _)| dist < d) {
                choice = Some((dist, ci));
            }
        }
        let Some((_, ci)) = choice else { break };
        let c = candidates[ci];
        let w = &grads[ci];
        let gap = (logits.data()[c] as f64 - logits.data()[origin] as f64).abs();
        let step = gap / w.norm_l2().powi(2);
        for (r, &wv) in r_total.iter_mut().zip(w.data()) {
            *r += step * wv as f64;
        }
        targets.push(c);
        iterations += 1;
    }
    Ok(DeepFoolOutcome {
        delta: perturb(&r_total),
        iterations,
        targets,
        candidates,
    })
}
