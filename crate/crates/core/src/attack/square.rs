use crate::attack::{Goal, SquareParams};
use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::seed::{below, rng};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct SquareOutcome {
    pub delta: Tensor,
    /// Best loss after each iteration (index 0 is the zero perturbation).
    pub loss_history: Vec<f64>,
    pub accepted: usize,
}

/// Fraction of pixels a square covers at a given iteration; halves at the
/// usual checkpoints, rescaled to the iteration budget.
fn square_fraction(p_init: f32, iteration: usize, budget: usize) -> f64 {
    let it = (iteration as f64 / budget.max(1) as f64 * 10_000.0) as usize;
    let div = match it {
        0..=10 => 1.0,
        11..=50 => 2.0,
        51..=200 => 4.0,
        201..=500 => 8.0,
        501..=1000 => 16.0,
        1001..=2000 => 32.0,
        2001..=4000 => 64.0,
        4001..=6000 => 128.0,
        6001..=8000 => 256.0,
        _ => 512.0,
    };
    p_init as f64 / div
}

/// Random search over axis-aligned squares filled with per-channel `+-eps`.
/// The perturbation starts at zero; a candidate replaces the incumbent only
/// if it strictly lowers the attack loss.
pub fn square_attack(
    model: &dyn Classifier,
    x: &Tensor,
    goal: Goal,
    params: &SquareParams,
    seed: u64,
) -> Result<SquareOutcome> {
    let [c, h, w] = x.shape()[..] else {
        return Err(Error::invalid("square attack needs a [C, H, W] image"));
    };
    let eps = params.epsilon;
    let mut r = rng(seed);
    let mut delta = Tensor::zeros(x.shape());
    let mut best = goal.search_loss(model.logits(x)?.data())?;
    let mut history = Vec::with_capacity(params.iterations + 1);
    history.push(best);
    let mut accepted = 0;

    for it in 0..params.iterations {
        let p = square_fraction(params.p_init, it, params.iterations);
        let side = ((p * (h * w) as f64).sqrt().round() as usize)
            .max(1)
            .min(h.saturating_sub(1).max(1))
            .min(w.saturating_sub(1).max(1));
        let mut candidate = delta.clone();
        // Resample until the window actually changes (bounded retries).
        for _attempt in 0..16 {
            let top = below(&mut r, h - side + 1);
            let left = below(&mut r, w - side + 1);
            let mut changed = false;
            for ch in 0..c {
                let value = if below(&mut r, 2) == 0 { -eps } else { eps };
                for y in top..top + side {
                    for xx in left..left + side {
                        let idx = (ch * h + y) * w + xx;
                        if candidate.data()[idx] != value {
                            changed = true;
                        }
                        candidate.data_mut()[idx] = value;
                    }
                }
            }
            if changed {
                break;
            }
        }
        let loss = goal.search_loss(model.logits(&x.add(&candidate)?)?.data())?;
        if loss < best {
            best = loss;
            delta = candidate;
            accepted += 1;
        }
        history.push(best);
    }
    Ok(SquareOutcome {
        delta,
        loss_history: history,
        accepted,
    })
}
