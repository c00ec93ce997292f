use crate::attack::{Goal, OnePixelParams};
use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::seed::{below, rng, uniform, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct OnePixelOutcome {
    pub delta: Tensor,
    /// Flattened genome of the best member: `(row, col, v_0 .. v_{C-1})` per pixel.
    pub best: Vec<f32>,
    pub best_fitness: f64,
    /// Every member of every generation, for constraint checks.
    pub history: Option<Vec<Vec<Vec<f32>>>>,
}

/// Writes the genome's pixels into a copy of `x` (later pixels win on
/// collisions) and returns the dense difference.
pub fn apply_pixels(x: &Tensor, genome: &[f32]) -> Result<Tensor> {
    let [c, h, w] = x.shape()[..] else {
        return Err(Error::invalid("one-pixel attack needs a [C, H, W] image"));
    };
    let gene = 2 + c;
    let mut delta = Tensor::zeros(x.shape());
    for px in genome.chunks_exact(gene) {
        let (row, col) = (px[0] as usize, px[1] as usize);
        if row >= h || col >= w {
            return Err(Error::invalid("pixel position out of bounds"));
        }
        for ch in 0..c {
            let idx = (ch * h + row) * w + col;
            delta.data_mut()[idx] = px[2 + ch] - x.data()[idx];
        }
    }
    Ok(delta)
}

struct Space<'a> {
    h: usize,
    w: usize,
    c: usize,
    params: &'a OnePixelParams,
}

impl Space<'_> {
    fn gene(&self) -> usize {
        2 + self.c
    }

    fn project(&self, genome: &mut [f32]) {
        let (lo, hi) = self.params.value_range;
        for px in genome.chunks_exact_mut(self.gene()) {
            px[0] = px[0].round().clamp(0.0, (self.h - 1) as f32);
            px[1] = px[1].round().clamp(0.0, (self.w - 1) as f32);
            for v in &mut px[2..] {
                *v = v.clamp(lo, hi);
                if let Some(levels) = &self.params.value_levels {
                    *v = nearest(levels, *v);
                }
            }
        }
    }

    fn random(&self, r: &mut Rng) -> Vec<f32> {
        let (lo, hi) = self.params.value_range;
        let mut genome = Vec::with_capacity(self.params.pixels * self.gene());
        for _ in 0..self.params.pixels {
            genome.push(below(r, self.h) as f32);
            genome.push(below(r, self.w) as f32);
            for _ in 0..self.c {
                genome.push(match &self.params.value_levels {
                    Some(levels) => levels[below(r, levels.len())],
                    None => lo + (hi - lo) * uniform(r) as f32,
                });
            }
        }
        self.project(&mut genome);
        genome
    }
}

fn nearest(levels: &[f32], v: f32) -> f32 {
    let mut best = levels[0];
    for &l in &levels[1..] {
        if (l - v).abs() < (best - v).abs() {
            best = l;
        }
    }
    best
}

fn fitness(model: &dyn Classifier, x: &Tensor, goal: Goal, genome: &[f32]) -> Result<f64> {
    let delta = apply_pixels(x, genome)?;
    goal.search_loss(model.logits(&x.add(&delta)?)?.data())
}

/// DE/rand/1/bin over pixel tuples; fitness is the search loss of the
/// modified image (lower is better). Trials replace their parent when not
/// worse.
pub fn one_pixel_attack(
    model: &dyn Classifier,
    x: &Tensor,
    goal: Goal,
    params: &OnePixelParams,
    seed: u64,
) -> Result<OnePixelOutcome> {
    run(model, x, goal, params, seed, false)
}

pub(crate) fn run(
    model: &dyn Classifier,
    x: &Tensor,
    goal: Goal,
    params: &OnePixelParams,
    seed: u64,
    keep_history: bool,
) -> Result<OnePixelOutcome> {
    let [c, h, w] = x.shape()[..] else {
        return Err(Error::invalid("one-pixel attack needs a [C, H, W] image"));
    };
    if params.population < 4 {
        return Err(Error::invalid(
            "differential evolution needs a population of at least 4",
        ));
    }
    let space = Space { h, w, c, params };
    let mut r = rng(seed);
    let np = params.population;
    let mut pop: Vec<Vec<f32>> = (0..np).map(|_| space.random(&mut r)).collect();
    let mut fit = pop
        .iter()
        .map(|g| fitness(model, x, goal, g))
        .collect::<Result<Vec<_>>>()?;
    let mut history = keep_history.then(|| vec![pop.clone()]);
    let dims = pop[0].len();

    for _ in 0..params.generations {
        for i in 0..np {
            let a = pick(&mut r, np, &[i]);
            let b = pick(&mut r, np, &[i, a]);
            let d = pick(&mut r, np, &[i, a, b]);
            let forced = below(&mut r, dims);
            let mut trial = pop[i].clone();
            for j in 0..dims {
                if j == forced || (uniform(&mut r) as f32) < params.crossover {
                    trial[j] = pop[a][j] + params.mutation * (pop[b][j] - pop[d][j]);
                }
            }
            space.project(&mut trial);
            let f = fitness(model, x, goal, &trial)?;
            if f <= fit[i] {
                pop[i] = trial;
                fit[i] = f;
            }
        }
        if let Some(hist) = history.as_mut() {
            hist.push(pop.clone());
        }
    }
    let mut best = 0;
    for i in 1..np {
        if fit[i] < fit[best] {
            best = i;
        }
    }
    Ok(OnePixelOutcome {
        delta: apply_pixels(x, &pop[best])?,
        best: pop[best].clone(),
        best_fitness: fit[best],
        history,
    })
}

fn pick(r: &mut Rng, n: usize, exclude: &[usize]) -> usize {
    loop {
        let v = below(r, n);
        if !exclude.contains(&v) {
            return v;
        }
    }
}

/// Variant that records every generation, for constraint checks in tests.
pub fn one_pixel_attack_with_history(
    model: &dyn Classifier,
    x: &Tensor,
    goal: Goal,
    params: &OnePixelParams,
    seed: u64,
) -> Result<OnePixelOutcome> {
    run(model, x, goal, params, seed, true)
}
