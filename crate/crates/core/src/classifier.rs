use crate::error::{Error, Result};
use crate::loss::LossSpec;
use crate::model::Network;
use crate::tensor::Tensor;

/// Upstream-gradient generator: receives the logits of one forward pass and
/// returns one logit-space cotangent per requested input gradient.
pub type SeedFn<'s> = dyn FnMut(&[f32]) -> Result<Vec<Vec<f32>>> + 's;

/// A differentiable classifier as seen by attacks and evaluations.
pub trait Classifier: Sync {
    fn input_shape(&self) -> &[usize];

    fn num_classes(&self) -> usize;

    fn logits(&self, x: &Tensor) -> Result<Tensor>;

    /// One forward pass followed by one backward pass per seed.
    fn pullback(&self, x: &Tensor, seeds: &mut SeedFn<'_>) -> Result<(Tensor, Vec<Tensor>)>;

    fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(self.logits(x)?.argmax())
    }
}

impl Classifier for Network {
    fn input_shape(&self) -> &[usize] {
        Network::input_shape(self)
    }

    fn num_classes(&self) -> usize {
        Network::num_classes(self)
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x)
    }

    fn pullback(&self, x: &Tensor, seeds: &mut SeedFn<'_>) -> Result<(Tensor, Vec<Tensor>)> {
        let (tape, out) = self.record(x)?;
        let logits = tape.value(out).clone();
        if !logits.is_finite() {
            return Err(Error::NonFinite("logits".into()));
        }
        let grads = seeds(logits.data())?
            .iter()
            .map(|seed| tape.backward(out, seed, None))
            .collect::<Result<Vec<_>>>()?;
        Ok((logits, grads))
    }
}

impl<C: Classifier + ?Sized> Classifier for &C {
    fn input_shape(&self) -> &[usize] {
        (**self).input_shape()
    }
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }
    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        (**self).logits(x)
    }
    fn pullback(&self, x: &Tensor, seeds: &mut SeedFn<'_>) -> Result<(Tensor, Vec<Tensor>)> {
        (**self).pullback(x, seeds)
    }
}

/// A classifier whose logits are shifted by a constant vector. The shift
/// leaves input gradients unchanged but moves every logit read.
pub struct Shifted<'a> {
    inner: &'a dyn Classifier,
    offset: Vec<f32>,
}

impl<'a> Shifted<'a> {
    pub fn new(inner: &'a dyn Classifier, offset: Vec<f32>) -> Result<Self> {
        if offset.len() != inner.num_classes() {
            return Err(Error::ShapeMismatch {
                context: "logit offset".into(),
                expected: vec![inner.num_classes()],
                actual: vec![offset.len()],
            });
        }
        Ok(Self { inner, offset })
    }

    fn shift(&self, logits: Tensor) -> Tensor {
        let data = logits
            .data()
            .iter()
            .zip(&self.offset)
            .map(|(z, o)| z + o)
            .collect();
        Tensor::from_vec(data)
    }
}

impl Classifier for Shifted<'_> {
    fn input_shape(&self) -> &[usize] {
        self.inner.input_shape()
    }
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }
    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.shift(self.inner.logits(x)?))
    }
    fn pullback(&self, x: &Tensor, seeds: &mut SeedFn<'_>) -> Result<(Tensor, Vec<Tensor>)> {
        let offset = &self.offset;
        let mut shifted_seeds = |raw: &[f32]| {
            let shifted: Vec<f32> = raw.iter().zip(offset).map(|(z, o)| z + o).collect();
            seeds(&shifted)
        };
        let (logits, grads) = self.inner.pullback(x, &mut shifted_seeds)?;
        Ok((self.shift(logits), grads))
    }
}

#[derive(Clone, Debug)]
pub struct InputGradient {
    pub logits: Tensor,
    pub loss: f64,
    pub grad: Tensor,
}

/// Gradient of `loss(logits(x))` with respect to the input `x`.
pub fn input_gradient(
    model: &dyn Classifier,
    x: &Tensor,
    loss: &LossSpec,
) -> Result<InputGradient> {
    let mut value = 0.0;
    let (logits, mut grads) = model.pullback(x, &mut |logits| {
        let (v, g) = loss.value_and_grad(logits)?;
        value = v;
        Ok(vec![g])
    })?;
    let grad = grads.pop().expect("one seed requested");
    if !grad.is_finite() {
        return Err(Error::NonFinite("input gradient".into()));
    }
    Ok(InputGradient {
        logits,
        loss: value,
        grad,
    })
}
