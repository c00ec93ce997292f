use crate::error::{Error, Result};
use crate::graph::{ConvGeometry, NodeId, ParamGrads, Tape};
use crate::model::arch::{ArchitectureDescriptor, LayerSpec};
use crate::seed::Gaussian;
use crate::tensor::Tensor;

/// Parameters of a feed-forward classifier bound to its architecture.
/// Immutable once built; every forward pass records into a private tape.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    arch: ArchitectureDescriptor,
    names: Vec<String>,
    params: Vec<Tensor>,
}

impl Network {
    /// He-normal weights and zero biases drawn from `seed`.
    pub fn init(arch: ArchitectureDescriptor, seed: u64) -> Result<Self> {
        let shapes = arch.param_shapes()?;
        let mut gauss = Gaussian::new(seed);
        let mut names = Vec::with_capacity(shapes.len());
        let mut params = Vec::with_capacity(shapes.len());
        for p in shapes {
            let std = (2.0 / p.fan_in as f64).sqrt();
            let t = if p.is_bias {
                Tensor::zeros(&p.shape)
            } else {
                Tensor::from_fn(&p.shape, |_| (gauss.next_standard() * std) as f32)
            };
            names.push(p.name);
            params.push(t);
        }
        Ok(Self {
            arch,
            names,
            params,
        })
    }

    pub fn from_params(arch: ArchitectureDescriptor, params: Vec<Tensor>) -> Result<Self> {
        let shapes = arch.param_shapes()?;
        if shapes.len() != params.len() {
            return Err(Error::invalid(format!(
                "architecture `{}` has {} parameter tensors, got {}",
                arch.name,
                shapes.len(),
                params.len()
            )));
        }
        for (s, p) in shapes.iter().zip(&params) {
            p.ensure_shape(&s.shape, &s.name)?;
            if !p.is_finite() {
                return Err(Error::NonFinite(format!("parameter {}", s.name)));
            }
        }
        Ok(Self {
            names: shapes.into_iter().map(|s| s.name).collect(),
            arch,
            params,
        })
    }

    /// An affine classifier `flatten(x) -> W x + b`.
    pub fn affine(input_shape: &[usize], weight: Tensor, bias: Tensor) -> Result<Self> {
        let classes = bias.len();
        let mut layers = Vec::new();
        if input_shape.len() > 1 {
            layers.push(LayerSpec::Flatten);
        }
        layers.push(LayerSpec::Linear {
            out_features: classes,
        });
        let arch = ArchitectureDescriptor {
            name: "affine".into(),
            input_shape: input_shape.to_vec(),
            num_classes: classes,
            layers,
        };
        let features: usize = input_shape.iter().product();
        let weight = weight.reshape(&[classes, features])?;
        Self::from_params(arch, vec![weight, bias])
    }

    pub fn architecture(&self) -> &ArchitectureDescriptor {
        &self.arch
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.arch.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    /// Records a forward pass; returns the tape and the logits node.
    pub fn record(&self, x: &Tensor) -> Result<(Tape<'_>, NodeId)> {
        x.ensure_shape(&self.arch.input_shape, "model input")?;
        let mut tape = Tape::new(&self.params);
        let input = tape.input(x.clone());
        let mut next_param = 0;
        let out = emit(&self.arch.layers, &mut tape, input, &mut next_param)?;
        Ok((tape, out))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (tape, out) = self.record(x)?;
        let logits = tape.value(out).clone();
        if !logits.is_finite() {
            return Err(Error::NonFinite("logits".into()));
        }
        Ok(logits)
    }

    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(self.forward(x)?.argmax())
    }

    /// Accumulates parameter gradients of `upstream . logits` into `grads`
    /// and returns the logits.
    pub fn accumulate_param_grads(
        &self,
        x: &Tensor,
        upstream: impl FnOnce(&[f32]) -> Vec<f32>,
        grads: &mut ParamGrads,
    ) -> Result<Tensor> {
        let (tape, out) = self.record(x)?;
        let logits = tape.value(out).clone();
        let seed = upstream(logits.data());
        tape.backward(out, &seed, Some(grads))?;
        Ok(logits)
    }
}

fn emit(
    layers: &[LayerSpec],
    tape: &mut Tape<'_>,
    mut node: NodeId,
    next_param: &mut usize,
) -> Result<NodeId> {
    for layer in layers {
        node = match layer {
            LayerSpec::Conv2d {
                kernel,
                stride,
                padding,
                ..
            } => {
                let w = *next_param;
                *next_param += 2;
                let geom = ConvGeometry {
                    kernel: *kernel,
                    stride: *stride,
                    padding: *padding,
                };
                tape.conv2d(node, w, w + 1, geom)?
            }
            LayerSpec::Relu => tape.relu(node),
            LayerSpec::MaxPool { size } => tape.max_pool(node, *size)?,
            LayerSpec::Flatten => tape.flatten(node),
            LayerSpec::Linear { .. } => {
                let w = *next_param;
                *next_param += 2;
                tape.linear(node, w, w + 1)?
            }
            LayerSpec::Residual { layers } => {
                let inner = emit(layers, tape, node, next_param)?;
                tape.add(node, inner)?
            }
        };
    }
    Ok(node)
}
