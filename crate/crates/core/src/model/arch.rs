use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ConvGeometry;

/// One layer of a classifier. Residual blocks wrap a shape-preserving
/// sub-sequence and add its output back onto its input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv2d {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Relu,
    MaxPool {
        size: usize,
    },
    Flatten,
    Linear {
        out_features: usize,
    },
    Residual {
        layers: Vec<LayerSpec>,
    },
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureDescriptor {
    pub name: String,
    /// `[channels, height, width]`, or `[features]` for plain MLPs.
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
}

/// Shape of a parameter tensor together with its fan-in, in creation order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct ParamShape {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
    pub is_bias: bool,
}

impl ArchitectureDescriptor {
    /// Checks that consecutive layer shapes line up and that the network ends
    /// in a vector of `num_classes` logits.
    pub fn validate(&self) -> Result<()> {
        self.param_shapes().map(|_| ())
    }

    pub(crate) fn param_shapes(&self) -> Result<Vec<ParamShape>> {
        if self.num_classes < 2 {
            return Err(Error::invalid(format!(
                "architecture `{}` needs at least two classes",
                self.name
            )));
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::invalid(format!(
                "architecture `{}` has an empty input shape",
                self.name
            )));
        }
        let mut params = Vec::new();
        let out = walk(&self.layers, self.input_shape.clone(), &mut params, "")?;
        if out != [self.num_classes] {
            return Err(Error::ShapeMismatch {
                context: format!("output of architecture `{}`", self.name),
                expected: vec![self.num_classes],
                actual: out,
            });
        }
        Ok(params)
    }

    pub fn parameter_count(&self) -> Result<usize> {
        Ok(self
            .param_shapes()?
            .iter()
            .map(|p| p.shape.iter().product::<usize>())
            .sum())
    }
}

fn walk(
    layers: &[LayerSpec],
    mut shape: Vec<usize>,
    params: &mut Vec<ParamShape>,
    prefix: &str,
) -> Result<Vec<usize>> {
    for (i, layer) in layers.iter().enumerate() {
        let tag = format!("{prefix}{i}");
        shape = match layer {
            LayerSpec::Conv2d {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let [c, h, w] = shape[..] else {
                    return Err(layer_error(&tag, "conv2d needs a [C, H, W] input", &shape));
                };
                if *out_channels == 0 || *kernel == 0 || *stride == 0 {
                    return Err(layer_error(&tag, "conv2d sizes must be positive", &shape));
                }
                let geom = ConvGeometry {
                    kernel: *kernel,
                    stride: *stride,
                    padding: *padding,
                };
                let (Some(ho), Some(wo)) = (geom.output_extent(h), geom.output_extent(w)) else {
                    return Err(layer_error(&tag, "kernel larger than padded input", &shape));
                };
                params.push(ParamShape {
                    name: format!("layer{tag}.weight"),
                    shape: vec![*out_channels, c, *kernel, *kernel],
                    fan_in: c * kernel * kernel,
                    is_bias: false,
                });
                params.push(ParamShape {
                    name: format!("layer{tag}.bias"),
                    shape: vec![*out_channels],
                    fan_in: c * kernel * kernel,
                    is_bias: true,
                });
                vec![*out_channels, ho, wo]
            }
            LayerSpec::Relu => shape,
            LayerSpec::MaxPool { size } => {
                let [c, h, w] = shape[..] else {
                    return Err(layer_error(&tag, "max pool needs a [C, H, W] input", &shape));
                };
                if *size == 0 || h < *size || w < *size {
                    return Err(layer_error(&tag, "pool window larger than input", &shape));
                }
                vec![c, h / size, w / size]
            }
            LayerSpec::Flatten => vec![shape.iter().product()],
            LayerSpec::Linear { out_features } => {
                let [features] = shape[..] else {
                    return Err(layer_error(&tag, "linear needs a flat input", &shape));
                };
                if *out_features == 0 {
                    return Err(layer_error(&tag, "linear needs outputs", &shape));
                }
                params.push(ParamShape {
                    name: format!("layer{tag}.weight"),
                    shape: vec![*out_features, features],
                    fan_in: features,
                    is_bias: false,
                });
                params.push(ParamShape {
                    name: format!("layer{tag}.bias"),
                    shape: vec![*out_features],
                    fan_in: features,
                    is_bias: true,
                });
                vec![*out_features]
            }
            LayerSpec::Residual { layers } => {
                let inner = walk(layers, shape.clone(), params, &format!("{tag}."))?;
                if inner != shape {
                    return Err(Error::ShapeMismatch {
                        context: format!("residual block {tag}"),
                        expected: shape,
                        actual: inner,
                    });
                }
                inner
            }
        };
    }
    Ok(shape)
}

fn layer_error(tag: &str, msg: &str, shape: &[usize]) -> Error {
    Error::invalid(format!("layer {tag}: {msg} (input shape {shape:?})"))
}

/// The small architecture catalog used for model populations. All of them
/// take a `[channels, size, size]` image.
pub fn catalog(channels: usize, size: usize, num_classes: usize) -> Vec<ArchitectureDescriptor> {
    use LayerSpec::*;
    let conv = |out_channels, kernel, stride, padding| Conv2d {
        out_channels,
        kernel,
        stride,
        padding,
    };
    let input_shape = vec![channels, size, size];
    vec![
        ArchitectureDescriptor {
            name: "stride-cnn".into(),
            input_shape: input_shape.clone(),
            num_classes,
            layers: vec![
                conv(8, 5, 2, 2),
                Relu,
                conv(16, 3, 2, 1),
                Relu,
                Flatten,
                Linear { out_features: num_classes },
            ],
        },
        ArchitectureDescriptor {
            name: "pool-cnn".into(),
            input_shape: input_shape.clone(),
            num_classes,
            layers: vec![
                conv(6, 3, 1, 1),
                Relu,
                MaxPool { size: 2 },
                conv(12, 3, 1, 1),
                Relu,
                MaxPool { size: 2 },
                Flatten,
                Linear { out_features: num_classes },
            ],
        },
        ArchitectureDescriptor {
            name: "residual-cnn".into(),
            input_shape: input_shape.clone(),
            num_classes,
            layers: vec![
                conv(8, 4, 2, 1),
                Relu,
                Residual {
                    layers: vec![conv(8, 3, 1, 1), Relu],
                },
                MaxPool { size: 2 },
                Flatten,
                Linear { out_features: num_classes },
            ],
        },
        ArchitectureDescriptor {
            name: "mlp".into(),
            input_shape,
            num_classes,
            layers: vec![
                Flatten,
                Linear { out_features: 48 },
                Relu,
                Linear { out_features: num_classes },
            ],
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_entries_validate() {
        for arch in catalog(1, 32, 10) {
            arch.validate().unwrap();
        }
        for arch in catalog(3, 16, 5) {
            arch.validate().unwrap();
        }
    }

    #[test]
    fn inconsistent_layers_are_rejected() {
        let arch = ArchitectureDescriptor {
            name: "bad".into(),
            input_shape: vec![1, 8, 8],
            num_classes: 3,
            layers: vec![LayerSpec::Linear { out_features: 3 }],
        };
        assert!(arch.validate().is_err());
        let arch = ArchitectureDescriptor {
            name: "bad-out".into(),
            input_shape: vec![4],
            num_classes: 3,
            layers: vec![LayerSpec::Linear { out_features: 2 }],
        };
        assert!(matches!(arch.validate(), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn layer_json_is_tagged() {
        let json = r#"{"type":"conv2d","out_channels":4,"kernel":3,"padding":1}"#;
        let layer: LayerSpec = serde_json::from_str(json).unwrap();
        assert_eq!(
            layer,
            LayerSpec::Conv2d {
                out_channels: 4,
                kernel: 3,
                stride: 1,
                padding: 1
            }
        );
    }
}
