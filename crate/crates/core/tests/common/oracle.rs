//! Independent f64 reference implementations used as test oracles. Nothing
//! here calls into the library's numeric kernels.
#![allow(dead_code)]

use perturblab_core::model::{ArchitectureDescriptor, LayerSpec, Network};

#[derive(Clone, Debug)]
pub struct Value {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn params_f64(net: &Network) -> Vec<Vec<f64>> {
    net.params()
        .iter()
        .map(|p| p.data().iter().map(|&v| v as f64).collect())
        .collect()
}

/// Plain nested-loop forward pass in f64.
pub fn shadow_logits(arch: &ArchitectureDescriptor, params: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let mut next = 0;
    let v = Value {
        shape: arch.input_shape.clone(),
        data: x.to_vec(),
    };
    run(&arch.layers, params, &mut next, v).data
}

fn run(layers: &[LayerSpec], params: &[Vec<f64>], next: &mut usize, mut v: Value) -> Value {
    for layer in layers {
        v = match layer {
            LayerSpec::Conv2d {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let (w, b) = (&params[*next], &params[*next + 1]);
                *next += 2;
                let (c, h, wd) = (v.shape[0], v.shape[1], v.shape[2]);
                let (k, s, p) = (*kernel, *stride, *padding);
                let ho = (h + 2 * p - k) / s + 1;
                let wo = (wd + 2 * p - k) / s + 1;
                let mut out = vec![0.0; out_channels * ho * wo];
                for o in 0..*out_channels {
                    for y in 0..ho {
                        for xx in 0..wo {
                            let mut acc = b[o];
                            for ci in 0..c {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let iy = (y * s + ky) as isize - p as isize;
                                        let ix = (xx * s + kx) as isize - p as isize;
                                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                            continue;
                                        }
                                        let wi = ((o * c + ci) * k + ky) * k + kx;
                                        let xi = (ci * h + iy as usize) * wd + ix as usize;
                                        acc += w[wi] * v.data[xi];
                                    }
                                }
                            }
                            out[(o * ho + y) * wo + xx] = acc;
                        }
                    }
                }
                Value {
                    shape: vec![*out_channels, ho, wo],
                    data: out,
                }
            }
            LayerSpec::Relu => Value {
                data: v.data.iter().map(|&e| e.max(0.0)).collect(),
                shape: v.shape,
            },
            LayerSpec::MaxPool { size } => {
                let (c, h, w) = (v.shape[0], v.shape[1], v.shape[2]);
                let (ho, wo) = (h / size, w / size);
                let mut out = vec![f64::NEG_INFINITY; c * ho * wo];
                for ch in 0..c {
                    for y in 0..ho * size {
                        for x in 0..wo * size {
                            let o = (ch * ho + y / size) * wo + x / size;
                            out[o] = out[o].max(v.data[(ch * h + y) * w + x]);
                        }
                    }
                }
                Value {
                    shape: vec![c, ho, wo],
                    data: out,
                }
            }
            LayerSpec::Flatten => Value {
                shape: vec![v.data.len()],
                data: v.data,
            },
            LayerSpec::Linear { out_features } => {
                let (w, b) = (&params[*next], &params[*next + 1]);
                *next += 2;
                let n = v.data.len();
                let out = (0..*out_features)
                    .map(|o| b[o] + (0..n).map(|i| w[o * n + i] * v.data[i]).sum::<f64>())
                    .collect();
                Value {
                    shape: vec![*out_features],
                    data: out,
                }
            }
            LayerSpec::Residual { layers } => {
                let inner = run(layers, params, next, v.clone());
                Value {
                    data: v.data.iter().zip(&inner.data).map(|(a, b)| a + b).collect(),
                    shape: v.shape,
                }
            }
        };
    }
    v
}

pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Central finite differences of `f` at `x`, in f64.
pub fn central_differences(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Small architectures covering every layer kind.
pub fn small_architectures(classes: usize) -> Vec<ArchitectureDescriptor> {
    use LayerSpec::*;
    let arch = |name: &str, input: Vec<usize>, layers| ArchitectureDescriptor {
        name: name.into(),
        input_shape: input,
        num_classes: classes,
        layers,
    };
    vec![
        arch(
            "conv-pool",
            vec![2, 6, 6],
            vec![
                Conv2d { out_channels: 3, kernel: 3, stride: 1, padding: 1 },
                Relu,
                MaxPool { size: 2 },
                Flatten,
                Linear { out_features: classes },
            ],
        ),
        arch(
            "strided",
            vec![1, 7, 7],
            vec![
                Conv2d { out_channels: 4, kernel: 3, stride: 2, padding: 1 },
                Relu,
                Flatten,
                Linear { out_features: 6 },
                Relu,
                Linear { out_features: classes },
            ],
        ),
        arch(
            "residual",
            vec![1, 6, 6],
            vec![
                Conv2d { out_channels: 2, kernel: 2, stride: 2, padding: 0 },
                Residual {
                    layers: vec![Conv2d { out_channels: 2, kernel: 3, stride: 1, padding: 1 }, Relu],
                },
                Flatten,
                Linear { out_features: classes },
            ],
        ),
        arch(
            "mlp",
            vec![10],
            vec![Linear { out_features: 8 }, Relu, Linear { out_features: classes }],
        ),
    ]
}

/// Fraction of significant coordinates (|fd| above `floor` times the largest
/// magnitude) where analytic and numeric gradients agree within `rel`.
pub fn agreement(analytic: &[f64], numeric: &[f64], rel: f64, floor: f64) -> (usize, usize) {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut good = 0;
    let mut total = 0;
    for (a, n) in analytic.iter().zip(numeric) {
        if n.abs() <= floor * scale {
            continue;
        }
        total += 1;
        if (a - n).abs() <= rel * n.abs() {
            good += 1;
        }
    }
    (good, total)
}
