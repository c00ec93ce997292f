//! Reverse-mode differentiation over a recorded tape of layer operations.
//!
//! Nodes are appended in evaluation order, which is a topological order of
//! the (acyclic) graph; the backward sweep walks the tape once in reverse.
//! A recorded tape can be pulled back any number of times with different
//! upstream gradients.

use crate::error::{Error, Result};
use crate::tensor::{axpy_f64, dot, Tensor};

pub type NodeId = usize;
pub type ParamId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn output_extent(&self, extent: usize) -> Option<usize> {
        let padded = extent + 2 * self.padding;
        if padded < self.kernel || self.stride == 0 {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }
}

#[derive(Debug)]
pub(crate) enum Op {
    Input,
    Linear {
        x: NodeId,
        weight: ParamId,
        bias: ParamId,
    },
    Conv2d {
        x: NodeId,
        weight: ParamId,
        bias: ParamId,
        geom: ConvGeometry,
        /// im2col matrix, one row of `C*k*k` entries per output position.
        cols: Vec<f32>,
    },
    Relu {
        x: NodeId,
    },
    MaxPool {
        x: NodeId,
        /// Flat input index selected for every output element.
        argmax: Vec<u32>,
    },
    Flatten {
        x: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
}

#[derive(Debug)]
pub(crate) struct Node {
    op: Op,
    value: Tensor,
}

/// Parameter gradients accumulated in 64-bit, one buffer per parameter tensor.
#[derive(Clone, Debug)]
pub struct ParamGrads {
    pub buffers: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(params: &[Tensor]) -> Self {
        Self {
            buffers: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn clear(&mut self) {
        for b in &mut self.buffers {
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// A forward evaluation recorded for later pullback.
pub struct Tape<'p> {
    params: &'p [Tensor],
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Tensor]) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, x: Tensor) -> NodeId {
        self.push(Op::Input, x)
    }

    pub fn linear(&mut self, x: NodeId, weight: ParamId, bias: ParamId) -> Result<NodeId> {
        let input = &self.nodes[x].value;
        let w = &self.params[weight];
        let b = &self.params[bias];
        let (outs, ins) = (w.shape()[0], w.shape()[1]);
        input.ensure_shape(&[ins], "linear input")?;
        let xd = input.data();
        let wd = w.data();
        let out: Vec<f32> = (0..outs)
            .map(|o| (b.data()[o] as f64 + dot(&wd[o * ins..(o + 1) * ins], xd)) as f32)
            .collect();
        Ok(self.push(
            Op::Linear { x, weight, bias },
            Tensor::from_vec(out),
        ))
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        weight: ParamId,
        bias: ParamId,
        geom: ConvGeometry,
    ) -> Result<NodeId> {
        let input = &self.nodes[x].value;
        let w = &self.params[weight];
        let b = &self.params[bias];
        let [outs, chans, k, _] = w.shape() else {
            return Err(Error::invalid("conv weight must be rank 4"));
        };
        let (outs, chans, k) = (*outs, *chans, *k);
        if input.shape().len() != 3 || input.shape()[0] != chans {
            return Err(Error::ShapeMismatch {
                context: "conv2d input".into(),
                expected: vec![chans, 0, 0],
                actual: input.shape().to_vec(),
            });
        }
        let (h, wd) = (input.shape()[1], input.shape()[2]);
        let (Some(ho), Some(wo)) = (geom.output_extent(h), geom.output_extent(wd)) else {
            return Err(Error::invalid("conv kernel larger than padded input"));
        };
        let q = chans * k * k;
        let positions = ho * wo;
        let mut cols = vec![0.0f32; positions * q];
        let xd = input.data();
        for oy in 0..ho {
            for ox in 0..wo {
                let row = &mut cols[(oy * wo + ox) * q..(oy * wo + ox + 1) * q];
                let mut idx = 0;
                for c in 0..chans {
                    for ky in 0..k {
                        let iy = (oy * geom.stride + ky) as isize - geom.padding as isize;
                        for kx in 0..k {
                            let ix = (ox * geom.stride + kx) as isize - geom.padding as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                row[idx] = xd[(c * h + iy as usize) * wd + ix as usize];
                            }
                            idx += 1;
                        }
                    }
                }
            }
        }
        let wdat = w.data();
        let mut out = vec![0.0f32; outs * positions];
        for o in 0..outs {
            let wrow = &wdat[o * q..(o + 1) * q];
            let bias_o = b.data()[o] as f64;
            for p in 0..positions {
                out[o * positions + p] = (bias_o + dot(wrow, &cols[p * q..(p + 1) * q])) as f32;
            }
        }
        let value = Tensor::new(vec![outs, ho, wo], out)?;
        Ok(self.push(
            Op::Conv2d {
                x,
                weight,
                bias,
                geom,
                cols,
            },
            value,
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x].value.map(|v| v.max(0.0));
        self.push(Op::Relu { x }, value)
    }

    /// Non-overlapping `size x size` max pooling; ties resolve to the first
    /// maximal element in scan order.
    pub fn max_pool(&mut self, x: NodeId, size: usize) -> Result<NodeId> {
        let input = &self.nodes[x].value;
        if input.shape().len() != 3 || size == 0 {
            return Err(Error::invalid("max pool expects a [C, H, W] input"));
        }
        let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (ho, wo) = (h / size, w / size);
        if ho == 0 || wo == 0 {
            return Err(Error::invalid("max pool window larger than input"));
        }
        let xd = input.data();
        let mut out = Vec::with_capacity(c * ho * wo);
        let mut argmax = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best_idx = (ch * h + oy * size) * w + ox * size;
                    let mut best = xd[best_idx];
                    for dy in 0..size {
                        for dx in 0..size {
                            let idx = (ch * h + oy * size + dy) * w + ox * size + dx;
                            if xd[idx] > best {
                                best = xd[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx as u32);
                }
            }
        }
        let value = Tensor::new(vec![c, ho, wo], out)?;
        Ok(self.push(Op::MaxPool { x, argmax }, value))
    }

    pub fn flatten(&mut self, x: NodeId) -> NodeId {
        let v = &self.nodes[x].value;
        let value = Tensor::from_vec(v.data().to_vec());
        self.push(Op::Flatten { x }, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.nodes[a].value.add(&self.nodes[b].value)?;
        Ok(self.push(Op::Add { a, b }, value))
    }

    /// Pulls `upstream` (the gradient w.r.t. node `output`) back through the
    /// tape. Returns the gradient w.r.t. the input node and, when `param_grads`
    /// is given, accumulates parameter gradients into it.
    pub fn backward(
        &self,
        output: NodeId,
        upstream: &[f32],
        mut param_grads: Option<&mut ParamGrads>,
    ) -> Result<Tensor> {
        let out_value = &self.nodes[output].value;
        if upstream.len() != out_value.len() {
            return Err(Error::ShapeMismatch {
                context: "upstream gradient".into(),
                expected: out_value.shape().to_vec(),
                actual: vec![upstream.len()],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output] = Some(upstream.iter().map(|&v| v as f64).collect());

        for id in (0..=output).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Input => {
                    let data = g.iter().map(|&v| v as f32).collect();
                    return Tensor::new(node.value.shape().to_vec(), data);
                }
                Op::Linear { x, weight, bias } => {
                    let w = &self.params[*weight];
                    let ins = w.shape()[1];
                    let mut dx = vec![0.0f64; ins];
                    for (o, &go) in g.iter().enumerate() {
                        if go != 0.0 {
                            axpy_f64(&mut dx, go, &w.data()[o * ins..(o + 1) * ins]);
                        }
                    }
                    if let Some(pg) = param_grads.as_deref_mut() {
                        let xin = self.nodes[*x].value.data();
                        let (wb, bb) = two_buffers(&mut pg.buffers, *weight, *bias);
                        for (o, &go) in g.iter().enumerate() {
                            axpy_f64(&mut wb[o * ins..(o + 1) * ins], go, xin);
                            bb[o] += go;
                        }
                    }
                    accumulate(&mut grads[*x], dx);
                }
                Op::Conv2d {
                    x,
                    weight,
                    bias,
                    geom,
                    cols,
                } => {
                    let w = &self.params[*weight];
                    let (outs, chans, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
                    let q = chans * k * k;
                    let xshape = self.nodes[*x].value.shape();
                    let (h, wd) = (xshape[1], xshape[2]);
                    let (ho, wo) = (node.value.shape()[1], node.value.shape()[2]);
                    let positions = ho * wo;
                    let wdat = w.data();

                    let mut dcols = vec![0.0f64; positions * q];
                    for o in 0..outs {
                        let wrow = &wdat[o * q..(o + 1) * q];
                        for p in 0..positions {
                            let gp = g[o * positions + p];
                            if gp != 0.0 {
                                axpy_f64(&mut dcols[p * q..(p + 1) * q], gp, wrow);
                            }
                        }
                    }
                    let mut dx = vec![0.0f64; chans * h * wd];
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let row = &dcols[(oy * wo + ox) * q..(oy * wo + ox + 1) * q];
                            let mut idx = 0;
                            for c in 0..chans {
                                for ky in 0..k {
                                    let iy = (oy * geom.stride + ky) as isize
                                        - geom.padding as isize;
                                    for kx in 0..k {
                                        let ix = (ox * geom.stride + kx) as isize
                                            - geom.padding as isize;
                                        if iy >= 0
                                            && ix >= 0
                                            && (iy as usize) < h
                                            && (ix as usize) < wd
                                        {
                                            dx[(c * h + iy as usize) * wd + ix as usize] +=
                                                row[idx];
                                        }
                                        idx += 1;
                                    }
                                }
                            }
                        }
                    }
                    if let Some(pg) = param_grads.as_deref_mut() {
                        let (wb, bb) = two_buffers(&mut pg.buffers, *weight, *bias);
                        for o in 0..outs {
                            let wrow = &mut wb[o * q..(o + 1) * q];
                            for p in 0..positions {
                                let gp = g[o * positions + p];
                                if gp != 0.0 {
                                    axpy_f64(wrow, gp, &cols[p * q..(p + 1) * q]);
                                    bb[o] += gp;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads[*x], dx);
                }
                Op::Relu { x } => {
                    let xin = self.nodes[*x].value.data();
                    let dx = g
                        .iter()
                        .zip(xin)
                        .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[*x], dx);
                }
                Op::MaxPool { x, argmax } => {
                    let mut dx = vec![0.0f64; self.nodes[*x].value.len()];
                    for (&src, &gv) in argmax.iter().zip(&g) {
                        dx[src as usize] += gv;
                    }
                    accumulate(&mut grads[*x], dx);
                }
                Op::Flatten { x } => accumulate(&mut grads[*x], g),
                Op::Add { a, b } => {
                    accumulate(&mut grads[*b], g.clone());
                    accumulate(&mut grads[*a], g);
                }
            }
        }
        Err(Error::Invariant("tape has no input node".into()))
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(existing) => existing.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

fn two_buffers(buffers: &mut [Vec<f64>], a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    assert!(a < b, "weight buffer must precede its bias");
    let (lo, hi) = buffers.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_pool_ties_route_to_first_in_scan_order() {
        let params: Vec<Tensor> = Vec::new();
        let mut tape = Tape::new(&params);
        let x = tape.input(Tensor::new(vec![1, 2, 2], vec![1.0, 1.0, 1.0, 1.0]).unwrap());
        let y = tape.max_pool(x, 2).unwrap();
        let g = tape.backward(y, &[1.0], None).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn add_accumulates_both_branches() {
        let params: Vec<Tensor> = Vec::new();
        let mut tape = Tape::new(&params);
        let x = tape.input(Tensor::from_vec(vec![-1.0, 2.0]));
        let r = tape.relu(x);
        let s = tape.add(x, r).unwrap();
        let g = tape.backward(s, &[1.0, 1.0], None).unwrap();
        assert_eq!(g.data(), &[1.0, 2.0]);
    }

    #[test]
    fn conv_geometry_extents() {
        let g = ConvGeometry {
            kernel: 3,
            stride: 2,
            padding: 1,
        };
        assert_eq!(g.output_extent(32), Some(16));
        assert_eq!(g.output_extent(1), Some(1));
    }
}
