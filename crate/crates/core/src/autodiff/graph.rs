//! Tape-style computation record with reverse-mode differentiation.
//!
//! A [`Graph`] is built by one forward pass: leaves are registered with
//! [`Graph::constant`] or [`Graph::param`], every op appends a node whose
//! inputs already exist, so node order is a topological order. A single call
//! to [`Graph::backward`] walks the nodes in reverse and returns gradients for
//! every named parameter. The record is consumed by that call.

use std::collections::BTreeMap;

use super::kernels::{col2im, gemm, im2col, ConvGeometry, Strides};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Gradients keyed by parameter name.
pub type Gradients = BTreeMap<String, Tensor>;

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Conv2d {
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
        geometry: ConvGeometry,
        // im2col of the input, kept only when the kernels need a gradient
        cols: Option<Vec<f64>>,
    },
    ConcatChannels(NodeId, NodeId),
    Silu(NodeId),
    SpatialMean(NodeId),
    BroadcastChannels(NodeId),
    Linear {
        weight: NodeId,
        input: NodeId,
        bias: NodeId,
    },
    Mean(NodeId),
    Mse(NodeId, NodeId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, NodeId>,
    consumed: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Consumes the graph and returns the value of one node.
    pub fn into_value(mut self, id: NodeId) -> Tensor {
        std::mem::replace(&mut self.nodes[id.0].value, Tensor::scalar(0.0))
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// A named leaf whose gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Result<NodeId> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("parameter `{name}` registered twice")));
        }
        let id = self.push(value, Op::Leaf, true);
        self.params.insert(name, id);
        Ok(id)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn check_open(&self) -> Result<()> {
        if self.consumed {
            Err(Error::StaleRecord)
        } else {
            Ok(())
        }
    }

    fn emit(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        value.check_finite(name)?;
        let needs_grad = inputs.iter().any(|&i| self.needs(i));
        Ok(self.push(value, op, needs_grad))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_open()?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y).map_err(|_| {
            Error::shape(
                "add",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            )
        })?;
        self.emit("add", v, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_open()?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y).map_err(|_| {
            Error::shape(
                "mul",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            )
        })?;
        self.emit("mul", v, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        self.check_open()?;
        let v = self.value(a).map(|x| x * factor);
        self.emit("scale", v, Op::Scale(a, factor), &[a])
    }

    /// Same-padded, stride-1 convolution of `input[C_in,H,W]` with
    /// `kernels[C_out,C_in,kH,kW]` plus `bias[C_out]`.
    pub fn conv2d(&mut self, input: NodeId, kernels: NodeId, bias: NodeId) -> Result<NodeId> {
        self.check_open()?;
        let (xs, ks, bs) = (
            self.value(input).shape(),
            self.value(kernels).shape(),
            self.value(bias).shape(),
        );
        let &[c_in, h, w] = xs else {
            return Err(Error::shape("conv2d", format!("input must be [C,H,W], got {xs:?}")));
        };
        let &[c_out, kc, kh, kw] = ks else {
            return Err(Error::shape("conv2d", format!("kernels must be rank 4, got {ks:?}")));
        };
        if kc != c_in {
            return Err(Error::shape(
                "conv2d",
                format!("input has {c_in} channels, kernels expect {kc}"),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv2d kernel size must be odd, got {kh}x{kw}"
            )));
        }
        if bs != [c_out] {
            return Err(Error::shape("conv2d", format!("bias must be [{c_out}], got {bs:?}")));
        }
        let geometry = ConvGeometry {
            channels: c_in,
            height: h,
            width: w,
            kh,
            kw,
        };
        let cols = im2col(self.value(input).data(), geometry);
        let (k, n) = (geometry.patch_len(), geometry.pixels());
        let mut out = Vec::with_capacity(c_out * n);
        for &b in self.value(bias).data() {
            out.extend(std::iter::repeat_n(b, n));
        }
        gemm(
            c_out,
            k,
            n,
            self.value(kernels).data(),
            Strides::row_major(k),
            &cols,
            Strides::row_major(n),
            1.0,
            &mut out,
        );
        let keep = self.needs(kernels).then_some(cols);
        let v = Tensor::from_parts(vec![c_out, h, w], out);
        self.emit(
            "conv2d",
            v,
            Op::Conv2d {
                input,
                kernels,
                bias,
                geometry,
                cols: keep,
            },
            &[input, kernels, bias],
        )
    }

    /// Stacks `[C1,H,W]` and `[C2,H,W]` into `[C1+C2,H,W]`.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_open()?;
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 3 || sb.len() != 3 || sa[1..] != sb[1..] {
            return Err(Error::shape("concat_channels", format!("{sa:?} vs {sb:?}")));
        }
        let shape = vec![sa[0] + sb[0], sa[1], sa[2]];
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        self.emit(
            "concat_channels",
            Tensor::from_parts(shape, data),
            Op::ConcatChannels(a, b),
            &[a, b],
        )
    }

    pub fn silu(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_open()?;
        let v = self.value(a).map(|x| x * sigmoid(x));
        self.emit("silu", v, Op::Silu(a), &[a])
    }

    /// `[C,H,W] -> [C]`, mean over the spatial dimensions.
    pub fn spatial_mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_open()?;
        let s = self.value(a).shape();
        let &[c, h, w] = s else {
            return Err(Error::shape("spatial_mean", format!("expected [C,H,W], got {s:?}")));
        };
        let n = h * w;
        let data = self
            .value(a)
            .data()
            .chunks_exact(n)
            .map(|plane| plane.iter().sum::<f64>() / n as f64)
            .collect();
        self.emit(
            "spatial_mean",
            Tensor::from_parts(vec![c], data),
            Op::SpatialMean(a),
            &[a],
        )
    }

    /// `[C] -> [C,H,W]`, repeating each channel value over the plane.
    pub fn broadcast_channels(&mut self, a: NodeId, height: usize, width: usize) -> Result<NodeId> {
        self.check_open()?;
        let s = self.value(a).shape();
        let &[c] = s else {
            return Err(Error::shape("broadcast_channels", format!("expected [C], got {s:?}")));
        };
        let n = height * width;
        let mut data = Vec::with_capacity(c * n);
        for &v in self.value(a).data() {
            data.extend(std::iter::repeat_n(v, n));
        }
        self.emit(
            "broadcast_channels",
            Tensor::from_parts(vec![c, height, width], data),
            Op::BroadcastChannels(a),
            &[a],
        )
    }

    /// Affine map `weight[O,I] · input[I] + bias[O]`.
    pub fn linear(&mut self, weight: NodeId, input: NodeId, bias: NodeId) -> Result<NodeId> {
        self.check_open()?;
        let (ws, xs, bs) = (
            self.value(weight).shape(),
            self.value(input).shape(),
            self.value(bias).shape(),
        );
        let (&[o, i], &[xi], &[bo]) = (ws, xs, bs) else {
            return Err(Error::shape("linear", format!("{ws:?} · {xs:?} + {bs:?}")));
        };
        if i != xi || o != bo {
            return Err(Error::shape("linear", format!("{ws:?} · {xs:?} + {bs:?}")));
        }
        let (w, x) = (self.value(weight).data(), self.value(input).data());
        let data = self
            .value(bias)
            .data()
            .iter()
            .enumerate()
            .map(|(r, &b)| b + w[r * i..(r + 1) * i].iter().zip(x).map(|(p, q)| p * q).sum::<f64>())
            .collect();
        self.emit(
            "linear",
            Tensor::from_parts(vec![o], data),
            Op::Linear { weight, input, bias },
            &[weight, input, bias],
        )
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.check_open()?;
        let v = Tensor::scalar(self.value(a).mean());
        self.emit("mean", v, Op::Mean(a), &[a])
    }

    /// Mean squared error between two equally shaped tensors, as a scalar.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_open()?;
        let (ta, tb) = (self.value(a), self.value(b));
        ta.ensure_same_shape(tb, "mse")?;
        let sum: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        let v = Tensor::scalar(sum / ta.len() as f64);
        self.emit("mse", v, Op::Mse(a, b), &[a, b])
    }

    /// Reverse pass from the scalar `loss`. Every registered parameter gets an
    /// entry; parameters with no path to `loss` get zeros.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        self.check_open()?;
        let loss_shape = self.value(loss).shape().to_vec();
        if self.value(loss).len() != 1 {
            return Err(Error::NotScalar(loss_shape));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(&loss_shape, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(idx, &g, &mut grads)?;
        }

        let mut out = Gradients::new();
        for (name, &id) in &self.params {
            let g = grads[id.0]
                .take()
                .unwrap_or_else(|| Tensor::zeros(self.value(id).shape()));
            g.check_finite("backward")?;
            out.insert(name.clone(), g);
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
        if !self.needs(id) {
            return;
        }
        match &mut grads[id.0] {
            Some(acc) => acc.axpy(1.0, &g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y)?);
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y)?);
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|x| x * s)),
            Op::Conv2d {
                input,
                kernels,
                bias,
                geometry,
                cols,
            } => {
                let (k, n) = (geometry.patch_len(), geometry.pixels());
                let c_out = self.value(*kernels).shape()[0];
                if self.needs(*bias) {
                    let gb = g.data().chunks_exact(n).map(|p| p.iter().sum()).collect();
                    self.accumulate(grads, *bias, Tensor::from_parts(vec![c_out], gb));
                }
                if self.needs(*kernels) {
                    let cols = cols.as_ref().expect("conv2d cols cached when kernels need grad");
                    let mut gk = vec![0.0; c_out * k];
                    gemm(
                        c_out,
                        n,
                        k,
                        g.data(),
                        Strides::row_major(n),
                        cols,
                        Strides::transposed(n),
                        0.0,
                        &mut gk,
                    );
                    let shape = self.value(*kernels).shape().to_vec();
                    self.accumulate(grads, *kernels, Tensor::from_parts(shape, gk));
                }
                if self.needs(*input) {
                    let mut gcols = vec![0.0; k * n];
                    gemm(
                        k,
                        c_out,
                        n,
                        self.value(*kernels).data(),
                        Strides::transposed(k),
                        g.data(),
                        Strides::row_major(n),
                        0.0,
                        &mut gcols,
                    );
                    let gx = col2im(&gcols, *geometry);
                    let shape = self.value(*input).shape().to_vec();
                    self.accumulate(grads, *input, Tensor::from_parts(shape, gx));
                }
            }
            Op::ConcatChannels(a, b) => {
                let split = self.value(*a).len();
                let (ga, gb) = g.data().split_at(split);
                let (sa, sb) = (self.value(*a).shape().to_vec(), self.value(*b).shape().to_vec());
                self.accumulate(grads, *a, Tensor::from_parts(sa, ga.to_vec()));
                self.accumulate(grads, *b, Tensor::from_parts(sb, gb.to_vec()));
            }
            Op::Silu(a) => {
                let gx = g.zip_map(self.value(*a), |gy, x| {
                    let s = sigmoid(x);
                    gy * s * (1.0 + x * (1.0 - s))
                })?;
                self.accumulate(grads, *a, gx);
            }
            Op::SpatialMean(a) => {
                let shape = self.value(*a).shape().to_vec();
                let n = shape[1] * shape[2];
                let mut gx = Vec::with_capacity(shape[0] * n);
                for &gc in g.data() {
                    gx.extend(std::iter::repeat_n(gc / n as f64, n));
                }
                self.accumulate(grads, *a, Tensor::from_parts(shape, gx));
            }
            Op::BroadcastChannels(a) => {
                let c = self.value(*a).len();
                let n = g.len() / c;
                let gx = g.data().chunks_exact(n).map(|p| p.iter().sum()).collect();
                self.accumulate(grads, *a, Tensor::from_parts(vec![c], gx));
            }
            Op::Linear { weight, input, bias } => {
                let x = self.value(*input).data();
                let ws = self.value(*weight).shape().to_vec();
                let (o, i) = (ws[0], ws[1]);
                if self.needs(*weight) {
                    let mut gw = Vec::with_capacity(o * i);
                    for &gr in g.data() {
                        gw.extend(x.iter().map(|xv| gr * xv));
                    }
                    self.accumulate(grads, *weight, Tensor::from_parts(ws, gw));
                }
                if self.needs(*input) {
                    let w = self.value(*weight).data();
                    let gx = (0..i)
                        .map(|c| (0..o).map(|r| w[r * i + c] * g.data()[r]).sum())
                        .collect();
                    self.accumulate(grads, *input, Tensor::from_parts(vec![i], gx));
                }
                self.accumulate(grads, *bias, g.clone());
            }
            Op::Mean(a) => {
                let t = self.value(*a);
                let gv = g.data()[0] / t.len() as f64;
                self.accumulate(grads, *a, Tensor::full(t.shape(), gv));
            }
            Op::Mse(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let factor = 2.0 * g.data()[0] / ta.len() as f64;
                let diff = ta.zip_map(tb, |x, y| factor * (x - y))?;
                if self.needs(*b) {
                    self.accumulate(grads, *b, diff.map(|v| -v));
                }
                self.accumulate(grads, *a, diff);
            }
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
