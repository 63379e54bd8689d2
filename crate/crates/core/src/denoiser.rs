//! Residual convolutional predictor of the clean image.
//!
//! ```text
//! h   = conv_in(P_t)
//! h  += conv2(silu(conv1(h) + proj_i(emb(t))))      for each block i
//! out = P_t + conv_out(h)
//! ```
//!
//! `conv_out` starts at zero, so a fresh network is the identity map.
//! The network input is exactly `(P_t, t)`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::Tensor;

const KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    pub base_channels: usize,
    pub num_blocks: usize,
    pub time_embed_dim: usize,
    pub image_channels: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            base_channels: 32,
            num_blocks: 4,
            time_embed_dim: 32,
            image_channels: 1,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("base_channels", self.base_channels),
            ("num_blocks", self.num_blocks),
            ("time_embed_dim", self.time_embed_dim),
            ("image_channels", self.image_channels),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be >= 1"));
            }
        }
        if !self.time_embed_dim.is_multiple_of(2) {
            return Err(Error::config("time_embed_dim", "must be even"));
        }
        Ok(())
    }

    /// Expected parameter names and shapes, in a fixed order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let (c, d, img) = (self.base_channels, self.time_embed_dim, self.image_channels);
        let mut out = vec![
            ("input.weight".to_string(), vec![c, img, KERNEL, KERNEL]),
            ("input.bias".to_string(), vec![c]),
        ];
        for i in 0..self.num_blocks {
            out.push((format!("blocks.{i}.conv1.weight"), vec![c, c, KERNEL, KERNEL]));
            out.push((format!("blocks.{i}.conv1.bias"), vec![c]));
            out.push((format!("blocks.{i}.time.weight"), vec![c, d]));
            out.push((format!("blocks.{i}.time.bias"), vec![c]));
            out.push((format!("blocks.{i}.conv2.weight"), vec![c, c, KERNEL, KERNEL]));
            out.push((format!("blocks.{i}.conv2.bias"), vec![c]));
        }
        out.push(("output.weight".to_string(), vec![img, c, KERNEL, KERNEL]));
        out.push(("output.bias".to_string(), vec![img]));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.layout().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

/// Named parameters of a denoiser, together with the config they realise.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    config: DenoiserConfig,
    tensors: BTreeMap<String, Tensor>,
}

impl DenoiserParams {
    /// Wraps a tensor map, recovering the config from its shapes and
    /// rejecting any missing, extra or misshapen entry.
    pub fn from_tensors(tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        let bad = |reason: String| Error::InvalidArgument(format!("denoiser params: {reason}"));
        let input = tensors
            .get("input.weight")
            .ok_or_else(|| bad("missing input.weight".into()))?;
        let &[base_channels, image_channels, _, _] = input.shape() else {
            return Err(bad(format!("input.weight has shape {:?}", input.shape())));
        };
        let num_blocks = (0..)
            .take_while(|i| tensors.contains_key(&format!("blocks.{i}.conv1.weight")))
            .count();
        let time_embed_dim = tensors
            .get("blocks.0.time.weight")
            .and_then(|t| t.shape().get(1).copied())
            .ok_or_else(|| bad("missing blocks.0.time.weight".into()))?;
        let config = DenoiserConfig {
            base_channels,
            num_blocks,
            time_embed_dim,
            image_channels,
        };
        config.validate()?;
        let layout = config.layout();
        if layout.len() != tensors.len() {
            return Err(bad(format!("expected {} tensors, got {}", layout.len(), tensors.len())));
        }
        for (name, shape) in &layout {
            let t = tensors.get(name).ok_or_else(|| bad(format!("missing {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(bad(format!("{name} has shape {:?}, expected {shape:?}", t.shape())));
            }
            t.check_finite("DenoiserParams")?;
        }
        Ok(DenoiserParams { config, tensors })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.tensors
    }

    pub fn into_tensors(self) -> BTreeMap<String, Tensor> {
        self.tensors
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }
}

/// Fan-in scaled normal kernels, zero biases, zero output convolution.
pub fn init_params(config: &DenoiserConfig, seed: u64) -> Result<DenoiserParams> {
    config.validate()?;
    let mut rng = stream(seed);
    let mut tensors = BTreeMap::new();
    for (name, shape) in config.layout() {
        let n: usize = shape.iter().product();
        let fan_in: usize = shape[1..].iter().product();
        let gain = if name.ends_with(".bias") || name.starts_with("output.") {
            0.0
        } else if name.contains(".conv2.") || name.contains(".time.") {
            // feeds the residual sum directly, no activation follows
            1.0
        } else {
            2.0
        };
        let std = (gain / fan_in as f64).sqrt();
        let data = (0..n)
            .map(|_| {
                if std == 0.0 {
                    0.0
                } else {
                    std * rng.sample::<f64, _>(StandardNormal)
                }
            })
            .collect();
        tensors.insert(name, Tensor::from_parts(shape, data));
    }
    DenoiserParams::from_tensors(tensors)
}

fn sinusoid(t: usize, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let omega = 10000f64.powf(-2.0 * i as f64 / dim as f64);
        let phase = t as f64 * omega;
        out.push(phase.sin());
        out.push(phase.cos());
    }
    out
}

/// Interleaved `[sin(t·ω_0), cos(t·ω_0), sin(t·ω_1), …]`, `ω_i = 10000^(−2i/dim)`.
pub fn time_embedding(t: usize, dim: usize, total_steps: usize) -> Result<Vec<f64>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "time embedding dim must be even and positive, got {dim}"
        )));
    }
    if t > total_steps {
        return Err(Error::InvalidArgument(format!("step {t} beyond T = {total_steps}")));
    }
    Ok(sinusoid(t, dim))
}

/// Graph handles of every parameter, by name.
#[derive(Debug, Clone)]
pub struct ParamNodes(BTreeMap<String, NodeId>);

impl ParamNodes {
    fn get(&self, name: &str) -> NodeId {
        self.0[name]
    }
}

/// Places all parameters in `graph`, as named (trainable) leaves or as
/// constants.
pub fn register_params(graph: &mut Graph, params: &DenoiserParams, trainable: bool) -> Result<ParamNodes> {
    let mut nodes = BTreeMap::new();
    for (name, t) in &params.tensors {
        let id = if trainable {
            graph.param(name.clone(), t.clone())?
        } else {
            graph.constant(t.clone())
        };
        nodes.insert(name.clone(), id);
    }
    Ok(ParamNodes(nodes))
}

/// Records the network on `graph` for input node `x` at step `t`.
pub fn forward(graph: &mut Graph, config: &DenoiserConfig, p: &ParamNodes, x: NodeId, t: usize) -> Result<NodeId> {
    let shape = graph.value(x).shape().to_vec();
    let &[c, h, w] = shape.as_slice() else {
        return Err(Error::shape("denoiser", format!("expected [C,H,W], got {shape:?}")));
    };
    if c != config.image_channels {
        return Err(Error::shape(
            "denoiser",
            format!("input has {c} channels, network expects {}", config.image_channels),
        ));
    }
    let emb = graph.constant(Tensor::from_parts(
        vec![config.time_embed_dim],
        sinusoid(t, config.time_embed_dim),
    ));
    let mut hidden = graph.conv2d(x, p.get("input.weight"), p.get("input.bias"))?;
    for i in 0..config.num_blocks {
        let name = |part: &str| format!("blocks.{i}.{part}");
        let a = graph.conv2d(hidden, p.get(&name("conv1.weight")), p.get(&name("conv1.bias")))?;
        let proj = graph.linear(p.get(&name("time.weight")), emb, p.get(&name("time.bias")))?;
        let proj = graph.broadcast_channels(proj, h, w)?;
        let a = graph.add(a, proj)?;
        let a = graph.silu(a)?;
        let a = graph.conv2d(a, p.get(&name("conv2.weight")), p.get(&name("conv2.bias")))?;
        hidden = graph.add(hidden, a)?;
    }
    let residual = graph.conv2d(hidden, p.get("output.weight"), p.get("output.bias"))?;
    graph.add(x, residual)
}

/// Predicts the clean image from `(P_t, t)`.
pub fn predict_x0(params: &DenoiserParams, p_t: &Tensor, t: usize) -> Result<Tensor> {
    let mut graph = Graph::new();
    let nodes = register_params(&mut graph, params, false)?;
    let x = graph.constant(p_t.clone());
    let out = forward(&mut graph, &params.config, &nodes, x, t)?;
    Ok(graph.into_value(out))
}

/// Training loss `mse(predict_x0(P_t, t), target)` and its gradients.
pub fn loss_and_gradients(
    params: &DenoiserParams,
    p_t: &Tensor,
    t: usize,
    target: &Tensor,
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let mut graph = Graph::new();
    let nodes = register_params(&mut graph, params, true)?;
    let x = graph.constant(p_t.clone());
    let y = forward(&mut graph, &params.config, &nodes, x, t)?;
    let target = graph.constant(target.clone());
    let loss = graph.mse(y, target)?;
    let value = graph.value(loss).item()?;
    let grads = graph.backward(loss)?;
    Ok((value, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{adam_step, AdamConfig, OptimizerState};
    use crate::rng::standard_normal;

    fn small() -> DenoiserConfig {
        DenoiserConfig {
            base_channels: 4,
            num_blocks: 2,
            time_embed_dim: 4,
            image_channels: 1,
        }
    }

    #[test]
    fn embedding_values() {
        let e = time_embedding(1, 4, 10).unwrap();
        let want = [1f64.sin(), 1f64.cos(), 0.01f64.sin(), 0.01f64.cos()];
        for (a, b) in e.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((e[2] - 0.0099998).abs() < 1e-7);
        assert!((e[3] - 0.99995).abs() < 1e-5);

        let zero = time_embedding(0, 8, 10).unwrap();
        for pair in zero.chunks(2) {
            assert_eq!(pair, &[0.0, 1.0]);
        }
        for t in 0..=1000 {
            assert!(time_embedding(t, 32, 1000).unwrap().iter().all(|v| v.abs() <= 1.0));
        }
        assert!(time_embedding(1, 3, 10).is_err());
        assert!(time_embedding(11, 4, 10).is_err());
    }

    #[test]
    fn default_parameter_count() {
        // walk the architecture by hand: conv_in, 4 × (conv1, time proj, conv2), conv_out
        let (c, d) = (32, 32);
        let conv_in = c * 9 + c;
        let block = (c * c * 9 + c) + (c * d + c) + (c * c * 9 + c);
        let conv_out = c * 9 + 1;
        let expected = conv_in + 4 * block + conv_out;
        assert_eq!(expected, 78_817);
        let params = init_params(&DenoiserConfig::default(), 0).unwrap();
        assert_eq!(params.parameter_count(), 78_817);
        assert_eq!(DenoiserConfig::default().parameter_count(), 78_817);
    }

    #[test]
    fn init_is_deterministic_and_identity() {
        let a = init_params(&small(), 5).unwrap();
        assert_eq!(a, init_params(&small(), 5).unwrap());
        assert_ne!(a, init_params(&small(), 6).unwrap());
        let x = standard_normal(&mut stream(1), &[1, 7, 9]);
        for t in [0, 1, 17, 50] {
            assert_eq!(predict_x0(&a, &x, t).unwrap(), x);
        }
    }

    #[test]
    fn output_shape_follows_input() {
        let params = init_params(&small(), 1).unwrap();
        for (h, w) in [(1, 1), (5, 3), (16, 16)] {
            let x = Tensor::zeros(&[1, h, w]);
            assert_eq!(predict_x0(&params, &x, 3).unwrap().shape(), &[1, h, w]);
        }
        assert!(predict_x0(&params, &Tensor::zeros(&[2, 4, 4]), 3).is_err());
    }

    #[test]
    fn config_validation_and_inference() {
        assert!(DenoiserConfig {
            time_embed_dim: 5,
            ..small()
        }
        .validate()
        .is_err());
        assert!(DenoiserConfig {
            num_blocks: 0,
            ..small()
        }
        .validate()
        .is_err());
        let p = init_params(&small(), 0).unwrap();
        assert_eq!(p.config(), &small());
        let mut tensors = p.clone().into_tensors();
        tensors.insert("extra".into(), Tensor::zeros(&[1]));
        assert!(DenoiserParams::from_tensors(tensors).is_err());
        let mut tensors = p.into_tensors();
        tensors.insert("output.bias".into(), Tensor::zeros(&[2]));
        assert!(DenoiserParams::from_tensors(tensors).is_err());
    }

    #[test]
    fn all_parameter_groups_receive_gradient_after_one_step() {
        let mut params = init_params(&small(), 2).unwrap();
        let x = standard_normal(&mut stream(3), &[1, 8, 8]);
        let target = standard_normal(&mut stream(4), &[1, 8, 8]);
        let (_, g0) = loss_and_gradients(&params, &x, 4, &target).unwrap();
        let mut state = OptimizerState::default();
        adam_step(params.tensors_mut(), &g0, &mut state, &AdamConfig::with_lr(1e-2)).unwrap();
        let (_, g1) = loss_and_gradients(&params, &x, 4, &target).unwrap();
        for (name, g) in &g1 {
            assert!(g.max_abs() > 0.0, "{name} has zero gradient");
        }
    }

    #[test]
    fn memorises_single_example() {
        let mut params = init_params(&small(), 7).unwrap();
        let x = standard_normal(&mut stream(8), &[1, 8, 8]).map(|v| 0.5 * v);
        let target = x.map(|v| 0.3 * v + 0.1);
        let mut state = OptimizerState::default();
        let cfg = AdamConfig::with_lr(1e-2);
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            let (loss, g) = loss_and_gradients(&params, &x, 5, &target).unwrap();
            last = loss;
            adam_step(params.tensors_mut(), &g, &mut state, &cfg).unwrap();
        }
        assert!(last < 1e-3, "loss after 200 steps: {last}");
    }
}
