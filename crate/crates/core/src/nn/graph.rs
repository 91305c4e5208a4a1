use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::kernels::{col2im, gemm, im2col, taps};
use super::params::{Gradients, NetworkParams};

/// Negative slope of [`Layer::LeakyRelu`].
pub const LEAKY_SLOPE: f32 = 0.2;
/// Weight of the previous running statistic in the batchnorm moving average.
pub const BN_MOMENTUM: f32 = 0.9;
pub const BN_EPS: f32 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batchnorm normalizes with batch statistics.
    Train,
    /// Batchnorm uses the stored running statistics.
    Inference,
}

/// The closed set of node kinds a [`Graph`] can hold.
///
/// Convolutions all use a 4x4 kernel with stride 2 and padding 1, so `Conv` halves and
/// `ConvTranspose` doubles the spatial extent.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv {
        in_channels: usize,
        out_channels: usize,
    },
    ConvTranspose {
        in_channels: usize,
        out_channels: usize,
    },
    BatchNorm {
        channels: usize,
    },
    Relu,
    LeakyRelu,
    Tanh,
    Sigmoid,
    Linear {
        in_features: usize,
        out_features: usize,
    },
    /// Per-sample reshape; the batch axis is untouched.
    Reshape {
        shape: Vec<usize>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub name: String,
    pub layer: Layer,
}

impl Node {
    pub fn new(name: impl Into<String>, layer: Layer) -> Self {
        Self {
            name: name.into(),
            layer,
        }
    }
}

/// A named parameter slot declared by a node.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSlot {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

struct BnCache {
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
    batch_mean: Vec<f32>,
    batch_var: Vec<f32>,
}

struct Cache {
    mode: Mode,
    /// `acts[i]` is the input of node `i`; `acts[end]` is the returned output.
    acts: Vec<Tensor>,
    bn: Vec<Option<BnCache>>,
}

/// A fixed, topologically ordered chain of layers plus the activation cache of the last forward.
pub struct Graph {
    input_shape: Vec<usize>,
    nodes: Vec<Node>,
    shapes: Vec<Vec<usize>>,
    cache: Option<Cache>,
}

impl Clone for Graph {
    /// Clones the structure only; the clone starts with an empty activation cache.
    fn clone(&self) -> Self {
        Self {
            input_shape: self.input_shape.clone(),
            nodes: self.nodes.clone(),
            shapes: self.shapes.clone(),
            cache: None,
        }
    }
}

impl std::fmt::Debug for Graph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Graph")
            .field("input_shape", &self.input_shape)
            .field("nodes", &self.nodes)
            .finish()
    }
}

fn shape_err(node: &str, expected: &[usize], got: &[usize]) -> Error {
    Error::Shape {
        node: node.to_string(),
        expected: expected.to_vec(),
        got: got.to_vec(),
    }
}

fn infer_shape(node: &Node, input: &[usize]) -> Result<Vec<usize>> {
    let name = node.name.as_str();
    match &node.layer {
        Layer::Conv {
            in_channels,
            out_channels,
        } => match input {
            [c, h, w] if c == in_channels && h % 2 == 0 && w % 2 == 0 && *h >= 2 && *w >= 2 => {
                Ok(vec![*out_channels, h / 2, w / 2])
            }
            _ => Err(shape_err(name, &[*in_channels, 0, 0], input)),
        },
        Layer::ConvTranspose {
            in_channels,
            out_channels,
        } => match input {
            [c, h, w] if c == in_channels => Ok(vec![*out_channels, h * 2, w * 2]),
            _ => Err(shape_err(name, &[*in_channels, 0, 0], input)),
        },
        Layer::BatchNorm { channels } => match input.first() {
            Some(c) if c == channels => Ok(input.to_vec()),
            _ => Err(shape_err(name, &[*channels], input)),
        },
        Layer::Linear {
            in_features,
            out_features,
        } => {
            if input == [*in_features] {
                Ok(vec![*out_features])
            } else {
                Err(shape_err(name, &[*in_features], input))
            }
        }
        Layer::Reshape { shape } => {
            if shape.iter().product::<usize>() == input.iter().product::<usize>() {
                Ok(shape.clone())
            } else {
                Err(shape_err(name, shape, input))
            }
        }
        Layer::Relu | Layer::LeakyRelu | Layer::Tanh | Layer::Sigmoid => Ok(input.to_vec()),
    }
}

impl Graph {
    /// Build a graph for per-sample inputs of `input_shape`, checking that shapes chain.
    pub fn new(input_shape: Vec<usize>, nodes: Vec<Node>) -> Result<Self> {
        let mut shapes = vec![input_shape.clone()];
        for node in &nodes {
            let next = infer_shape(node, shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(Self {
            input_shape,
            nodes,
            shapes,
            cache: None,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Per-sample shape of the activation after the first `end` nodes.
    pub fn shape_at(&self, end: usize) -> &[usize] {
        &self.shapes[end]
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().unwrap()
    }

    /// Every parameter slot in node order.
    pub fn param_slots(&self) -> Vec<ParamSlot> {
        let mut slots = Vec::new();
        let mut push = |name: &str, suffix: &str, shape: Vec<usize>, trainable: bool| {
            slots.push(ParamSlot {
                name: format!("{name}.{suffix}"),
                shape,
                trainable,
            })
        };
        for node in &self.nodes {
            let n = node.name.as_str();
            match &node.layer {
                Layer::Conv {
                    in_channels,
                    out_channels,
                } => {
                    push(n, "weight", vec![*out_channels, *in_channels, 4, 4], true);
                    push(n, "bias", vec![*out_channels], true);
                }
                Layer::ConvTranspose {
                    in_channels,
                    out_channels,
                } => {
                    push(n, "weight", vec![*in_channels, *out_channels, 4, 4], true);
                    push(n, "bias", vec![*out_channels], true);
                }
                Layer::BatchNorm { channels } => {
                    push(n, "gamma", vec![*channels], true);
                    push(n, "beta", vec![*channels], true);
                    push(n, "running_mean", vec![*channels], false);
                    push(n, "running_var", vec![*channels], false);
                }
                Layer::Linear {
                    in_features,
                    out_features,
                } => {
                    push(n, "weight", vec![*out_features, *in_features], true);
                    push(n, "bias", vec![*out_features], true);
                }
                _ => {}
            }
        }
        slots
    }

    /// Drop cached activations.
    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn forward(&mut self, params: &NetworkParams, input: &Tensor, mode: Mode) -> Result<Tensor> {
        self.forward_to(params, input, mode, self.nodes.len())
    }

    /// Evaluate the first `end` nodes, caching activations for a following backward pass.
    pub fn forward_to(
        &mut self,
        params: &NetworkParams,
        input: &Tensor,
        mode: Mode,
        end: usize,
    ) -> Result<Tensor> {
        if end > self.nodes.len() {
            return Err(Error::InvalidArgument(format!(
                "forward_to({end}) past the last of {} nodes",
                self.nodes.len()
            )));
        }
        if input.rank() != self.input_shape.len() + 1 || input.shape()[1..] != self.input_shape[..] {
            let mut expected = vec![input.shape().first().copied().unwrap_or(1)];
            expected.extend_from_slice(&self.input_shape);
            return Err(shape_err("input", &expected, input.shape()));
        }
        self.cache = None;
        let mut acts = Vec::with_capacity(end + 1);
        let mut bn = Vec::with_capacity(end);
        acts.push(input.clone());
        for i in 0..end {
            let x = &acts[i];
            let (y, bc) = forward_node(&self.nodes[i], params, x, &self.shapes[i + 1], mode)?;
            acts.push(y);
            bn.push(bc);
        }
        let out = acts[end].clone();
        self.cache = Some(Cache { mode, acts, bn });
        Ok(out)
    }

    /// Gradient of the loss with respect to the graph input.
    pub fn backward_input(&mut self, params: &NetworkParams, upstream: &Tensor) -> Result<Tensor> {
        let (dx, _) = self.backward_impl(params, upstream, true, false)?;
        Ok(dx.expect("input gradient requested"))
    }

    /// Gradient of the loss with respect to every trainable parameter.
    pub fn backward_params(&mut self, params: &NetworkParams, upstream: &Tensor) -> Result<Gradients> {
        let (_, g) = self.backward_impl(params, upstream, false, true)?;
        Ok(g.expect("parameter gradients requested"))
    }

    /// Both input and parameter gradients from one sweep.
    pub fn backward(
        &mut self,
        params: &NetworkParams,
        upstream: &Tensor,
    ) -> Result<(Tensor, Gradients)> {
        let (dx, g) = self.backward_impl(params, upstream, true, true)?;
        Ok((dx.unwrap(), g.unwrap()))
    }

    fn backward_impl(
        &mut self,
        params: &NetworkParams,
        upstream: &Tensor,
        want_input: bool,
        want_params: bool,
    ) -> Result<(Option<Tensor>, Option<Gradients>)> {
        let cache = self.cache.as_ref().ok_or(Error::BackwardBeforeForward)?;
        let end = cache.acts.len() - 1;
        if upstream.shape() != cache.acts[end].shape() {
            return Err(shape_err("upstream", cache.acts[end].shape(), upstream.shape()));
        }
        let mut grads = Gradients::default();
        let mut dy = upstream.clone();
        let mut per_node: Vec<Vec<(String, Tensor)>> = Vec::with_capacity(end);
        for i in (0..end).rev() {
            let need_dx = want_input || i > 0;
            let (dx, pg) = backward_node(
                &self.nodes[i],
                params,
                &cache.acts[i],
                &cache.acts[i + 1],
                cache.bn[i].as_ref(),
                cache.mode,
                &dy,
                need_dx,
                want_params,
            )?;
            per_node.push(pg);
            if let Some(dx) = dx {
                dy = dx;
            }
        }
        if want_params {
            for pg in per_node.into_iter().rev() {
                for (name, t) in pg {
                    grads.insert(name, t);
                }
            }
        }
        Ok((
            want_input.then_some(dy),
            want_params.then_some(grads),
        ))
    }

    /// Fold the batch statistics of the last train-mode forward into the running statistics.
    pub fn update_running_stats(&self, params: &mut NetworkParams) -> Result<()> {
        let cache = self.cache.as_ref().ok_or(Error::BackwardBeforeForward)?;
        if cache.mode != Mode::Train {
            return Ok(());
        }
        for (node, bc) in self.nodes.iter().zip(&cache.bn) {
            let Some(bc) = bc else { continue };
            for (suffix, batch) in [("running_mean", &bc.batch_mean), ("running_var", &bc.batch_var)] {
                let name = format!("{}.{suffix}", node.name);
                let t = params
                    .get_mut(&name)
                    .ok_or_else(|| Error::MissingTensor(name.clone()))?;
                for (r, b) in t.data_mut().iter_mut().zip(batch) {
                    *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
                }
            }
        }
        Ok(())
    }

    /// Train-mode forward that also updates the running statistics.
    pub fn forward_train(&mut self, params: &mut NetworkParams, input: &Tensor) -> Result<Tensor> {
        let out = self.forward(params, input, Mode::Train)?;
        self.update_running_stats(params)?;
        Ok(out)
    }
}

fn param<'a>(params: &'a NetworkParams, node: &str, suffix: &str, shape: &[usize]) -> Result<&'a Tensor> {
    let t = params.require(&format!("{node}.{suffix}"))?;
    if t.shape() != shape {
        return Err(shape_err(&format!("{node}.{suffix}"), shape, t.shape()));
    }
    Ok(t)
}

fn batch_shape(n: usize, sample: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(sample.len() + 1);
    s.push(n);
    s.extend_from_slice(sample);
    s
}

fn forward_node(
    node: &Node,
    params: &NetworkParams,
    x: &Tensor,
    out_sample: &[usize],
    mode: Mode,
) -> Result<(Tensor, Option<BnCache>)> {
    let n = x.batch();
    let in_sample = &x.shape()[1..];
    let out_len: usize = out_sample.iter().product();
    let mut out = vec![0.0f32; n * out_len];
    let name = node.name.as_str();
    let mut bn_cache = None;
    match &node.layer {
        Layer::Conv {
            in_channels,
            out_channels,
        } => {
            let (c, h, w) = (*in_channels, in_sample[1], in_sample[2]);
            let o = *out_channels;
            let weight = param(params, name, "weight", &[o, c, 4, 4])?;
            let bias = param(params, name, "bias", &[o])?;
            let plane = (h / 2) * (w / 2);
            let mut cols = vec![0.0f32; c * taps() * plane];
            for (s, dst) in out.chunks_mut(out_len).enumerate() {
                im2col(x.sample(s), c, h, w, &mut cols);
                gemm(o, c * taps(), plane, 1.0, weight.data(), false, &cols, false, 0.0, dst);
                for (oc, row) in dst.chunks_mut(plane).enumerate() {
                    let b = bias.data()[oc];
                    row.iter_mut().for_each(|v| *v += b);
                }
            }
        }
        Layer::ConvTranspose {
            in_channels,
            out_channels,
        } => {
            let (c, h, w) = (*in_channels, in_sample[1], in_sample[2]);
            let o = *out_channels;
            let weight = param(params, name, "weight", &[c, o, 4, 4])?;
            let bias = param(params, name, "bias", &[o])?;
            let plane = h * w;
            let mut cols = vec![0.0f32; o * taps() * plane];
            for (s, dst) in out.chunks_mut(out_len).enumerate() {
                gemm(o * taps(), c, plane, 1.0, weight.data(), true, x.sample(s), false, 0.0, &mut cols);
                col2im(&cols, o, 2 * h, 2 * w, dst);
                for (oc, row) in dst.chunks_mut(4 * plane).enumerate() {
                    let b = bias.data()[oc];
                    row.iter_mut().for_each(|v| *v += b);
                }
            }
        }
        Layer::Linear {
            in_features,
            out_features,
        } => {
            let weight = param(params, name, "weight", &[*out_features, *in_features])?;
            let bias = param(params, name, "bias", &[*out_features])?;
            for (s, dst) in out.chunks_mut(out_len).enumerate() {
                dst.copy_from_slice(bias.data());
                gemm(*out_features, *in_features, 1, 1.0, weight.data(), false, x.sample(s), false, 1.0, dst);
            }
        }
        Layer::BatchNorm { channels } => {
            let c = *channels;
            let gamma = param(params, name, "gamma", &[c])?;
            let beta = param(params, name, "beta", &[c])?;
            let spatial = out_len / c;
            let (mean, var) = match mode {
                Mode::Train => batch_moments(x.data(), n, c, spatial),
                Mode::Inference => (
                    param(params, name, "running_mean", &[c])?.data().to_vec(),
                    param(params, name, "running_var", &[c])?.data().to_vec(),
                ),
            };
            let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
            let mut xhat = vec![0.0f32; x.len()];
            for s in 0..n {
                for ch in 0..c {
                    let base = s * out_len + ch * spatial;
                    let (m, is, g, b) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
                    for k in base..base + spatial {
                        let xh = (x.data()[k] - m) * is;
                        xhat[k] = xh;
                        out[k] = g * xh + b;
                    }
                }
            }
            bn_cache = Some(BnCache {
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
            });
        }
        Layer::Relu => {
            for (o, &v) in out.iter_mut().zip(x.data()) {
                *o = v.max(0.0);
            }
        }
        Layer::LeakyRelu => {
            for (o, &v) in out.iter_mut().zip(x.data()) {
                *o = if v > 0.0 { v } else { LEAKY_SLOPE * v };
            }
        }
        Layer::Tanh => {
            for (o, &v) in out.iter_mut().zip(x.data()) {
                *o = v.tanh();
            }
        }
        Layer::Sigmoid => {
            for (o, &v) in out.iter_mut().zip(x.data()) {
                *o = sigmoid(v);
            }
        }
        Layer::Reshape { .. } => out.copy_from_slice(x.data()),
    }
    Ok((Tensor::new(batch_shape(n, out_sample), out)?, bn_cache))
}

pub(crate) fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn batch_moments(x: &[f32], n: usize, c: usize, spatial: usize) -> (Vec<f32>, Vec<f32>) {
    let count = (n * spatial) as f64;
    let mut mean = vec![0.0f32; c];
    let mut var = vec![0.0f32; c];
    for ch in 0..c {
        let mut sum = 0.0f64;
        for s in 0..n {
            let base = (s * c + ch) * spatial;
            sum += x[base..base + spatial].iter().map(|&v| v as f64).sum::<f64>();
        }
        let m = sum / count;
        let mut sq = 0.0f64;
        for s in 0..n {
            let base = (s * c + ch) * spatial;
            sq += x[base..base + spatial]
                .iter()
                .map(|&v| (v as f64 - m).powi(2))
                .sum::<f64>();
        }
        mean[ch] = m as f32;
        var[ch] = (sq / count) as f32;
    }
    (mean, var)
}

#[allow(clippy::too_many_arguments)]
fn backward_node(
    node: &Node,
    params: &NetworkParams,
    x: &Tensor,
    y: &Tensor,
    bn: Option<&BnCache>,
    mode: Mode,
    dy: &Tensor,
    need_dx: bool,
    want_params: bool,
) -> Result<(Option<Tensor>, Vec<(String, Tensor)>)> {
    let n = x.batch();
    let in_len = x.sample_len();
    let out_len = y.sample_len();
    let in_sample = &x.shape()[1..];
    let name = node.name.as_str();
    let mut pgrads = Vec::new();
    let mut dx = if need_dx { Some(vec![0.0f32; x.len()]) } else { None };
    match &node.layer {
        Layer::Conv {
            in_channels,
            out_channels,
        } => {
            let (c, h, w) = (*in_channels, in_sample[1], in_sample[2]);
            let o = *out_channels;
            let weight = param(params, name, "weight", &[o, c, 4, 4])?;
            let plane = (h / 2) * (w / 2);
            let ck = c * taps();
            let mut cols = vec![0.0f32; ck * plane];
            let mut dw = vec![0.0f32; o * ck];
            let mut db = vec![0.0f32; o];
            for s in 0..n {
                let g = dy.sample(s);
                if want_params {
                    im2col(x.sample(s), c, h, w, &mut cols);
                    gemm(o, plane, ck, 1.0, g, false, &cols, true, 1.0, &mut dw);
                    for (oc, row) in g.chunks(plane).enumerate() {
                        db[oc] += row.iter().sum::<f32>();
                    }
                }
                if let Some(dx) = dx.as_mut() {
                    gemm(ck, o, plane, 1.0, weight.data(), true, g, false, 0.0, &mut cols);
                    col2im(&cols, c, h, w, &mut dx[s * in_len..(s + 1) * in_len]);
                }
            }
            if want_params {
                pgrads.push((format!("{name}.weight"), Tensor::new(vec![o, c, 4, 4], dw)?));
                pgrads.push((format!("{name}.bias"), Tensor::new(vec![o], db)?));
            }
        }
        Layer::ConvTranspose {
            in_channels,
            out_channels,
        } => {
            let (c, h, w) = (*in_channels, in_sample[1], in_sample[2]);
            let o = *out_channels;
            let weight = param(params, name, "weight", &[c, o, 4, 4])?;
            let plane = h * w;
            let ok = o * taps();
            let mut cols = vec![0.0f32; ok * plane];
            let mut dw = vec![0.0f32; c * ok];
            let mut db = vec![0.0f32; o];
            for s in 0..n {
                let g = dy.sample(s);
                im2col(g, o, 2 * h, 2 * w, &mut cols);
                if want_params {
                    gemm(c, plane, ok, 1.0, x.sample(s), false, &cols, true, 1.0, &mut dw);
                    for (oc, row) in g.chunks(4 * plane).enumerate() {
                        db[oc] += row.iter().sum::<f32>();
                    }
                }
                if let Some(dx) = dx.as_mut() {
                    gemm(c, ok, plane, 1.0, weight.data(), false, &cols, false, 0.0, &mut dx[s * in_len..(s + 1) * in_len]);
                }
            }
            if want_params {
                pgrads.push((format!("{name}.weight"), Tensor::new(vec![c, o, 4, 4], dw)?));
                pgrads.push((format!("{name}.bias"), Tensor::new(vec![o], db)?));
            }
        }
        Layer::Linear {
            in_features,
            out_features,
        } => {
            let (fi, fo) = (*in_features, *out_features);
            let weight = param(params, name, "weight", &[fo, fi])?;
            let mut dw = vec![0.0f32; fo * fi];
            let mut db = vec![0.0f32; fo];
            for s in 0..n {
                let g = dy.sample(s);
                if want_params {
                    gemm(fo, 1, fi, 1.0, g, false, x.sample(s), false, 1.0, &mut dw);
                    db.iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
                if let Some(dx) = dx.as_mut() {
                    gemm(fi, fo, 1, 1.0, weight.data(), true, g, false, 0.0, &mut dx[s * in_len..(s + 1) * in_len]);
                }
            }
            if want_params {
                pgrads.push((format!("{name}.weight"), Tensor::new(vec![fo, fi], dw)?));
                pgrads.push((format!("{name}.bias"), Tensor::new(vec![fo], db)?));
            }
        }
        Layer::BatchNorm { channels } => {
            let c = *channels;
            let bn = bn.ok_or(Error::BackwardBeforeForward)?;
            let gamma = param(params, name, "gamma", &[c])?;
            let spatial = out_len / c;
            let count = (n * spatial) as f64;
            let mut dgamma = vec![0.0f32; c];
            let mut dbeta = vec![0.0f32; c];
            for ch in 0..c {
                let (mut sg, mut sb) = (0.0f64, 0.0f64);
                for s in 0..n {
                    let base = s * out_len + ch * spatial;
                    for k in base..base + spatial {
                        sg += (dy.data()[k] * bn.xhat[k]) as f64;
                        sb += dy.data()[k] as f64;
                    }
                }
                dgamma[ch] = sg as f32;
                dbeta[ch] = sb as f32;
                if let Some(dx) = dx.as_mut() {
                    let g = gamma.data()[ch];
                    let is = bn.inv_std[ch];
                    for s in 0..n {
                        let base = s * out_len + ch * spatial;
                        for k in base..base + spatial {
                            dx[k] = match mode {
                                Mode::Inference => dy.data()[k] * g * is,
                                Mode::Train => {
                                    let t = count * dy.data()[k] as f64 - sb - bn.xhat[k] as f64 * sg;
                                    (g as f64 * is as f64 / count * t) as f32
                                }
                            };
                        }
                    }
                }
            }
            if want_params {
                pgrads.push((format!("{name}.gamma"), Tensor::new(vec![c], dgamma)?));
                pgrads.push((format!("{name}.beta"), Tensor::new(vec![c], dbeta)?));
            }
        }
        Layer::Relu => {
            if let Some(dx) = dx.as_mut() {
                for ((d, &g), &v) in dx.iter_mut().zip(dy.data()).zip(x.data()) {
                    *d = if v > 0.0 { g } else { 0.0 };
                }
            }
        }
        Layer::LeakyRelu => {
            if let Some(dx) = dx.as_mut() {
                for ((d, &g), &v) in dx.iter_mut().zip(dy.data()).zip(x.data()) {
                    *d = if v > 0.0 { g } else { LEAKY_SLOPE * g };
                }
            }
        }
        Layer::Tanh => {
            if let Some(dx) = dx.as_mut() {
                for ((d, &g), &t) in dx.iter_mut().zip(dy.data()).zip(y.data()) {
                    *d = g * (1.0 - t * t);
                }
            }
        }
        Layer::Sigmoid => {
            if let Some(dx) = dx.as_mut() {
                for ((d, &g), &s) in dx.iter_mut().zip(dy.data()).zip(y.data()) {
                    *d = g * s * (1.0 - s);
                }
            }
        }
        Layer::Reshape { .. } => {
            if let Some(dx) = dx.as_mut() {
                dx.copy_from_slice(dy.data());
            }
        }
    }
    let dx = match dx {
        Some(d) => Some(Tensor::new(x.shape().to_vec(), d)?),
        None => None,
    };
    Ok((dx, pgrads))
}
