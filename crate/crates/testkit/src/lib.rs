//! Glue between `latentbrush` networks and the `f64` reference oracle.

use latentbrush::nn::{Graph, Layer, Mode, NetworkParams, BN_EPS, LEAKY_SLOPE};
use latentbrush::Tensor;
use latentbrush_oracle::layers::{forward, forward_gated, RefLayer};
use latentbrush_oracle::{max_rel_err, SplitMix};

pub mod energy;
pub mod fixtures;

/// Finite-difference step used by every gradient check.
pub const FD_STEP: f64 = 1e-3;

fn f64s(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// Parameters of a network as `f64` vectors keyed by slot name.
pub fn params_f64(params: &NetworkParams) -> Vec<(String, Vec<f64>)> {
    params.iter().map(|(n, t)| (n.to_string(), f64s(t))).collect()
}

fn lookup<'a>(p: &'a [(String, Vec<f64>)], name: &str) -> &'a [f64] {
    &p.iter().find(|(n, _)| n == name).unwrap_or_else(|| panic!("missing {name}")).1
}

/// Reference layers for the first `end` nodes of `graph`, with parameters taken from `p`.
pub fn ref_layers(graph: &Graph, p: &[(String, Vec<f64>)], mode: Mode, end: usize) -> Vec<RefLayer> {
    graph.nodes()[..end]
        .iter()
        .map(|node| {
            let get = |s: &str| lookup(p, &format!("{}.{s}", node.name)).to_vec();
            match &node.layer {
                Layer::Conv { in_channels, out_channels } => RefLayer::Conv {
                    w: get("weight"),
                    b: get("bias"),
                    cin: *in_channels,
                    cout: *out_channels,
                },
                Layer::ConvTranspose { in_channels, out_channels } => RefLayer::ConvT {
                    w: get("weight"),
                    b: get("bias"),
                    cin: *in_channels,
                    cout: *out_channels,
                },
                Layer::BatchNorm { .. } => match mode {
                    Mode::Train => RefLayer::BatchNormTrain {
                        gamma: get("gamma"),
                        beta: get("beta"),
                        eps: BN_EPS as f64,
                    },
                    Mode::Inference => RefLayer::BatchNormInference {
                        gamma: get("gamma"),
                        beta: get("beta"),
                        mean: get("running_mean"),
                        var: get("running_var"),
                        eps: BN_EPS as f64,
                    },
                },
                Layer::Relu => RefLayer::Relu,
                Layer::LeakyRelu => RefLayer::LeakyRelu(LEAKY_SLOPE as f64),
                Layer::Tanh => RefLayer::Tanh,
                Layer::Sigmoid => RefLayer::Sigmoid,
                Layer::Linear { in_features, out_features } => RefLayer::Linear {
                    w: get("weight"),
                    b: get("bias"),
                    fi: *in_features,
                    fo: *out_features,
                },
                Layer::Reshape { shape } => RefLayer::Reshape(shape.clone()),
            }
        })
        .collect()
}

/// Outcome of one finite-difference comparison.
#[derive(Clone, Debug, Default)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
}

impl GradCheck {
    pub fn merge(&mut self, other: &GradCheck) {
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.checked += other.checked;
    }
}

pub(crate) fn compare(analytic: &[f64], numeric: &[f64]) -> GradCheck {
    GradCheck {
        max_rel_err: if analytic.is_empty() { 0.0 } else { max_rel_err(analytic, numeric) },
        checked: analytic.len(),
    }
}

/// Loss weights drawn once per check; the scalar loss is `sum(weights * output)`.
fn loss_weights(len: usize, seed: u64) -> Vec<f64> {
    SplitMix(seed).vec(len, -1.0, 1.0)
}

/// Compare `backward_input` against central differences of the reference forward.
pub fn check_input_grad(
    graph: &mut Graph,
    params: &NetworkParams,
    input: &Tensor,
    mode: Mode,
    end: usize,
    seed: u64,
) -> GradCheck {
    let out = graph.forward_to(params, input, mode, end).unwrap();
    let w = loss_weights(out.len(), seed);
    let upstream = Tensor::new(out.shape().to_vec(), w.iter().map(|&v| v as f32).collect()).unwrap();
    let analytic = f64s(&graph.backward_input(params, &upstream).unwrap());

    let p = params_f64(params);
    let layers = ref_layers(graph, &p, mode, end);
    let batch = input.batch();
    let shape = &input.shape()[1..];
    let x0 = f64s(input);
    // Branches are frozen at the base point so probes that straddle a relu kink still
    // difference a single linear piece.
    let gates = forward(&layers, &x0, batch, shape).gates;
    let eval = |x: &[f64]| {
        let o = forward_gated(&layers, x, batch, shape, Some(&gates));
        o.data.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
    };
    let mut numeric = vec![0.0; x0.len()];
    let mut probe = x0.clone();
    for i in 0..x0.len() {
        probe[i] = x0[i] + FD_STEP;
        let fp = eval(&probe);
        probe[i] = x0[i] - FD_STEP;
        let fm = eval(&probe);
        probe[i] = x0[i];
        numeric[i] = (fp - fm) / (2.0 * FD_STEP);
    }
    compare(&analytic, &numeric)
}

/// Compare `backward_params` against central differences for up to `per_tensor` coordinates of
/// every trainable tensor.
pub fn check_param_grads(
    graph: &mut Graph,
    params: &NetworkParams,
    input: &Tensor,
    mode: Mode,
    per_tensor: usize,
    seed: u64,
) -> GradCheck {
    let end = graph.len();
    let out = graph.forward(params, input, mode).unwrap();
    let w = loss_weights(out.len(), seed);
    let upstream = Tensor::new(out.shape().to_vec(), w.iter().map(|&v| v as f32).collect()).unwrap();
    let grads = graph.backward_params(params, &upstream).unwrap();

    let x = f64s(input);
    let batch = input.batch();
    let shape = input.shape()[1..].to_vec();
    let mut p = params_f64(params);
    let gates = forward(&ref_layers(graph, &p, mode, end), &x, batch, &shape).gates;
    let mut pick = SplitMix(seed ^ 0x5eed);
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for (name, g) in grads.iter() {
        let slot = p.iter().position(|(n, _)| n == name).unwrap();
        let len = g.len();
        let coords: Vec<usize> = if len <= per_tensor {
            (0..len).collect()
        } else {
            (0..per_tensor).map(|_| (pick.next_u64() % len as u64) as usize).collect()
        };
        for i in coords {
            let orig = p[slot].1[i];
            let mut eval = |delta: f64| {
                p[slot].1[i] = orig + delta;
                let layers = ref_layers(graph, &p, mode, end);
                let o = forward_gated(&layers, &x, batch, &shape, Some(&gates));
                p[slot].1[i] = orig;
                o.data.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
            };
            let fp = eval(FD_STEP);
            let fm = eval(-FD_STEP);
            analytic.push(g.data()[i] as f64);
            numeric.push((fp - fm) / (2.0 * FD_STEP));
        }
    }
    // One floor across all tensors: some gradients are identically zero (a bias feeding
    // batch-statistics normalization) and would otherwise be compared against pure noise.
    compare(&analytic, &numeric)
}

/// Random tensor with entries uniform in `[lo, hi)`.
pub fn random_tensor(shape: &[usize], lo: f32, hi: f32, seed: u64) -> Tensor {
    let mut r = SplitMix(seed);
    Tensor::from_fn(shape, |_| r.uniform(lo as f64, hi as f64) as f32)
}

/// Random parameters for any graph: weights uniform in `[-0.5, 0.5)`, positive running variances.
pub fn random_params(graph: &Graph, seed: u64) -> NetworkParams {
    use latentbrush::nn::{ArchDescriptor, Role};
    let mut r = SplitMix(seed);
    let slots = graph.param_slots();
    let mut map = indexmap_from(&slots, |name, n| {
        if name.ends_with("running_var") || name.ends_with("gamma") {
            r.vec(n, 0.5, 1.5)
        } else {
            r.vec(n, -0.5, 0.5)
        }
    });
    NetworkParams::from_slots(Role::Generator, ArchDescriptor::DESK, &slots, std::mem::take(&mut map)).unwrap()
}

/// `net` with its parameters replaced by [`random_params`], keeping its role and architecture.
pub fn randomized(mut net: latentbrush::models::Network, seed: u64) -> latentbrush::models::Network {
    let p = random_params(&net.graph, seed);
    let slots = net.graph.param_slots();
    let map = slots.iter().map(|s| (s.name.clone(), p.get(&s.name).unwrap().clone())).collect();
    net.params = NetworkParams::from_slots(net.params.role, net.params.arch, &slots, map).unwrap();
    net
}

fn indexmap_from(
    slots: &[latentbrush::nn::ParamSlot],
    mut fill: impl FnMut(&str, usize) -> Vec<f64>,
) -> latentbrush::IndexMap<String, Tensor> {
    slots
        .iter()
        .map(|s| {
            let n: usize = s.shape.iter().product();
            let data = fill(&s.name, n).into_iter().map(|v| v as f32).collect();
            (s.name.clone(), Tensor::new(s.shape.clone(), data).unwrap())
        })
        .collect()
}

/// One single-node graph per layer kind, with the per-sample input shape it expects.
pub fn layer_suite() -> Vec<(&'static str, Graph, Mode)> {
    use latentbrush::nn::Node;
    let one = |layer: Layer, shape: Vec<usize>| Graph::new(shape, vec![Node::new("n", layer)]).unwrap();
    vec![
        ("conv", one(Layer::Conv { in_channels: 2, out_channels: 3 }, vec![2, 6, 6]), Mode::Train),
        ("conv-transpose", one(Layer::ConvTranspose { in_channels: 3, out_channels: 2 }, vec![3, 3, 3]), Mode::Train),
        ("batchnorm-train", one(Layer::BatchNorm { channels: 3 }, vec![3, 2, 2]), Mode::Train),
        ("batchnorm-inference", one(Layer::BatchNorm { channels: 3 }, vec![3, 2, 2]), Mode::Inference),
        ("relu", one(Layer::Relu, vec![12]), Mode::Train),
        ("leaky-relu", one(Layer::LeakyRelu, vec![12]), Mode::Train),
        ("tanh", one(Layer::Tanh, vec![12]), Mode::Train),
        ("sigmoid", one(Layer::Sigmoid, vec![12]), Mode::Train),
        ("linear", one(Layer::Linear { in_features: 5, out_features: 4 }, vec![5]), Mode::Train),
        ("reshape", one(Layer::Reshape { shape: vec![3, 4] }, vec![12]), Mode::Train),
    ]
}

/// Input and parameter gradient checks for one random instance of a single-layer graph.
pub fn check_layer_instance(graph: &mut Graph, mode: Mode, seed: u64) -> GradCheck {
    let params = random_params(graph, seed);
    let mut shape = vec![3];
    shape.extend_from_slice(graph.input_shape());
    let input = random_tensor(&shape, -2.0, 2.0, seed.wrapping_mul(31).wrapping_add(7));
    let end = graph.len();
    let mut total = check_input_grad(graph, &params, &input, mode, end, seed ^ 0xabc);
    if !graph.param_slots().is_empty() {
        total.merge(&check_param_grads(graph, &params, &input, mode, 64, seed ^ 0xdef));
    }
    total
}
