//! Generator, discriminator and encoder architectures.
//!
//! The generator lifts a latent vector through a fully-connected layer to a 4x4 feature map and
//! doubles the resolution with transposed convolutions until it reaches the model resolution.
//! The discriminator mirrors it with strided convolutions down to 4x4 and a single logit. The
//! encoder shares the discriminator trunk and ends in `latent_dim` tanh outputs.

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::{ArchDescriptor, Graph, Layer, Mode, NetworkParams, Node, ParamSlot, Role};
use crate::tensor::Tensor;

/// A graph together with the parameters it runs on.
#[derive(Clone, Debug)]
pub struct Network {
    pub graph: Graph,
    pub params: NetworkParams,
}

impl Network {
    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        self.graph.forward(&self.params, input, mode)
    }

    pub fn backward_input(&mut self, upstream: &Tensor) -> Result<Tensor> {
        self.graph.backward_input(&self.params, upstream)
    }
}

fn upsampling_steps(resolution: usize) -> Result<usize> {
    match resolution {
        32 => Ok(3),
        64 => Ok(4),
        other => Err(Error::UnsupportedResolution(other)),
    }
}

/// Generator structure for `arch` (no parameters).
pub fn generator_graph(arch: &ArchDescriptor) -> Result<Graph> {
    arch.validate()?;
    let steps = upsampling_steps(arch.resolution)?;
    let b = arch.base_channels;
    let top = b << (steps - 1);
    let mut nodes = vec![
        Node::new(
            "fc",
            Layer::Linear {
                in_features: arch.latent_dim,
                out_features: top * 16,
            },
        ),
        Node::new("reshape", Layer::Reshape { shape: vec![top, 4, 4] }),
        Node::new("bn0", Layer::BatchNorm { channels: top }),
        Node::new("relu0", Layer::Relu),
    ];
    let mut ch = top;
    for i in 1..=steps {
        let out = if i == steps { 3 } else { ch / 2 };
        nodes.push(Node::new(
            format!("up{i}"),
            Layer::ConvTranspose {
                in_channels: ch,
                out_channels: out,
            },
        ));
        if i < steps {
            nodes.push(Node::new(format!("bn{i}"), Layer::BatchNorm { channels: out }));
            nodes.push(Node::new(format!("relu{i}"), Layer::Relu));
        }
        ch = out;
    }
    nodes.push(Node::new("tanh", Layer::Tanh));
    Graph::new(vec![arch.latent_dim], nodes)
}

fn trunk(arch: &ArchDescriptor) -> Result<(Vec<Node>, usize)> {
    arch.validate()?;
    let steps = upsampling_steps(arch.resolution)?;
    let mut nodes = Vec::new();
    let mut ch = 3;
    for i in 0..steps {
        let out = arch.base_channels << i;
        nodes.push(Node::new(
            format!("conv{i}"),
            Layer::Conv {
                in_channels: ch,
                out_channels: out,
            },
        ));
        if i > 0 {
            nodes.push(Node::new(format!("bn{i}"), Layer::BatchNorm { channels: out }));
        }
        nodes.push(Node::new(format!("lrelu{i}"), Layer::LeakyRelu));
        ch = out;
    }
    let flat = ch * 16;
    nodes.push(Node::new("flatten", Layer::Reshape { shape: vec![flat] }));
    Ok((nodes, flat))
}

/// Discriminator structure for `arch`.
pub fn discriminator_graph(arch: &ArchDescriptor) -> Result<Graph> {
    let (mut nodes, flat) = trunk(arch)?;
    nodes.push(Node::new(
        "head",
        Layer::Linear {
            in_features: flat,
            out_features: 1,
        },
    ));
    nodes.push(Node::new("sigmoid", Layer::Sigmoid));
    Graph::new(vec![3, arch.resolution, arch.resolution], nodes)
}

/// Encoder structure: discriminator trunk with a `latent_dim` tanh head.
pub fn encoder_graph(arch: &ArchDescriptor) -> Result<Graph> {
    let (mut nodes, flat) = trunk(arch)?;
    nodes.push(Node::new(
        "head",
        Layer::Linear {
            in_features: flat,
            out_features: arch.latent_dim,
        },
    ));
    nodes.push(Node::new("tanh", Layer::Tanh));
    Graph::new(vec![3, arch.resolution, arch.resolution], nodes)
}

pub fn graph_for(role: Role, arch: &ArchDescriptor) -> Result<Graph> {
    match role {
        Role::Generator => generator_graph(arch),
        Role::Discriminator => discriminator_graph(arch),
        Role::Encoder => encoder_graph(arch),
    }
}

/// Expected parameter slots for a role/architecture pair.
pub fn param_slots(role: Role, arch: &ArchDescriptor) -> Result<Vec<ParamSlot>> {
    Ok(graph_for(role, arch)?.param_slots())
}

/// Number of discriminator nodes to evaluate to reach the 8x8 feature tap.
pub fn feature_tap(graph: &Graph) -> Result<usize> {
    (0..graph.len())
        .find(|&i| {
            matches!(graph.nodes()[i].layer, Layer::LeakyRelu) && graph.shape_at(i + 1).get(1) == Some(&8)
        })
        .map(|i| i + 1)
        .ok_or_else(|| Error::InvalidArgument("graph has no 8x8 leaky-relu feature tap".into()))
}

/// Randomly initialized parameters: weights ~ N(0, 0.02), batchnorm scale ~ N(1, 0.02).
pub fn init_params(role: Role, arch: &ArchDescriptor, rng: &mut impl Rng) -> Result<NetworkParams> {
    let slots = param_slots(role, arch)?;
    let normal = Normal::new(0.0f32, 0.02).unwrap();
    let mut tensors = IndexMap::new();
    for slot in &slots {
        let t = if slot.name.ends_with(".weight") {
            Tensor::from_fn(&slot.shape, |_| normal.sample(rng))
        } else if slot.name.ends_with(".gamma") {
            Tensor::from_fn(&slot.shape, |_| 1.0 + normal.sample(rng))
        } else if slot.name.ends_with(".running_var") {
            Tensor::full(&slot.shape, 1.0)
        } else {
            Tensor::zeros(&slot.shape)
        };
        tensors.insert(slot.name.clone(), t);
    }
    NetworkParams::from_slots(role, *arch, &slots, tensors)
}

/// Wrap loaded tensors as parameters of `role`, validating every name and shape.
pub fn params_from_tensors(
    role: Role,
    arch: &ArchDescriptor,
    tensors: IndexMap<String, Tensor>,
) -> Result<NetworkParams> {
    let slots = param_slots(role, arch)?;
    NetworkParams::from_slots(role, *arch, &slots, tensors)
}

pub fn build(role: Role, arch: &ArchDescriptor, rng: &mut impl Rng) -> Result<Network> {
    Ok(Network {
        graph: graph_for(role, arch)?,
        params: init_params(role, arch, rng)?,
    })
}

pub fn build_generator(arch: &ArchDescriptor, rng: &mut impl Rng) -> Result<Network> {
    build(Role::Generator, arch, rng)
}

pub fn build_discriminator(arch: &ArchDescriptor, rng: &mut impl Rng) -> Result<Network> {
    build(Role::Discriminator, arch, rng)
}

pub fn build_encoder(arch: &ArchDescriptor, rng: &mut impl Rng) -> Result<Network> {
    build(Role::Encoder, arch, rng)
}
