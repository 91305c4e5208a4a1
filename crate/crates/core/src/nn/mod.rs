//! Dense layers and reverse-mode gradients for the closed layer set used by the networks.

mod adam;
mod graph;
pub(crate) mod kernels;
mod params;

pub use adam::{adam_step, Adam, AdamState, Moments};
pub use graph::{Graph, Layer, Mode, Node, ParamSlot, BN_EPS, BN_MOMENTUM, LEAKY_SLOPE};
pub(crate) use graph::sigmoid;
pub use params::{ArchDescriptor, Gradients, NetworkParams, Role};
