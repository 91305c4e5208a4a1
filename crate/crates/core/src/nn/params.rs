use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which network a parameter bundle belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Generator,
    Discriminator,
    Encoder,
}

/// Architecture hyper-parameters shared by the generator, discriminator and encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub resolution: usize,
    pub latent_dim: usize,
    pub base_channels: usize,
}

impl ArchDescriptor {
    /// Desk-scale default: 32 px, 100-d latent, 64 base channels.
    pub const DESK: ArchDescriptor = ArchDescriptor {
        resolution: 32,
        latent_dim: 100,
        base_channels: 64,
    };

    /// The 64x64x3 / 100-d configuration.
    pub const FULL: ArchDescriptor = ArchDescriptor {
        resolution: 64,
        latent_dim: 100,
        base_channels: 128,
    };

    pub fn validate(&self) -> Result<()> {
        if self.resolution != 32 && self.resolution != 64 {
            return Err(Error::UnsupportedResolution(self.resolution));
        }
        if self.latent_dim == 0 || self.base_channels == 0 {
            return Err(Error::InvalidArgument(
                "latent_dim and base_channels must be positive".into(),
            ));
        }
        Ok(())
    }
}

impl Default for ArchDescriptor {
    fn default() -> Self {
        Self::DESK
    }
}

/// Named parameter tensors of one network, in layer order.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub role: Role,
    pub arch: ArchDescriptor,
    tensors: IndexMap<String, Tensor>,
}

impl NetworkParams {
    /// Wrap a tensor map; names and shapes must match `slots` exactly.
    pub fn from_slots(
        role: Role,
        arch: ArchDescriptor,
        slots: &[super::ParamSlot],
        mut tensors: IndexMap<String, Tensor>,
    ) -> Result<Self> {
        let mut ordered = IndexMap::with_capacity(slots.len());
        for slot in slots {
            let t = tensors
                .shift_remove(&slot.name)
                .ok_or_else(|| Error::MissingTensor(slot.name.clone()))?;
            if t.shape() != slot.shape.as_slice() {
                return Err(Error::TensorShapeMismatch {
                    name: slot.name.clone(),
                    expected: slot.shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
            ordered.insert(slot.name.clone(), t);
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::UnexpectedTensor(extra.clone()));
        }
        Ok(Self {
            role,
            arch,
            tensors: ordered,
        })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub(crate) fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub(crate) fn require(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }
}

/// Gradient tensors for the trainable slots of a network, keyed like [`NetworkParams`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    tensors: IndexMap<String, Tensor>,
}

impl Gradients {
    pub(crate) fn insert(&mut self, name: String, t: Tensor) {
        self.tensors.insert(name, t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// Elementwise sum of two gradient sets over the same slots.
    pub fn add(&self, other: &Gradients) -> Result<Gradients> {
        let mut out = Gradients::default();
        for (name, t) in &self.tensors {
            let o = other
                .tensors
                .get(name)
                .ok_or_else(|| Error::MissingTensor(name.clone()))?;
            out.insert(name.clone(), t.axpy(1.0, o)?);
        }
        Ok(out)
    }
}
