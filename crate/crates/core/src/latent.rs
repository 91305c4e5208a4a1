use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A point of the latent box `[-1, 1]^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentVector(Vec<f32>);

impl LatentVector {
    /// Build from raw values, clamping each coordinate into the box.
    pub fn new(mut values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("latent vector must be non-empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("latent vector must be finite".into()));
        }
        clamp_box(&mut values);
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    /// Uniform sample from `[-1, 1]^dim`.
    pub fn sample(dim: usize, rng: &mut impl Rng) -> Self {
        Self((0..dim).map(|_| rng.gen_range(-1.0f32..=1.0)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f32> {
        self.0
    }

    /// As a `[1, dim]` batch.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, self.0.len()], self.0.clone()).unwrap()
    }

    /// Stack latents of equal dimension into a `[n, dim]` batch.
    pub fn batch(latents: &[LatentVector]) -> Result<Tensor> {
        let dim = latents
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty latent batch".into()))?
            .dim();
        let mut data = Vec::with_capacity(dim * latents.len());
        for z in latents {
            if z.dim() != dim {
                return Err(Error::Shape {
                    node: "latent batch".into(),
                    expected: vec![dim],
                    got: vec![z.dim()],
                });
            }
            data.extend_from_slice(&z.0);
        }
        Tensor::new(vec![latents.len(), dim], data)
    }

    /// Split a `[n, dim]` batch back into latents (clamped).
    pub fn unbatch(t: &Tensor) -> Result<Vec<LatentVector>> {
        (0..t.batch()).map(|i| LatentVector::new(t.sample(i).to_vec())).collect()
    }

    /// Squared Euclidean distance.
    pub fn distance(&self, other: &LatentVector) -> f32 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// The `n + 1` points `(1 - t/n) z0 + (t/n) z1` for `t = 0..=n`.
    pub fn interpolate(z0: &LatentVector, z1: &LatentVector, n: usize) -> Result<Vec<LatentVector>> {
        if z0.dim() != z1.dim() {
            return Err(Error::Shape {
                node: "interpolate".into(),
                expected: vec![z0.dim()],
                got: vec![z1.dim()],
            });
        }
        if n == 0 {
            return Err(Error::InvalidArgument("interpolation needs at least one step".into()));
        }
        Ok((0..=n)
            .map(|t| {
                let b = t as f32 / n as f32;
                let a = 1.0 - b;
                LatentVector(z0.0.iter().zip(&z1.0).map(|(x, y)| a * x + b * y).collect())
            })
            .collect())
    }
}

/// Clamp every coordinate into `[-1, 1]`.
pub fn clamp_box(values: &mut [f32]) {
    for v in values {
        *v = v.clamp(-1.0, 1.0);
    }
}

pub fn sample_latent(dim: usize, rng: &mut impl Rng) -> LatentVector {
    LatentVector::sample(dim, rng)
}

pub fn interpolate_latents(z0: &LatentVector, z1: &LatentVector, n: usize) -> Result<Vec<LatentVector>> {
    LatentVector::interpolate(z0, z1, n)
}

pub fn latent_distance(z0: &LatentVector, z1: &LatentVector) -> f32 {
    z0.distance(z1)
}
