//! Small deterministic networks for tests.

use latentbrush::models::{self, Network};
use latentbrush::nn::ArchDescriptor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 32 px, 8-d latent, 2 base channels: big enough to exercise every layer, small enough for
/// the naive reference.
pub const TOY: ArchDescriptor = ArchDescriptor {
    resolution: 32,
    latent_dim: 8,
    base_channels: 2,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn toy_generator(seed: u64) -> Network {
    models::build_generator(&TOY, &mut rng(seed)).unwrap()
}

pub fn toy_discriminator(seed: u64) -> Network {
    models::build_discriminator(&TOY, &mut rng(seed)).unwrap()
}

pub fn toy_encoder(seed: u64) -> Network {
    models::build_encoder(&TOY, &mut rng(seed)).unwrap()
}

/// Smooth multi-frequency color texture, evaluated at continuous coordinates so shifted copies
/// are exact.
#[derive(Clone, Debug)]
pub struct Texture {
    waves: Vec<[f32; 5]>,
}

impl Texture {
    pub fn new(seed: u64) -> Self {
        use rand::Rng;
        let mut r = rng(seed);
        let waves = (0..12)
            .map(|i| {
                let period = r.gen_range(9.0..20.0f32);
                let angle = r.gen_range(0.0..std::f32::consts::PI);
                let k = std::f32::consts::TAU / period;
                [(i % 3) as f32, k * angle.cos(), k * angle.sin(), r.gen_range(0.0..std::f32::consts::TAU), r.gen_range(0.1..0.25f32)]
            })
            .collect();
        Self { waves }
    }

    /// Value of channel `c` at `(x, y)`, in `[-1, 1]`.
    pub fn at(&self, c: usize, x: f32, y: f32) -> f32 {
        let s: f32 = self
            .waves
            .iter()
            .filter(|w| w[0] as usize == c)
            .map(|w| w[4] * (w[1] * x + w[2] * y + w[3]).sin())
            .sum();
        s.clamp(-0.9, 0.9)
    }

    /// Render with the content displaced by `(dx, dy)`.
    pub fn render(&self, size: usize, dx: f32, dy: f32) -> latentbrush::image::ImageRGB {
        latentbrush::image::ImageRGB::from_fn(size, size, |c, y, x| self.at(c, x as f32 - dx, y as f32 - dy))
    }
}

/// Toy generator with random weights, plus toy discriminator and encoder, as one bundle.
pub fn toy_bundle(seed: u64) -> latentbrush::bundle::ModelBundle {
    let g = crate::randomized(toy_generator(seed), seed ^ 0x51);
    latentbrush::bundle::ModelBundle::new(g, Some(toy_discriminator(seed)), Some(toy_encoder(seed))).unwrap()
}
