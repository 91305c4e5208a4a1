//! Adversarial training of the generator/discriminator pair and supervised encoder training.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gvmw;
use crate::image::ImageRGB;
use crate::latent::LatentVector;
use crate::models::{build_discriminator, build_encoder, build_generator, Network};
use crate::nn::{adam_step, sigmoid, Adam, AdamState, ArchDescriptor, Mode, NetworkParams};
use crate::project::{recon_loss_batch, FeatureExtractor, ReconLoss};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub lr: f32,
    pub beta1: f32,
    pub seed: u64,
    /// Write checkpoints every this many iterations (0 disables).
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl TrainConfig {
    /// Adam 2e-4, beta1 0.5, batch 64.
    pub fn gan() -> Self {
        Self {
            batch_size: 64,
            iterations: 3000,
            lr: 2e-4,
            beta1: 0.5,
            seed: 0,
            checkpoint_every: 0,
            checkpoint_dir: None,
        }
    }

    /// Adam 1e-3, batch 64.
    pub fn encoder() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            ..Self::gan()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.iterations == 0 || !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::InvalidArgument(format!(
                "batch size, iterations and learning rate must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    fn adam(&self) -> Adam {
        Adam::new(self.lr).with_beta1(self.beta1)
    }
}

/// One row of the adversarial loss trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GanTraceRow {
    pub iteration: usize,
    pub d_loss: f32,
    pub g_loss: f32,
    /// Mean `D(x)` on the real batch.
    pub d_real: f32,
    /// Mean `D(G(z))` on the fake batch.
    pub d_fake: f32,
}

#[derive(Clone, Debug)]
pub struct GanOutcome {
    pub generator: Network,
    pub discriminator: Network,
    pub trace: Vec<GanTraceRow>,
}

#[derive(Clone, Debug)]
pub struct EncoderOutcome {
    pub encoder: Network,
    /// `(iteration, mean reconstruction loss of the batch)`.
    pub trace: Vec<(usize, f32)>,
}

/// Draws batches by walking seeded permutations of the dataset.
struct Batcher {
    order: Vec<usize>,
    pos: usize,
}

impl Batcher {
    fn new(len: usize) -> Self {
        Self {
            order: (0..len).collect(),
            pos: len,
        }
    }

    fn next(&mut self, data: &Dataset, size: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let mut picked = Vec::with_capacity(size);
        while picked.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            picked.push(data.items()[self.order[self.pos]].clone());
            self.pos += 1;
        }
        ImageRGB::batch(&picked)
    }
}

pub(crate) fn softplus(a: f32) -> f32 {
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

/// Mean of `-log D` (real) or `-log(1 - D)` (fake) over a batch of logits, with the gradient.
fn logit_loss(logits: &Tensor, real: bool) -> Result<(f32, f32, Tensor)> {
    let n = logits.len() as f32;
    let mut loss = 0.0f64;
    let mut prob = 0.0f64;
    let grad: Vec<f32> = logits
        .data()
        .iter()
        .map(|&a| {
            let s = sigmoid(a);
            prob += s as f64;
            if real {
                loss += softplus(-a) as f64;
                (s - 1.0) / n
            } else {
                loss += softplus(a) as f64;
                s / n
            }
        })
        .collect();
    Ok((
        (loss / n as f64) as f32,
        (prob / n as f64) as f32,
        Tensor::new(logits.shape().to_vec(), grad)?,
    ))
}

fn sample_z(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let zs: Vec<LatentVector> = (0..n).map(|_| LatentVector::sample(dim, rng)).collect();
    LatentVector::batch(&zs)
}

fn check_dataset(data: &Dataset, arch: &ArchDescriptor) -> Result<()> {
    arch.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.resolution() != arch.resolution {
        return Err(Error::InvalidArgument(format!(
            "dataset resolution {} does not match model resolution {}",
            data.resolution(),
            arch.resolution
        )));
    }
    Ok(())
}

/// Logits of the discriminator: every node except the final sigmoid.
fn logits(d: &mut Network, x: &Tensor) -> Result<Tensor> {
    let end = d.graph.len() - 1;
    d.graph.forward_to(&d.params, x, Mode::Train, end)
}

fn write_checkpoint(dir: &Path, iteration: usize, nets: &[(&str, &NetworkParams)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, p) in nets {
        gvmw::save_params(p, dir.join(format!("{name}_{iteration:06}.gvmw")))?;
    }
    Ok(())
}

fn finite(iteration: usize, what: &'static str, v: f32) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { iteration, what })
    }
}

/// Alternating discriminator / generator updates with the non-saturating generator loss.
pub fn train_gan(data: &Dataset, arch: &ArchDescriptor, cfg: &TrainConfig) -> Result<GanOutcome> {
    check_dataset(data, arch)?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut g = build_generator(arch, &mut rng)?;
    let mut d = build_discriminator(arch, &mut rng)?;
    let (mut g_state, mut d_state) = (AdamState::default(), AdamState::default());
    let adam = cfg.adam();
    let mut batcher = Batcher::new(data.len());
    let mut trace = Vec::with_capacity(cfg.iterations);
    let n = cfg.batch_size;

    for it in 1..=cfg.iterations {
        // Discriminator: real and fake batches normalized separately.
        let real = batcher.next(data, n, &mut rng)?;
        let z = sample_z(n, arch.latent_dim, &mut rng)?;
        let fake = g.graph.forward(&g.params, &z, Mode::Train)?;

        let a_real = logits(&mut d, &real)?;
        let (l_real, d_real, up) = logit_loss(&a_real, true)?;
        let grads_real = d.graph.backward_params(&d.params, &up)?;
        d.graph.update_running_stats(&mut d.params)?;
        let a_fake = logits(&mut d, &fake)?;
        let (l_fake, d_fake, up) = logit_loss(&a_fake, false)?;
        let grads_fake = d.graph.backward_params(&d.params, &up)?;
        d.graph.update_running_stats(&mut d.params)?;
        let d_loss = l_real + l_fake;
        finite(it, "discriminator loss", d_loss)?;
        adam_step(&mut d.params, &grads_real.add(&grads_fake)?, &mut d_state, &adam)?;

        // Generator: maximize log D(G(z)).
        let z = sample_z(n, arch.latent_dim, &mut rng)?;
        let fake = g.graph.forward_train(&mut g.params, &z)?;
        let a = logits(&mut d, &fake)?;
        let (g_loss, _, up) = logit_loss(&a, true)?;
        finite(it, "generator loss", g_loss)?;
        let dx = d.graph.backward_input(&d.params, &up)?;
        let g_grads = g.graph.backward_params(&g.params, &dx)?;
        adam_step(&mut g.params, &g_grads, &mut g_state, &adam)?;
        if !g.params.is_finite() || !d.params.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                what: "network parameters",
            });
        }

        trace.push(GanTraceRow {
            iteration: it,
            d_loss,
            g_loss,
            d_real,
            d_fake,
        });
        if it % 100 == 0 {
            log::info!("gan iter {it}: d_loss {d_loss:.4} g_loss {g_loss:.4} D(x) {d_real:.3} D(G(z)) {d_fake:.3}");
        }
        if let Some(dir) = &cfg.checkpoint_dir {
            if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 {
                write_checkpoint(dir, it, &[("generator", &g.params), ("discriminator", &d.params)])?;
            }
        }
    }
    g.graph.clear_cache();
    d.graph.clear_cache();
    Ok(GanOutcome {
        generator: g,
        discriminator: d,
        trace,
    })
}

/// Fit an encoder `P` so that `G(P(x))` reconstructs `x`; `G` is only ever read.
pub fn train_encoder(
    generator: &Network,
    extractor: Option<&FeatureExtractor>,
    loss: &ReconLoss,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<EncoderOutcome> {
    let arch = generator.params.arch;
    check_dataset(data, &arch)?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut p = build_encoder(&arch, &mut rng)?;
    let mut g_graph = generator.graph.clone();
    let mut extractor = extractor.cloned();
    let mut state = AdamState::default();
    let adam = cfg.adam();
    let mut batcher = Batcher::new(data.len());
    let mut trace = Vec::with_capacity(cfg.iterations);

    for it in 1..=cfg.iterations {
        let x = batcher.next(data, cfg.batch_size, &mut rng)?;
        let z = p.graph.forward_train(&mut p.params, &x)?;
        let recon = g_graph.forward(&generator.params, &z, Mode::Inference)?;
        let r = recon_loss_batch(&recon, &x, loss, extractor.as_mut(), true)?;
        let mean = r.values.iter().sum::<f32>() / r.values.len() as f32;
        finite(it, "encoder loss", mean)?;
        let scale = 1.0 / r.values.len() as f32;
        let up = r.grad.unwrap().map(|v| v * scale);
        let dz = g_graph.backward_input(&generator.params, &up)?;
        let grads = p.graph.backward_params(&p.params, &dz)?;
        adam_step(&mut p.params, &grads, &mut state, &adam)?;
        trace.push((it, mean));
        if it % 100 == 0 {
            log::info!("encoder iter {it}: loss {mean:.5}");
        }
        if let Some(dir) = &cfg.checkpoint_dir {
            if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 {
                write_checkpoint(dir, it, &[("encoder", &p.params)])?;
            }
        }
    }
    p.graph.clear_cache();
    Ok(EncoderOutcome { encoder: p, trace })
}

pub fn write_gan_trace(path: impl AsRef<Path>, trace: &[GanTraceRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "iteration,d_loss,g_loss,d_real,d_fake")?;
    for r in trace {
        writeln!(f, "{},{},{},{},{}", r.iteration, r.d_loss, r.g_loss, r.d_real, r.d_fake)?;
    }
    Ok(())
}

pub fn write_encoder_trace(path: impl AsRef<Path>, trace: &[(usize, f32)]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "iteration,enc_loss")?;
    for (i, l) in trace {
        writeln!(f, "{i},{l}")?;
    }
    Ok(())
}

/// Mean `D(G(z))` over `count` fresh latents, with both networks in inference mode.
pub fn mean_fake_score(g: &mut Network, d: &mut Network, count: usize, seed: u64) -> Result<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = sample_z(count, g.params.arch.latent_dim, &mut rng)?;
    let x = g.forward(&z, Mode::Inference)?;
    let s = d.forward(&x, Mode::Inference)?;
    Ok(s.data().iter().sum::<f32>() / count as f32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logit_losses_at_zero_are_log_two() {
        let t = Tensor::zeros(&[4, 1]);
        let (lr, pr, gr) = logit_loss(&t, true).unwrap();
        let (lf, _, gf) = logit_loss(&t, false).unwrap();
        assert!((lr - std::f32::consts::LN_2).abs() < 1e-6);
        assert!((lf - std::f32::consts::LN_2).abs() < 1e-6);
        assert!((pr - 0.5).abs() < 1e-6);
        assert!(gr.data().iter().all(|&g| (g + 0.125).abs() < 1e-7));
        assert!(gf.data().iter().all(|&g| (g - 0.125).abs() < 1e-7));
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(100.0) - 100.0).abs() < 1e-4);
        assert!(softplus(-100.0) >= 0.0 && softplus(-100.0) < 1e-30);
    }
}
