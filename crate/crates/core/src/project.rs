//! Projection of photos onto the generator's range.
//!
//! The reconstruction loss mixes a mean-squared pixel term with a mean-squared term over
//! features of a fixed extractor (by default the discriminator's 8x8 tap). Three projectors are
//! provided: optimization from random latents, a single encoder prediction, and the encoder
//! prediction refined by optimization.

use std::fmt;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageRGB;
use crate::latent::{clamp_box, LatentVector};
use crate::models::{feature_tap, Network};
use crate::nn::{Adam, Graph, Mode, Moments, NetworkParams};
use crate::tensor::Tensor;

/// Weights of the pixel and feature terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconLoss {
    pub pixel_weight: f32,
    pub feature_weight: f32,
}

impl Default for ReconLoss {
    fn default() -> Self {
        Self {
            pixel_weight: 1.0,
            feature_weight: 0.002,
        }
    }
}

impl ReconLoss {
    pub fn validate(&self) -> Result<()> {
        let ok = |w: f32| w.is_finite() && w >= 0.0;
        if !ok(self.pixel_weight) || !ok(self.feature_weight) || self.pixel_weight + self.feature_weight <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be >= 0 with one positive, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// A prefix of some network, evaluated in inference mode, used as the feature space `C`.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    graph: Graph,
    params: NetworkParams,
    end: usize,
}

impl FeatureExtractor {
    pub fn new(graph: Graph, params: NetworkParams, end: usize) -> Result<Self> {
        if end == 0 || end > graph.len() {
            return Err(Error::InvalidArgument(format!(
                "feature prefix {end} outside 1..={}",
                graph.len()
            )));
        }
        Ok(Self { graph, params, end })
    }

    /// The discriminator's designated feature tap.
    pub fn discriminator(d: &Network) -> Result<Self> {
        let end = feature_tap(&d.graph)?;
        Self::new(d.graph.clone(), d.params.clone(), end)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        self.graph.forward_to(&self.params, x, Mode::Inference, self.end)
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        self.graph.backward_input(&self.params, upstream)
    }
}

/// Loss of a batch of reconstructions against targets.
#[derive(Clone, Debug)]
pub struct BatchLoss {
    /// One loss per sample.
    pub values: Vec<f32>,
    /// Gradient of `sum(values)` with respect to `x`, if requested.
    pub grad: Option<Tensor>,
}

/// Per-sample loss of `x` against `target` (both `[n, 3, h, w]`), optionally with the gradient.
pub fn recon_loss_batch(
    x: &Tensor,
    target: &Tensor,
    cfg: &ReconLoss,
    extractor: Option<&mut FeatureExtractor>,
    want_grad: bool,
) -> Result<BatchLoss> {
    cfg.validate()?;
    if x.shape() != target.shape() || x.rank() != 4 {
        return Err(Error::Shape {
            node: "recon_loss".into(),
            expected: target.shape().to_vec(),
            got: x.shape().to_vec(),
        });
    }
    let n = x.batch();
    let per = x.sample_len();
    let mut values = vec![0.0f32; n];
    let mut grad = want_grad.then(|| vec![0.0f32; x.len()]);
    if cfg.pixel_weight > 0.0 {
        for s in 0..n {
            let (a, b) = (x.sample(s), target.sample(s));
            let sq: f64 = a.iter().zip(b).map(|(p, q)| ((p - q) as f64).powi(2)).sum();
            values[s] += cfg.pixel_weight * (sq / per as f64) as f32;
            if let Some(g) = grad.as_mut() {
                let scale = 2.0 * cfg.pixel_weight / per as f32;
                for (k, (p, q)) in a.iter().zip(b).enumerate() {
                    g[s * per + k] += scale * (p - q);
                }
            }
        }
    }
    if cfg.feature_weight > 0.0 {
        let ext = extractor.ok_or_else(|| {
            Error::InvalidArgument("feature weight is positive but no feature extractor was given".into())
        })?;
        let ft = ext.forward(target)?;
        let fx = ext.forward(x)?;
        let fper = fx.sample_len();
        let mut up = vec![0.0f32; fx.len()];
        for s in 0..n {
            let (a, b) = (fx.sample(s), ft.sample(s));
            let sq: f64 = a.iter().zip(b).map(|(p, q)| ((p - q) as f64).powi(2)).sum();
            values[s] += cfg.feature_weight * (sq / fper as f64) as f32;
            let scale = 2.0 * cfg.feature_weight / fper as f32;
            for (k, (p, q)) in a.iter().zip(b).enumerate() {
                up[s * fper + k] = scale * (p - q);
            }
        }
        if let Some(g) = grad.as_mut() {
            let dx = ext.backward(&Tensor::new(fx.shape().to_vec(), up)?)?;
            for (acc, v) in g.iter_mut().zip(dx.data()) {
                *acc += v;
            }
        }
    }
    let grad = grad.map(|g| Tensor::new(x.shape().to_vec(), g)).transpose()?;
    Ok(BatchLoss { values, grad })
}

/// Loss of one image against another, with the gradient with respect to `x`.
pub fn recon_loss(
    x: &ImageRGB,
    target: &ImageRGB,
    cfg: &ReconLoss,
    extractor: Option<&mut FeatureExtractor>,
) -> Result<(f32, ImageGrad)> {
    let r = recon_loss_batch(&x.to_tensor(), &target.to_tensor(), cfg, extractor, true)?;
    Ok((r.values[0], ImageGrad(r.grad.unwrap().into_data())))
}

/// Gradient with respect to an image, channel-major like [`ImageRGB::data`].
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrad(pub Vec<f32>);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Opt,
    Net,
    Hybrid,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Opt => "opt",
            Method::Net => "net",
            Method::Hybrid => "hybrid",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "opt" => Ok(Method::Opt),
            "net" => Ok(Method::Net),
            "hybrid" => Ok(Method::Hybrid),
            other => Err(Error::InvalidArgument(format!("unknown projection method {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProjectionResult {
    pub z: LatentVector,
    pub reconstruction: ImageRGB,
    pub loss: f32,
    pub method: Method,
    pub iterations: usize,
    /// Loss at every evaluated iterate, starting with the initialization.
    pub trace: Vec<f32>,
}

/// Latent optimizer used by the optimization-based projectors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Optimizer {
    Adam { lr: f32 },
    /// Projected gradient descent with backtracking; the loss never increases.
    LineSearch { initial_step: f32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    pub optimizer: Optimizer,
    pub steps: usize,
    pub restarts: usize,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam { lr: 0.1 },
            steps: 100,
            restarts: 10,
        }
    }
}

/// Generator, optional encoder and feature extractor bundled for projection.
#[derive(Clone, Debug)]
pub struct Projector {
    pub generator: Network,
    pub encoder: Option<Network>,
    pub extractor: Option<FeatureExtractor>,
    pub loss: ReconLoss,
}

impl Projector {
    pub fn new(generator: Network, encoder: Option<Network>, extractor: Option<FeatureExtractor>, loss: ReconLoss) -> Self {
        Self {
            generator,
            encoder,
            extractor,
            loss,
        }
    }

    pub fn resolution(&self) -> usize {
        self.generator.params.arch.resolution
    }

    pub fn latent_dim(&self) -> usize {
        self.generator.params.arch.latent_dim
    }

    fn check_target(&self, target: &ImageRGB) -> Result<()> {
        let r = self.resolution();
        if target.height() != r || target.width() != r {
            return Err(Error::InvalidArgument(format!(
                "target is {}x{}, model resolution is {r}",
                target.height(),
                target.width()
            )));
        }
        Ok(())
    }

    pub fn render(&mut self, z: &LatentVector) -> Result<ImageRGB> {
        let x = self.generator.forward(&z.to_tensor(), Mode::Inference)?;
        ImageRGB::from_tensor(&x, 0)
    }

    /// Loss of `G(z)` against `target`.
    pub fn loss_at(&mut self, z: &LatentVector, target: &ImageRGB) -> Result<f32> {
        let x = self.generator.forward(&z.to_tensor(), Mode::Inference)?;
        Ok(recon_loss_batch(&x, &target.to_tensor(), &self.loss, self.extractor.as_mut(), false)?.values[0])
    }

    /// Loss of `G(z)` against `target` and its gradient with respect to `z`.
    pub fn loss_and_grad(&mut self, z: &[f32], target: &Tensor) -> Result<(f32, Vec<f32>)> {
        let zt = Tensor::new(vec![1, z.len()], z.to_vec())?;
        let x = self.generator.forward(&zt, Mode::Inference)?;
        let r = recon_loss_batch(&x, target, &self.loss, self.extractor.as_mut(), true)?;
        let dz = self.generator.backward_input(&r.grad.unwrap())?;
        Ok((r.values[0], dz.into_data()))
    }

    fn finish(&mut self, z: LatentVector, loss: f32, method: Method, iterations: usize, trace: Vec<f32>) -> Result<ProjectionResult> {
        let reconstruction = self.render(&z)?;
        Ok(ProjectionResult {
            z,
            reconstruction,
            loss,
            method,
            iterations,
            trace,
        })
    }

    /// Run `steps` optimizer updates from `init`; returns the best iterate seen, its loss and
    /// the loss trace. Non-finite losses abort the run.
    pub fn optimize(
        &mut self,
        init: &LatentVector,
        target: &ImageRGB,
        optimizer: Optimizer,
        steps: usize,
    ) -> Result<(LatentVector, f32, Vec<f32>)> {
        self.check_target(target)?;
        let t = target.to_tensor();
        let mut z = init.values().to_vec();
        let (mut loss, mut grad) = self.loss_and_grad(&z, &t)?;
        let mut trace = vec![loss];
        let mut best = (z.clone(), loss);
        let diverged = |iteration| Error::Diverged {
            iteration,
            what: "projection loss",
        };
        if !loss.is_finite() {
            return Err(diverged(0));
        }
        match optimizer {
            Optimizer::Adam { lr } => {
                let adam = Adam::new(lr);
                let mut m = Moments::zeros(z.len());
                for _ in 0..steps {
                    adam.step(&mut z, &grad, &mut m)?;
                    clamp_box(&mut z);
                    (loss, grad) = self.loss_and_grad(&z, &t)?;
                    if !loss.is_finite() {
                        return Err(diverged(trace.len()));
                    }
                    trace.push(loss);
                    if loss < best.1 {
                        best = (z.clone(), loss);
                    }
                }
            }
            Optimizer::LineSearch { initial_step } => {
                let mut step = initial_step;
                for _ in 0..steps {
                    let mut accepted = false;
                    for _ in 0..30 {
                        let mut cand: Vec<f32> = z.iter().zip(&grad).map(|(v, g)| v - step * g).collect();
                        clamp_box(&mut cand);
                        let (l, g) = self.loss_and_grad(&cand, &t)?;
                        if l.is_finite() && l <= loss {
                            (z, loss, grad) = (cand, l, g);
                            step *= 2.0;
                            accepted = true;
                            break;
                        }
                        step *= 0.5;
                    }
                    trace.push(loss);
                    if !accepted {
                        break;
                    }
                }
                best = (z, loss);
            }
        }
        Ok((LatentVector::new(best.0)?, best.1, trace))
    }

    /// Best of `cfg.restarts` optimizations from uniformly sampled latents.
    pub fn project_opt(&self, target: &ImageRGB, cfg: &OptConfig, seed: u64) -> Result<ProjectionResult> {
        self.check_target(target)?;
        if cfg.restarts == 0 {
            return Err(Error::InvalidArgument("at least one restart is required".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inits: Vec<LatentVector> = (0..cfg.restarts)
            .map(|_| LatentVector::sample(self.latent_dim(), &mut rng))
            .collect();
        let runs: Vec<Option<(LatentVector, f32, Vec<f32>)>> = inits
            .par_iter()
            .map_init(
                || self.clone(),
                |p, init| match p.optimize(init, target, cfg.optimizer, cfg.steps) {
                    Ok(r) => Some(r),
                    Err(e) => {
                        log::warn!("discarding restart: {e}");
                        None
                    }
                },
            )
            .collect();
        let (z, loss, trace) = runs
            .into_iter()
            .flatten()
            .fold(None::<(LatentVector, f32, Vec<f32>)>, |acc, r| match acc {
                Some(a) if a.1 <= r.1 => Some(a),
                _ => Some(r),
            })
            .ok_or(Error::AllRestartsFailed)?;
        self.clone().finish(z, loss, Method::Opt, cfg.steps, trace)
    }

    /// Encoder prediction `z = P(target)`.
    pub fn predict(&mut self, target: &ImageRGB) -> Result<LatentVector> {
        self.check_target(target)?;
        let p = self
            .encoder
            .as_mut()
            .ok_or_else(|| Error::InvalidArgument("projector has no encoder".into()))?;
        let z = p.forward(&target.to_tensor(), Mode::Inference)?;
        LatentVector::new(z.into_data())
    }

    pub fn project_net(&mut self, target: &ImageRGB) -> Result<ProjectionResult> {
        let z = self.predict(target)?;
        let loss = self.loss_at(&z, target)?;
        self.finish(z, loss, Method::Net, 0, vec![loss])
    }

    /// Optimization seeded at the encoder prediction.
    pub fn project_hybrid(&mut self, target: &ImageRGB, optimizer: Optimizer, steps: usize) -> Result<ProjectionResult> {
        let init = self.predict(target)?;
        let (z, loss, trace) = self.optimize(&init, target, optimizer, steps)?;
        self.finish(z, loss, Method::Hybrid, steps, trace)
    }

    /// Dispatch on `method`, returning the result and the wall-clock seconds spent.
    pub fn project(&mut self, target: &ImageRGB, method: Method, cfg: &OptConfig, seed: u64) -> Result<(ProjectionResult, f64)> {
        let start = Instant::now();
        let r = match method {
            Method::Opt => self.project_opt(target, cfg, seed)?,
            Method::Net => self.project_net(target)?,
            Method::Hybrid => self.project_hybrid(target, cfg.optimizer, cfg.steps)?,
        };
        Ok((r, start.elapsed().as_secs_f64()))
    }
}
