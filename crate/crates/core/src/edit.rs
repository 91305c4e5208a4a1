//! Constrained latent editing.
//!
//! The energy of a latent `z` is
//!
//! ```text
//! sum_g weight_g * |f_g(G(z)) - v_g|^2  +  lambda_s * |z - z0|^2  [+ lambda_d * log(1 - D(G(z)))]
//! ```
//!
//! where each brush constraint contributes a masked pixel term, a masked HOG term, or both.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hog::{self, HogConfig};
use crate::image::ImageRGB;
use crate::latent::{clamp_box, interpolate_latents, LatentVector};
use crate::models::Network;
use crate::nn::{sigmoid, Adam, Mode, Moments};
use crate::tensor::Tensor;
use crate::train::softplus;

/// Relative weight of the HOG part of a warp constraint (the pixel part has weight 1).
pub const WARP_SKETCH_WEIGHT: f32 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    fn inside(&self, width: usize, height: usize) -> bool {
        self.w > 0 && self.h > 0 && self.x + self.w <= width && self.y + self.h <= height
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintKind {
    Color,
    Sketch,
    Warp,
}

/// HOG target on a set of cells.
#[derive(Clone, Debug, PartialEq)]
pub struct HogTarget {
    /// `[cells_y, cells_x, bins]`.
    pub descriptor: Tensor,
    /// Per-cell weight in `[0, 1]`.
    pub cells: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    /// Per-pixel RGB target, channel-major.
    Color(Vec<f32>),
    Sketch(HogTarget),
    Warp {
        rect: Rect,
        dx: i32,
        dy: i32,
        color: Vec<f32>,
        hog: HogTarget,
    },
}

/// One brush action: a per-pixel mask, what the masked region should look like, and a weight.
#[derive(Clone, Debug, PartialEq)]
pub struct EditConstraint {
    pub height: usize,
    pub width: usize,
    /// Per-pixel weights in `[0, 1]`, row-major.
    pub mask: Vec<f32>,
    pub target: Target,
    pub weight: f32,
}

impl EditConstraint {
    pub fn kind(&self) -> ConstraintKind {
        match self.target {
            Target::Color(_) => ConstraintKind::Color,
            Target::Sketch(_) => ConstraintKind::Sketch,
            Target::Warp { .. } => ConstraintKind::Warp,
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.height * self.width;
        if self.mask.len() != n {
            return Err(Error::InvalidConstraint(format!(
                "mask has {} entries, expected {n}",
                self.mask.len()
            )));
        }
        if !self.mask.iter().any(|&m| m > 0.0) {
            return Err(Error::InvalidConstraint("mask is empty".into()));
        }
        if self.mask.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::InvalidConstraint("mask weights must lie in [0, 1]".into()));
        }
        if !(self.weight.is_finite() && self.weight >= 0.0) {
            return Err(Error::InvalidConstraint(format!("weight {} is not a nonnegative number", self.weight)));
        }
        let finite = |v: &[f32]| v.iter().all(|x| x.is_finite());
        let ok = match &self.target {
            Target::Color(c) => c.len() == 3 * n && finite(c),
            Target::Sketch(h) => finite(h.descriptor.data()),
            Target::Warp { color, hog, .. } => color.len() == 3 * n && finite(color) && finite(hog.descriptor.data()),
        };
        if !ok {
            return Err(Error::InvalidConstraint("target is malformed or not finite".into()));
        }
        Ok(())
    }
}

/// Soft mask of a polyline brush stroke: 1 within `radius` of the stroke, fading over one pixel.
pub fn stroke_mask(points: &[[f32; 2]], radius: f32, height: usize, width: usize) -> Vec<f32> {
    let mut mask = vec![0.0; height * width];
    if points.is_empty() {
        return mask;
    }
    for y in 0..height {
        for x in 0..width {
            let p = [x as f32 + 0.5, y as f32 + 0.5];
            let d = polyline_distance(points, p);
            mask[y * width + x] = (radius + 0.5 - d).clamp(0.0, 1.0);
        }
    }
    mask
}

fn polyline_distance(points: &[[f32; 2]], p: [f32; 2]) -> f32 {
    let seg = |a: [f32; 2], b: [f32; 2]| {
        let (vx, vy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = vx * vx + vy * vy;
        let t = if len2 > 0.0 {
            (((p[0] - a[0]) * vx + (p[1] - a[1]) * vy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        ((a[0] + t * vx - p[0]).powi(2) + (a[1] + t * vy - p[1]).powi(2)).sqrt()
    };
    if points.len() == 1 {
        return seg(points[0], points[0]);
    }
    points.windows(2).map(|w| seg(w[0], w[1])).fold(f32::INFINITY, f32::min)
}

/// Color brush: pull the masked pixels toward `rgb` (in `[-1, 1]`).
pub fn make_color_constraint(mask: Vec<f32>, height: usize, width: usize, rgb: [f32; 3], weight: f32) -> Result<EditConstraint> {
    let mut target = Vec::with_capacity(3 * height * width);
    for c in rgb {
        target.extend(std::iter::repeat_n(c.clamp(-1.0, 1.0), height * width));
    }
    let c = EditConstraint {
        height,
        width,
        mask,
        target: Target::Color(target),
        weight,
    };
    c.validate()?;
    Ok(c)
}

fn cells_touching(mask: &[f32], height: usize, width: usize, cfg: &HogConfig) -> Vec<f32> {
    let (cy, cx) = cfg.grid(height, width);
    let mut cells = vec![0.0; cy * cx];
    for y in 0..height {
        for x in 0..width {
            if mask[y * width + x] > 0.0 {
                cells[(y / cfg.cell) * cx + x / cfg.cell] = 1.0;
            }
        }
    }
    cells
}

/// Dark stroke of the given line width on a white canvas.
pub fn render_stroke(points: &[[f32; 2]], line_width: f32, height: usize, width: usize) -> ImageRGB {
    let cover = stroke_mask(points, line_width * 0.5, height, width);
    ImageRGB::from_fn(height, width, |_, y, x| 1.0 - 2.0 * cover[y * width + x])
}

/// Sketch brush: the HOG of the rendered stroke becomes the target on every cell it touches.
pub fn make_sketch_constraint(
    points: &[[f32; 2]],
    line_width: f32,
    height: usize,
    width: usize,
    cfg: &HogConfig,
    weight: f32,
) -> Result<EditConstraint> {
    cfg.validate(height, width)?;
    let mask = stroke_mask(points, line_width * 0.5, height, width);
    if !mask.iter().any(|&m| m > 0.0) {
        return Err(Error::InvalidConstraint("stroke covers no pixels".into()));
    }
    let rendered = render_stroke(points, line_width, height, width);
    let descriptor = hog::hog_features(&rendered, cfg)?;
    let cells = cells_touching(&mask, height, width, cfg);
    let c = EditConstraint {
        height,
        width,
        mask,
        target: Target::Sketch(HogTarget { descriptor, cells }),
        weight,
    };
    c.validate()?;
    Ok(c)
}

/// Warp brush: the pixels of `rect` in `frame`, moved by `(dx, dy)`, become both a color and a
/// HOG target at their destination.
pub fn make_warp_constraint(
    frame: &ImageRGB,
    rect: Rect,
    dx: i32,
    dy: i32,
    cfg: &HogConfig,
    weight: f32,
) -> Result<EditConstraint> {
    let (h, w) = (frame.height(), frame.width());
    cfg.validate(h, w)?;
    let dest_x = rect.x as i64 + dx as i64;
    let dest_y = rect.y as i64 + dy as i64;
    if !rect.inside(w, h) || dest_x < 0 || dest_y < 0 {
        return Err(Error::InvalidConstraint(format!("warp {rect:?} by ({dx}, {dy}) leaves the image")));
    }
    let dest = Rect {
        x: dest_x as usize,
        y: dest_y as usize,
        ..rect
    };
    if !dest.inside(w, h) {
        return Err(Error::InvalidConstraint(format!("warp {rect:?} by ({dx}, {dy}) leaves the image")));
    }
    let mut mask = vec![0.0; h * w];
    let mut composite = frame.data().to_vec();
    for y in dest.y..dest.y + dest.h {
        for x in dest.x..dest.x + dest.w {
            mask[y * w + x] = 1.0;
            let (sy, sx) = (y - dest.y + rect.y, x - dest.x + rect.x);
            for c in 0..3 {
                composite[(c * h + y) * w + x] = frame.get(c, sy, sx);
            }
        }
    }
    let descriptor = hog::forward(&composite, h, w, cfg)?.0;
    let cells = cells_touching(&mask, h, w, cfg);
    let c = EditConstraint {
        height: h,
        width: w,
        mask,
        target: Target::Warp {
            rect,
            dx,
            dy,
            color: composite,
            hog: HogTarget { descriptor, cells },
        },
        weight,
    };
    c.validate()?;
    Ok(c)
}

/// Mask-weighted mean Euclidean RGB distance between `frame` and a color-type target.
pub fn masked_color_distance(frame: &ImageRGB, c: &EditConstraint) -> Option<f32> {
    let target = match &c.target {
        Target::Color(t) => t,
        Target::Warp { color, .. } => color,
        Target::Sketch(_) => return None,
    };
    let n = c.height * c.width;
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (i, &m) in c.mask.iter().enumerate() {
        if m > 0.0 {
            let d2: f32 = (0..3).map(|ch| (frame.data()[ch * n + i] - target[ch * n + i]).powi(2)).sum();
            num += (m * d2.sqrt()) as f64;
            den += m as f64;
        }
    }
    Some((num / den) as f32)
}

/// The editable state of one session.
#[derive(Clone, Debug, PartialEq)]
pub struct EditState {
    /// Anchor of the smoothness term.
    pub z0: LatentVector,
    pub z: LatentVector,
    pub constraints: Vec<EditConstraint>,
    pub lambda_s: f32,
    pub lambda_d: f32,
    pub use_discriminator: bool,
    pub steps: usize,
    pub moments: Moments,
}

impl EditState {
    /// `lambda_s = 5`, `lambda_d = 0.01`, realism term off.
    pub fn new(z0: LatentVector) -> Self {
        let d = z0.dim();
        Self {
            z: z0.clone(),
            z0,
            constraints: Vec::new(),
            lambda_s: 5.0,
            lambda_d: 0.01,
            use_discriminator: false,
            steps: 0,
            moments: Moments::zeros(d),
        }
    }

    /// Replace the constraint set; optimizer moments restart.
    pub fn set_constraints(&mut self, constraints: Vec<EditConstraint>) -> Result<()> {
        for c in &constraints {
            c.validate()?;
        }
        self.constraints = constraints;
        self.moments = Moments::zeros(self.z.dim());
        Ok(())
    }

    /// Move to `z` as a fresh starting point, keeping the anchor.
    pub fn jump_to(&mut self, z: LatentVector) {
        self.moments = Moments::zeros(z.dim());
        self.z = z;
    }

    /// Make the current latent the new anchor.
    pub fn accept(&mut self) {
        self.z0 = self.z.clone();
        self.moments = Moments::zeros(self.z.dim());
    }
}

/// Energy value and its gradient with respect to `z`.
#[derive(Clone, Debug)]
pub struct EnergyEval {
    pub energy: f64,
    pub data: f64,
    pub grad: Vec<f32>,
    pub frame: ImageRGB,
}

#[derive(Clone, Debug)]
pub struct StepReport {
    pub frame: ImageRGB,
    /// Energy at the post-step latent.
    pub energy: f64,
    /// Wall-clock milliseconds of each step.
    pub step_ms: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Candidate {
    pub z: LatentVector,
    pub frame: ImageRGB,
    pub energy: f64,
}

/// Generator (and optionally discriminator) used to evaluate and optimize edit energies.
#[derive(Clone, Debug)]
pub struct Editor {
    pub generator: Network,
    pub discriminator: Option<Network>,
    pub hog: HogConfig,
}

/// Sum over constraints of their weighted data terms for one frame, with the frame gradient.
pub fn data_term(constraints: &[EditConstraint], pixels: &[f32], height: usize, width: usize, cfg: &HogConfig, want_grad: bool) -> Result<(f64, Vec<f32>)> {
    let n = height * width;
    let mut grad = vec![0.0f32; if want_grad { 3 * n } else { 0 }];
    let mut total = 0.0f64;
    let needs_hog = constraints.iter().any(|c| c.kind() != ConstraintKind::Color);
    let hog_pass = if needs_hog {
        Some(hog::forward(pixels, height, width, cfg)?)
    } else {
        None
    };
    let mut hog_up: Option<Vec<f32>> = None;
    for c in constraints {
        if c.height != height || c.width != width {
            return Err(Error::InvalidConstraint(format!(
                "constraint is {}x{}, frame is {height}x{width}",
                c.height, c.width
            )));
        }
        let color_term = |target: &[f32], w: f32, grad: &mut Vec<f32>| {
            let mut s = 0.0f64;
            for ch in 0..3 {
                for i in 0..n {
                    let m = c.mask[i];
                    if m == 0.0 {
                        continue;
                    }
                    let d = pixels[ch * n + i] - target[ch * n + i];
                    s += (m * d * d) as f64;
                    if want_grad {
                        grad[ch * n + i] += 2.0 * w * m * d;
                    }
                }
            }
            w as f64 * s
        };
        let hog_term = |t: &HogTarget, w: f32, up: &mut Option<Vec<f32>>| {
            let (desc, _) = hog_pass.as_ref().expect("hog computed for sketch constraints");
            let bins = cfg.bins;
            let mut s = 0.0f64;
            let up = up.get_or_insert_with(|| vec![0.0; desc.len()]);
            for (k, &cw) in t.cells.iter().enumerate() {
                if cw == 0.0 {
                    continue;
                }
                for b in 0..bins {
                    let d = desc.data()[k * bins + b] - t.descriptor.data()[k * bins + b];
                    s += (cw * d * d) as f64;
                    if want_grad {
                        up[k * bins + b] += 2.0 * w * cw * d;
                    }
                }
            }
            w as f64 * s
        };
        total += match &c.target {
            Target::Color(t) => color_term(t, c.weight, &mut grad),
            Target::Sketch(t) => hog_term(t, c.weight, &mut hog_up),
            Target::Warp { color, hog, .. } => {
                color_term(color, c.weight, &mut grad) + hog_term(hog, c.weight * WARP_SKETCH_WEIGHT, &mut hog_up)
            }
        };
    }
    if let (true, Some(up), Some((desc, tape))) = (want_grad, hog_up, hog_pass.as_ref()) {
        let g = tape.backward(&Tensor::new(desc.shape().to_vec(), up)?)?;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok((total, grad))
}

impl Editor {
    pub fn new(generator: Network, discriminator: Option<Network>, hog: HogConfig) -> Self {
        Self {
            generator,
            discriminator,
            hog,
        }
    }

    pub fn resolution(&self) -> usize {
        self.generator.params.arch.resolution
    }

    pub fn render(&mut self, z: &LatentVector) -> Result<ImageRGB> {
        let x = self.generator.forward(&z.to_tensor(), Mode::Inference)?;
        ImageRGB::from_tensor(&x, 0)
    }

    /// Energy of `z` under `state`'s constraints and weights, with the gradient if requested.
    pub fn evaluate(&mut self, state: &EditState, z: &[f32], want_grad: bool) -> Result<EnergyEval> {
        let res = self.resolution();
        let zt = Tensor::new(vec![1, z.len()], z.to_vec())?;
        let x = self.generator.forward(&zt, Mode::Inference)?;
        let (data, mut dx) = data_term(&state.constraints, x.data(), res, res, &self.hog, want_grad)?;
        let mut energy = data;
        if state.use_discriminator {
            let d = self
                .discriminator
                .as_mut()
                .ok_or_else(|| Error::InvalidArgument("realism term needs a discriminator".into()))?;
            let end = d.graph.len() - 1;
            let logit = d.graph.forward_to(&d.params, &x, Mode::Inference, end)?;
            let a = logit.data()[0];
            // log(1 - sigmoid(a)) = -softplus(a)
            energy -= (state.lambda_d * softplus(a)) as f64;
            if want_grad {
                let up = Tensor::new(logit.shape().to_vec(), vec![-state.lambda_d * sigmoid(a)])?;
                let g = d.graph.backward_input(&d.params, &up)?;
                for (acc, v) in dx.iter_mut().zip(g.data()) {
                    *acc += v;
                }
            }
        }
        let z0 = state.z0.values();
        energy += state.lambda_s as f64 * z.iter().zip(z0).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>();
        let grad = if want_grad {
            let mut g = self
                .generator
                .backward_input(&Tensor::new(x.shape().to_vec(), dx)?)?
                .into_data();
            for ((gi, a), b) in g.iter_mut().zip(z).zip(z0) {
                *gi += 2.0 * state.lambda_s * (a - b);
            }
            g
        } else {
            Vec::new()
        };
        if !energy.is_finite() {
            return Err(Error::EnergyDiverged);
        }
        Ok(EnergyEval {
            energy,
            data,
            grad,
            frame: ImageRGB::from_tensor(&x, 0)?,
        })
    }

    /// `k` Adam steps on `state.z` with box clamping.
    pub fn step(&mut self, state: &mut EditState, k: usize, lr: f32) -> Result<StepReport> {
        let adam = Adam::new(lr);
        let mut z = state.z.values().to_vec();
        let mut step_ms = Vec::with_capacity(k);
        for _ in 0..k {
            let start = Instant::now();
            let e = self.evaluate(state, &z, true)?;
            adam.step(&mut z, &e.grad, &mut state.moments)?;
            clamp_box(&mut z);
            step_ms.push(start.elapsed().as_secs_f64() * 1e3);
        }
        state.z = LatentVector::new(z)?;
        state.steps += k;
        let e = self.evaluate(state, state.z.values(), false)?;
        Ok(StepReport {
            frame: e.frame,
            energy: e.energy,
            step_ms,
        })
    }

    /// Run `count` short optimizations from perturbations of `z0` and keep the `keep` lowest
    /// final energies, ascending.
    #[allow(clippy::too_many_arguments)]
    pub fn candidates(
        &self,
        state: &EditState,
        count: usize,
        keep: usize,
        perturb: f32,
        k: usize,
        lr: f32,
        seed: u64,
    ) -> Result<Vec<Candidate>> {
        if count == 0 || keep == 0 || keep > count {
            return Err(Error::InvalidArgument(format!("cannot keep {keep} of {count} candidates")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let starts: Vec<LatentVector> = (0..count)
            .map(|_| {
                let mut v: Vec<f32> = state
                    .z0
                    .values()
                    .iter()
                    .map(|&x| if perturb > 0.0 { x + rng.gen_range(-perturb..=perturb) } else { x })
                    .collect();
                clamp_box(&mut v);
                LatentVector::new(v)
            })
            .collect::<Result<_>>()?;
        let mut pool: Vec<(usize, Candidate)> = starts
            .into_par_iter()
            .enumerate()
            .map_init(
                || self.clone(),
                |ed, (i, z)| {
                    let mut s = state.clone();
                    s.jump_to(z);
                    let r = ed.step(&mut s, k, lr)?;
                    Ok((
                        i,
                        Candidate {
                            z: s.z,
                            frame: r.frame,
                            energy: r.energy,
                        },
                    ))
                },
            )
            .collect::<Result<_>>()?;
        pool.sort_by(|a, b| a.1.energy.total_cmp(&b.1.energy).then(a.0.cmp(&b.0)));
        Ok(pool.into_iter().take(keep).map(|(_, c)| c).collect())
    }

    /// Frames along the straight latent path from the anchor to the current edit (`m + 1` frames).
    pub fn relative_sequence(&mut self, state: &EditState, m: usize) -> Result<Vec<ImageRGB>> {
        interpolate_latents(&state.z0, &state.z, m)?
            .iter()
            .map(|z| self.render(z))
            .collect()
    }
}
