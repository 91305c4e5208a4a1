//! Finite-difference checks of the image-space objectives (HOG, reconstruction loss, edit
//! energy) against `f64` reference evaluations.

use latentbrush::edit::{make_color_constraint, make_sketch_constraint, make_warp_constraint, stroke_mask, EditConstraint, EditState, Editor, Rect, Target, WARP_SKETCH_WEIGHT};
use latentbrush::hog::{self, HogConfig, MAGNITUDE_DELTA};
use latentbrush::image::ImageRGB;
use latentbrush::latent::LatentVector;
use latentbrush::models::{feature_tap, Network};
use latentbrush::nn::Mode;
use latentbrush::project::{recon_loss, FeatureExtractor, ReconLoss};
use latentbrush::Tensor;
use latentbrush_oracle::hog::hog as ref_hog;
use latentbrush_oracle::layers::{forward, forward_gated};
use latentbrush_oracle::SplitMix;

use crate::fixtures::{toy_discriminator, toy_generator, TOY};
use crate::{compare, params_f64, random_params, ref_layers, GradCheck, FD_STEP};

fn central(eval: impl Fn(&[f64]) -> f64, x0: &[f64], coords: &[usize]) -> Vec<f64> {
    let mut probe = x0.to_vec();
    coords
        .iter()
        .map(|&i| {
            probe[i] = x0[i] + FD_STEP;
            let fp = eval(&probe);
            probe[i] = x0[i] - FD_STEP;
            let fm = eval(&probe);
            probe[i] = x0[i];
            (fp - fm) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Richardson extrapolation of central differences at `FD_STEP` and `FD_STEP / 2`, which cancels
/// the second-order truncation term.
fn central_extrapolated(eval: impl Fn(&[f64]) -> f64, x0: &[f64], coords: &[usize]) -> Vec<f64> {
    let mut probe = x0.to_vec();
    let mut diff = |i: usize, h: f64| {
        probe[i] = x0[i] + h;
        let fp = eval(&probe);
        probe[i] = x0[i] - h;
        let fm = eval(&probe);
        probe[i] = x0[i];
        (fp - fm) / (2.0 * h)
    };
    coords
        .iter()
        .map(|&i| {
            let coarse = diff(i, FD_STEP);
            let fine = diff(i, FD_STEP / 2.0);
            (4.0 * fine - coarse) / 3.0
        })
        .collect()
}

fn reference_hog(pixels: &[f64], h: usize, w: usize, cfg: &HogConfig) -> Vec<f64> {
    ref_hog(
        pixels,
        h,
        w,
        cfg.cell,
        cfg.bins,
        cfg.temperature as f64,
        cfg.eps as f64,
        MAGNITUDE_DELTA as f64,
    )
}

/// Smooth random image: a few random blobs over a random gradient.
pub fn random_image(size: usize, seed: u64) -> ImageRGB {
    let mut r = SplitMix(seed);
    let blobs: Vec<[f64; 6]> = (0..4)
        .map(|_| {
            [
                r.uniform(0.0, size as f64),
                r.uniform(0.0, size as f64),
                r.uniform(2.0, size as f64 / 3.0),
                r.uniform(-1.0, 1.0),
                r.uniform(-1.0, 1.0),
                r.uniform(-1.0, 1.0),
            ]
        })
        .collect();
    let tilt = r.vec(3, -0.5, 0.5);
    ImageRGB::from_fn(size, size, |c, y, x| {
        let mut v = tilt[c] * (x as f64 / size as f64 - 0.5);
        for b in &blobs {
            let d2 = (x as f64 - b[0]).powi(2) + (y as f64 - b[1]).powi(2);
            v += b[3 + c] * (-d2 / (2.0 * b[2] * b[2])).exp();
        }
        (v * 0.8).clamp(-0.95, 0.95) as f32
    })
}

/// Uniform noise image in `[-0.9, 0.9]`.
pub fn noise_image(size: usize, seed: u64) -> ImageRGB {
    let mut r = SplitMix(seed);
    ImageRGB::from_fn(size, size, |_, _, _| r.uniform(-0.9, 0.9) as f32)
}

/// HOG vector-Jacobian product against differences of the reference descriptor.
///
/// The soft orientation assignment is sharply curved, so plain central differences at
/// `FD_STEP` carry truncation errors of a few percent on some pixels; the comparison uses the
/// extrapolated differences instead. `plain_hog_check` keeps the uncorrected variant.
pub fn check_hog_instance(seed: u64) -> GradCheck {
    hog_check(seed, true)
}

pub fn plain_hog_check(seed: u64) -> GradCheck {
    hog_check(seed, false)
}

fn hog_check(seed: u64, extrapolate: bool) -> GradCheck {
    let size = 16;
    let cfg = HogConfig::default();
    let img = noise_image(size, seed);
    let (desc, tape) = hog::forward(img.data(), size, size, &cfg).unwrap();
    let w = SplitMix(seed ^ 0x40c).vec(desc.len(), -1.0, 1.0);
    let up = Tensor::new(desc.shape().to_vec(), w.iter().map(|&v| v as f32).collect()).unwrap();
    let analytic: Vec<f64> = tape.backward(&up).unwrap().into_iter().map(|v| v as f64).collect();
    let x0: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
    let eval = |x: &[f64]| reference_hog(x, size, size, &cfg).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
    let coords: Vec<usize> = (0..x0.len()).collect();
    let numeric = if extrapolate {
        central_extrapolated(eval, &x0, &coords)
    } else {
        central(eval, &x0, &coords)
    };
    compare(&analytic, &numeric)
}

/// Largest difference between the descriptor and the reference descriptor on one image.
pub fn hog_value_gap(seed: u64) -> f64 {
    let size = 16;
    let cfg = HogConfig::default();
    let img = random_image(size, seed);
    let ours = hog::hog_features(&img, &cfg).unwrap();
    let x: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
    let theirs = reference_hog(&x, size, size, &cfg);
    ours.data().iter().zip(&theirs).map(|(a, b)| (*a as f64 - b).abs()).fold(0.0, f64::max)
}

/// Reconstruction loss gradient against differences of the reference loss, on a sample of
/// pixel coordinates. Odd seeds weight the feature term heavily so it dominates.
pub fn check_recon_instance(seed: u64, coords_per_instance: usize) -> GradCheck {
    let mut d = toy_discriminator(seed);
    d.params = random_params(&d.graph, seed ^ 0xd15c);
    let cfg = if seed % 2 == 0 {
        ReconLoss::default()
    } else {
        ReconLoss {
            pixel_weight: 0.1,
            feature_weight: 1.0,
        }
    };
    let size = TOY.resolution;
    let x = random_image(size, seed);
    let target = random_image(size, seed ^ 0x7a7);
    let mut ext = FeatureExtractor::discriminator(&d).unwrap();
    let (_, grad) = recon_loss(&x, &target, &cfg, Some(&mut ext)).unwrap();

    let tap = feature_tap(&d.graph).unwrap();
    let p = params_f64(&d.params);
    let layers = ref_layers(&d.graph, &p, Mode::Inference, tap);
    let shape = [3, size, size];
    let x0: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let t: Vec<f64> = target.data().iter().map(|&v| v as f64).collect();
    let ft = forward(&layers, &t, 1, &shape).data;
    let gates = forward(&layers, &x0, 1, &shape).gates;
    let eval = |xs: &[f64]| {
        let pix = xs.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / xs.len() as f64;
        let fx = forward_gated(&layers, xs, 1, &shape, Some(&gates)).data;
        let feat = fx.iter().zip(&ft).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / fx.len() as f64;
        cfg.pixel_weight as f64 * pix + cfg.feature_weight as f64 * feat
    };
    let mut pick = SplitMix(seed ^ 0xc0);
    let coords: Vec<usize> = (0..coords_per_instance).map(|_| (pick.next_u64() % x0.len() as u64) as usize).collect();
    let analytic: Vec<f64> = coords.iter().map(|&i| grad.0[i] as f64).collect();
    compare(&analytic, &central(eval, &x0, &coords))
}

fn random_points(r: &mut SplitMix, size: usize, count: usize) -> Vec<[f32; 2]> {
    (0..count)
        .map(|_| [r.uniform(4.0, size as f64 - 4.0) as f32, r.uniform(4.0, size as f64 - 4.0) as f32])
        .collect()
}

/// A mix of brush constraints on a `size`-pixel frame. `kinds` selects color (bit 0), sketch
/// (bit 1) and warp (bit 2).
pub fn random_constraints(frame: &ImageRGB, kinds: u8, seed: u64) -> Vec<EditConstraint> {
    let size = frame.height();
    let cfg = HogConfig::default();
    let mut r = SplitMix(seed);
    let mut out = Vec::new();
    if kinds & 1 != 0 {
        let pts = random_points(&mut r, size, 3);
        let mask = stroke_mask(&pts, r.uniform(1.5, 3.0) as f32, size, size);
        let rgb = [r.uniform(-1.0, 1.0) as f32, r.uniform(-1.0, 1.0) as f32, r.uniform(-1.0, 1.0) as f32];
        out.push(make_color_constraint(mask, size, size, rgb, r.uniform(0.5, 2.0) as f32).unwrap());
    }
    if kinds & 2 != 0 {
        let pts = random_points(&mut r, size, 2);
        out.push(make_sketch_constraint(&pts, 2.0, size, size, &cfg, r.uniform(0.5, 2.0) as f32).unwrap());
    }
    if kinds & 4 != 0 {
        let rect = Rect { x: 8, y: 8, w: 8, h: 8 };
        let (dx, dy) = ((r.next_u64() % 9) as i32 - 4, (r.next_u64() % 9) as i32 - 4);
        out.push(make_warp_constraint(frame, rect, dx, dy, &cfg, r.uniform(0.5, 2.0) as f32).unwrap());
    }
    out
}

fn softplus(a: f64) -> f64 {
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

/// Data term of the constraints on one frame, in `f64` with the reference HOG.
pub fn reference_data_term(constraints: &[EditConstraint], pixels: &[f64], size: usize) -> f64 {
    let cfg = HogConfig::default();
    let n = size * size;
    let desc = reference_hog(pixels, size, size, &cfg);
    let color = |c: &EditConstraint, t: &[f32]| -> f64 {
        let mut s = 0.0;
        for ch in 0..3 {
            for i in 0..n {
                s += c.mask[i] as f64 * (pixels[ch * n + i] - t[ch * n + i] as f64).powi(2);
            }
        }
        s
    };
    let sketch = |cells: &[f32], t: &Tensor| -> f64 {
        let bins = cfg.bins;
        let mut s = 0.0;
        for (k, &cw) in cells.iter().enumerate() {
            for b in 0..bins {
                s += cw as f64 * (desc[k * bins + b] - t.data()[k * bins + b] as f64).powi(2);
            }
        }
        s
    };
    constraints
        .iter()
        .map(|c| {
            let w = c.weight as f64;
            match &c.target {
                Target::Color(t) => w * color(c, t),
                Target::Sketch(h) => w * sketch(&h.cells, &h.descriptor),
                Target::Warp { color: t, hog, .. } => {
                    w * color(c, t) + w * WARP_SKETCH_WEIGHT as f64 * sketch(&hog.cells, &hog.descriptor)
                }
            }
        })
        .sum()
}

/// Edit energy gradient with respect to `z` against differences of a reference energy that
/// runs the generator, HOG and discriminator in `f64`, for constraint `kinds` (see
/// [`random_constraints`]), with or without the realism term. Any sketch or warp constraint puts the soft-binned HOG inside
/// the energy, whose curvature the extrapolated differences handle better.
pub fn check_edit_energy(seed: u64, kinds: u8, use_discriminator: bool, extrapolate: bool) -> GradCheck {
    let mut g = toy_generator(seed);
    g.params = random_params(&g.graph, seed ^ 0x9e);
    let mut d = toy_discriminator(seed);
    d.params = random_params(&d.graph, seed ^ 0xd1);
    let size = TOY.resolution;
    let mut r = SplitMix(seed ^ 0x2);
    let z0 = LatentVector::new(r.vec(TOY.latent_dim, -0.8, 0.8).iter().map(|&v| v as f32).collect()).unwrap();
    let z: Vec<f32> = z0.values().iter().map(|v| (v + r.uniform(-0.2, 0.2) as f32).clamp(-1.0, 1.0)).collect();

    let mut editor = Editor::new(g.clone(), Some(d.clone()), HogConfig::default());
    let frame = editor.render(&z0).unwrap();
    let mut state = EditState::new(z0.clone());
    state.set_constraints(random_constraints(&frame, kinds, seed)).unwrap();
    state.use_discriminator = use_discriminator;
    state.lambda_d = 0.5;
    let analytic: Vec<f64> = editor.evaluate(&state, &z, true).unwrap().grad.iter().map(|&v| v as f64).collect();

    let energy = reference_edit_energy(&g, &d, &state, size);
    let x0: Vec<f64> = z.iter().map(|&v| v as f64).collect();
    let coords: Vec<usize> = (0..x0.len()).collect();
    let numeric = if extrapolate {
        central_extrapolated(energy(&x0), &x0, &coords)
    } else {
        central(energy(&x0), &x0, &coords)
    };
    compare(&analytic, &numeric)
}

/// Builds the reference edit energy with relu branches frozen at `base`.
fn reference_edit_energy<'a>(g: &Network, d: &Network, state: &'a EditState, size: usize) -> impl Fn(&[f64]) -> Box<dyn Fn(&[f64]) -> f64 + 'a> {
    let gl = ref_layers(&g.graph, &params_f64(&g.params), Mode::Inference, g.graph.len());
    let dend = d.graph.len() - 1;
    let dl = ref_layers(&d.graph, &params_f64(&d.params), Mode::Inference, dend);
    let dim = TOY.latent_dim;
    let shape = [3, size, size];
    move |base: &[f64]| {
        let (gl, dl) = (gl.clone(), dl.clone());
        let g_gates = forward(&gl, base, 1, &[dim]).gates;
        let x_base = forward(&gl, base, 1, &[dim]).data;
        let d_gates = forward(&dl, &x_base, 1, &shape).gates;
        Box::new(move |zs: &[f64]| {
            let x = forward_gated(&gl, zs, 1, &[dim], Some(&g_gates)).data;
            let mut e = reference_data_term(&state.constraints, &x, size);
            if state.use_discriminator {
                let a = forward_gated(&dl, &x, 1, &shape, Some(&d_gates)).data[0];
                e -= state.lambda_d as f64 * softplus(a);
            }
            e + state.lambda_s as f64
                * zs.iter().zip(state.z0.values()).map(|(a, b)| (a - *b as f64).powi(2)).sum::<f64>()
        })
    }
}
