//! One line per acceptance criterion. Runs without the test harness so the report prints in
//! order. Failures are reported, not fatal; set `ACCEPTANCE_STRICT=1` to make the process exit
//! with an error when any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use latentbrush::bundle::ModelBundle;
use latentbrush::data::{synth_shapes, Dataset};
use latentbrush::edit::{masked_color_distance, make_color_constraint, stroke_mask, EditState, Editor};
use latentbrush::flow::{apply_field, estimate_flow_color, estimate_flow_color_traced, FlowColorField, FlowConfig, IDENTITY_A};
use latentbrush::guided::{guided_filter, guided_upsample, GuidedConfig};
use latentbrush::hog::HogConfig;
use latentbrush::image::ImageRGB;
use latentbrush::latent::{interpolate_latents, LatentVector};
use latentbrush::models::build_generator;
use latentbrush::nn::ArchDescriptor;
use latentbrush::project::{Method, OptConfig, Optimizer};
use latentbrush::script::{ConstraintSpec, EditScript};
use latentbrush::train::{mean_fake_score, train_encoder, train_gan, TrainConfig};
use latentbrush::transfer::{prefix_fields, render_sequence, transfer_edit, TransferConfig};
use latentbrush_acceptance::{percentile, Outcome};
use latentbrush_cli::evaluate;
use latentbrush_oracle::flow as ref_flow;
use latentbrush_oracle::guided as ref_guided;
use latentbrush_oracle::SplitMix;
use latentbrush_service::session::REPLAY_TOLERANCE;
use latentbrush_service::{Session, SessionStore, Settings};
use latentbrush_testkit::energy::{check_edit_energy, check_recon_instance, plain_hog_check};
use latentbrush_testkit::fixtures::{rng, Texture};
use latentbrush_testkit::{check_layer_instance, layer_suite, randomized};

/// Desk-scale model trained once for every criterion that needs one.
const ARCH: ArchDescriptor = ArchDescriptor {
    resolution: 32,
    latent_dim: 32,
    base_channels: 8,
};
const GAN_ITERS: usize = 2000;
const ENCODER_ITERS: usize = 1500;
const TRAIN_IMAGES: usize = 2000;
const TEST_IMAGES: usize = 200;

struct Trained {
    bundle: ModelBundle,
    test: Dataset,
}

fn trained() -> &'static Trained {
    static MODEL: OnceLock<Trained> = OnceLock::new();
    MODEL.get_or_init(|| {
        let start = Instant::now();
        let data = synth_shapes(TRAIN_IMAGES + TEST_IMAGES, ARCH.resolution, 0).unwrap();
        let (train, test) = data.split(TEST_IMAGES, 1).unwrap();
        let gan = train_gan(
            &train,
            &ARCH,
            &TrainConfig {
                iterations: GAN_ITERS,
                ..TrainConfig::gan()
            },
        )
        .unwrap();
        let mut bundle = ModelBundle::new(gan.generator, Some(gan.discriminator), None).unwrap();
        let extractor = bundle.feature_extractor().unwrap();
        let enc = train_encoder(
            &bundle.generator,
            extractor.as_ref(),
            &bundle.loss,
            &train,
            &TrainConfig {
                iterations: ENCODER_ITERS,
                ..TrainConfig::encoder()
            },
        )
        .unwrap();
        bundle.encoder = Some(enc.encoder);
        let (mut g, mut d) = (bundle.generator.clone(), bundle.discriminator.clone().unwrap());
        let fake = mean_fake_score(&mut g, &mut d, 256, 3).unwrap();
        println!(
            "        (trained {GAN_ITERS}+{ENCODER_ITERS} iterations on {} shapes in {:.0}s; mean D(G(z)) {fake:.3})",
            train.len(),
            start.elapsed().as_secs_f64()
        );
        Trained { bundle, test }
    })
}

fn latent(dim: usize, seed: u64) -> LatentVector {
    LatentVector::sample(dim, &mut rng(seed))
}

fn gradients() -> Outcome {
    const N: u64 = 20;
    let mut worst_layer = (0.0f64, "");
    for (name, mut graph, mode) in layer_suite() {
        for seed in 0..N {
            let r = check_layer_instance(&mut graph, mode, 5000 + seed);
            if r.max_rel_err > worst_layer.0 {
                worst_layer = (r.max_rel_err, name);
            }
        }
    }
    let worst = |f: &dyn Fn(u64) -> f64| (0..N).map(|s| f(5000 + s)).fold(0.0, f64::max);
    // Constraint kinds are a bit set (1 color, 2 sketch, 4 warp); sketch and warp go through HOG,
    // whose soft binning puts plain central differences at the HOG allowance.
    let kinds = |s: u64| (s % 7 + 1) as u8;
    let edit_off = worst(&|s| check_edit_energy(s, kinds(s), false, false).max_rel_err);
    let (mut color_on, mut hog_on) = (0.0f64, 0.0f64);
    for s in 5000..5000 + N {
        let err = check_edit_energy(s, kinds(s), true, false).max_rel_err;
        if kinds(s) == 1 {
            color_on = color_on.max(err);
        } else {
            hog_on = hog_on.max(err);
        }
    }
    let recon = worst(&|s| check_recon_instance(s, 48).max_rel_err);
    let hog = worst(&|s| plain_hog_check(s).max_rel_err);
    Outcome::new(
        worst_layer.0 < 1e-3 && edit_off < 1e-3 && color_on < 1e-3 && recon < 1e-3 && hog_on < 1e-2 && hog < 1e-2,
        format!(
            "{N} instances each; worst rel err: layers {:.1e} ({}), edit energy without E_D {edit_off:.1e}, \
             color-only with E_D {color_on:.1e}, recon loss {recon:.1e} (< 1e-3); \
             HOG terms with E_D {hog_on:.1e}, hog {hog:.1e} (< 1e-2)",
            worst_layer.0, worst_layer.1
        ),
    )
}

fn table_ordering() -> Outcome {
    let t = trained();
    let mut projector = t.bundle.projector().unwrap();
    let images: Vec<(String, ImageRGB)> = t.test.items().iter().enumerate().map(|(i, x)| (i.to_string(), x.clone())).collect();
    let cfg = OptConfig::default();
    let (_, summary) = evaluate(&mut projector, &images, &cfg, 0).unwrap();
    let mean = |m: Method| summary.iter().find(|s| s.method == m).unwrap().mean_loss;
    let (opt, net, hybrid) = (mean(Method::Opt), mean(Method::Net), mean(Method::Hybrid));
    Outcome::new(
        hybrid <= net * 1.01 && hybrid <= opt * 1.01,
        format!("mean L over {} held-out images: hybrid {hybrid:.5}, net {net:.5}, opt {opt:.5}", images.len()),
    )
}

fn manifold_recovery() -> Outcome {
    let t = trained();
    let mut projector = t.bundle.projector().unwrap();
    const TRIALS: u64 = 100;
    const RANDOM: u64 = 200;
    let mut hits = 0;
    for trial in 0..TRIALS {
        let target = projector.render(&latent(ARCH.latent_dim, 7000 + trial)).unwrap();
        let r = projector.project_hybrid(&target, Optimizer::Adam { lr: 0.1 }, 100).unwrap();
        let mut random: Vec<f32> = (0..RANDOM)
            .map(|k| projector.loss_at(&latent(ARCH.latent_dim, 900_000 + trial * RANDOM + k), &target).unwrap())
            .collect();
        if r.loss < percentile(&mut random, 5.0) {
            hits += 1;
        }
    }
    Outcome::new(
        hits * 100 >= 95 * TRIALS,
        format!("{hits}/{TRIALS} hybrid losses below the 5th percentile of {RANDOM} random-latent losses (need 95%)"),
    )
}

fn color_map(img: &ImageRGB, s: f32, o: f32) -> ImageRGB {
    let unit: Vec<f32> = img.to_unit().iter().map(|c| s * c + o).collect();
    ImageRGB::from_unit(img.height(), img.width(), &unit).unwrap()
}

/// Interior (4-px margin) means of every plane of `f`.
fn interior(f: &FlowColorField, margin: usize) -> Vec<f32> {
    let (h, w) = (f.height(), f.width());
    f.planes()
        .iter()
        .map(|p| {
            let (mut s, mut k) = (0.0, 0);
            for y in margin..h - margin {
                for x in margin..w - margin {
                    s += p[y * w + x];
                    k += 1;
                }
            }
            s / k as f32
        })
        .collect()
}

/// Mean interior endpoint error against a constant displacement.
fn endpoint_error(f: &FlowColorField, u: f32, v: f32, margin: usize) -> f32 {
    let (h, w) = (f.height(), f.width());
    let (mut s, mut k) = (0.0, 0);
    for y in margin..h - margin {
        for x in margin..w - margin {
            let i = y * w + x;
            s += ((f.u()[i] - u).powi(2) + (f.v()[i] - v).powi(2)).sqrt();
            k += 1;
        }
    }
    s / k as f32
}

fn color_error(f: &FlowColorField) -> f32 {
    let m = interior(f, 4);
    (0..12)
        .map(|k| (m[2 + k] - (0.8 * IDENTITY_A[k] + if k % 4 == 3 { 0.1 } else { 0.0 })).abs())
        .fold(0.0, f32::max)
}

fn flow_recovery() -> Outcome {
    let cfg = FlowConfig::default();
    let size = 32;
    let mut shift = 0.0f32;
    for seed in 0..5 {
        let tex = Texture::new(seed);
        let f = estimate_flow_color(&tex.render(size, 0.0, 0.0), &tex.render(size, 2.0, 0.0), &cfg).unwrap();
        shift = shift.max(endpoint_error(&f, 2.0, 0.0, 4));
    }
    let img = Texture::new(7).render(size, 0.0, 0.0);
    let color = color_error(&estimate_flow_color(&img, &color_map(&img, 0.8, 0.1), &cfg).unwrap());
    let tex = Texture::new(3);
    let both = estimate_flow_color(&tex.render(size, 0.0, 0.0), &color_map(&tex.render(size, 2.0, 0.0), 0.8, 0.1), &cfg).unwrap();
    let (both_shift, both_color) = (endpoint_error(&both, 2.0, 0.0, 4), color_error(&both));
    Outcome::new(
        shift <= 0.5 && color <= 0.05 && both_shift <= 0.5 && both_color <= 0.05,
        format!(
            "2-px shift endpoint err {shift:.3} px; color map coeff err {color:.4}; combined {both_shift:.3} px / {both_color:.4}"
        ),
    )
}

/// `(G(z), G(z'))` with `z'` a nearby latent.
fn generated_pair(seed: u64) -> (ImageRGB, ImageRGB) {
    let t = trained();
    let mut g = t.bundle.generator.clone();
    let z = latent(ARCH.latent_dim, 8000 + seed);
    let mut r = SplitMix(seed);
    let z2: Vec<f32> = z.values().iter().map(|v| (v + r.uniform(-0.3, 0.3) as f32).clamp(-1.0, 1.0)).collect();
    let frames = render_sequence(&mut g, &[z, LatentVector::new(z2).unwrap()]).unwrap();
    (frames[0].clone(), frames[1].clone())
}

fn reference_energy(i0: &ImageRGB, i1: &ImageRGB, f: &FlowColorField, cfg: &FlowConfig) -> f64 {
    let field = ref_flow::Field {
        height: f.height(),
        width: f.width(),
        u: f.u(),
        v: f.v(),
        a: (0..12).map(|k| f.a_plane(k)).collect(),
    };
    ref_flow::energy(&i0.to_unit(), &i1.to_unit(), &field, cfg.sigma_s as f64, cfg.sigma_c as f64)
}

fn energy_monotonicity() -> Outcome {
    let cfg = FlowConfig::default();
    let mut rises = 0;
    let mut total_drop = 0.0;
    for seed in 0..10 {
        let (i0, i1) = generated_pair(seed);
        let (_, trace) = estimate_flow_color_traced(&i0, &i1, &cfg).unwrap();
        let e: Vec<f64> = trace.fields.iter().map(|f| reference_energy(&i0, &i1, f, &cfg)).collect();
        // Allow only summation-order rounding between the two evaluations.
        rises += e.windows(2).filter(|w| w[1] > w[0] * (1.0 + 1e-9)).count();
        total_drop += 1.0 - e[e.len() - 1] / e[0];
    }
    Outcome::new(
        rises == 0,
        format!(
            "{rises} increases of the reference energy over {} outer iterations on 10 generated pairs (mean drop {:.1}%)",
            cfg.outer,
            total_drop * 10.0
        ),
    )
}

/// A color-scribble scenario on a generated frame: stroke points and a target color far from
/// the current one.
/// A short black scribble across the reddest 5x5 neighbourhood of the frame.
fn scribble(frame: &ImageRGB, seed: u64) -> (Vec<[f32; 2]>, [f32; 3]) {
    let (size, n) = (frame.height(), frame.height() * frame.width());
    let d = frame.data();
    let redness = |cy: usize, cx: usize| -> f32 {
        let mut s = 0.0;
        for y in cy - 2..=cy + 2 {
            for x in cx - 2..=cx + 2 {
                let i = y * size + x;
                s += d[i] - 0.5 * (d[n + i] + d[2 * n + i]);
            }
        }
        s
    };
    let (mut best, mut cy, mut cx) = (f32::MIN, 0, 0);
    for y in 6..size - 6 {
        for x in 6..size - 6 {
            let v = redness(y, x);
            if v > best {
                (best, cy, cx) = (v, y, x);
            }
        }
    }
    let mut r = SplitMix(seed ^ 0x5c);
    let pts = (0..3).map(|_| [cx as f32 + r.uniform(-3.0, 3.0) as f32, cy as f32 + r.uniform(-3.0, 3.0) as f32]).collect();
    (pts, [-1.0; 3])
}

struct EditRun {
    data: Vec<f64>,
    dist: (f32, f32),
    in_box: bool,
    z0: LatentVector,
    z: LatentVector,
}

fn edit_scenario(seed: u64) -> EditRun {
    let t = trained();
    let mut editor = Editor::new(t.bundle.generator.clone(), None, HogConfig::default());
    let z0 = latent(ARCH.latent_dim, 9000 + seed);
    let frame = editor.render(&z0).unwrap();
    let (pts, rgb) = scribble(&frame, seed);
    let mask = stroke_mask(&pts, 2.0, frame.height(), frame.width());
    let c = make_color_constraint(mask, frame.height(), frame.width(), rgb, 1.0).unwrap();
    let mut state = EditState::new(z0.clone());
    state.set_constraints(vec![c.clone()]).unwrap();
    let first = masked_color_distance(&frame, &c).unwrap();
    let mut data = vec![editor.evaluate(&state, z0.values(), false).unwrap().data];
    let mut in_box = true;
    let mut last = frame;
    for _ in 0..20 {
        last = editor.step(&mut state, 1, 0.05).unwrap().frame;
        data.push(editor.evaluate(&state, state.z.values(), false).unwrap().data);
        in_box &= state.z.values().iter().all(|v| (-1.0..=1.0).contains(v));
    }
    EditRun {
        data,
        dist: (first, masked_color_distance(&last, &c).unwrap()),
        in_box,
        z0,
        z: state.z,
    }
}

fn edit_loop() -> Outcome {
    let mut ok = 0;
    let mut worst_ratio = 0.0f32;
    let mut worst_violations = 0;
    for seed in 0..10 {
        let r = edit_scenario(seed);
        let violations = r.data.windows(2).filter(|w| w[1] > w[0]).count();
        let ratio = r.dist.1 / r.dist.0;
        worst_ratio = worst_ratio.max(ratio);
        worst_violations = worst_violations.max(violations);
        if violations <= 2 && ratio <= 0.5 && r.in_box {
            ok += 1;
        }
    }
    Outcome::new(
        ok == 10,
        format!(
            "{ok}/10 scenarios pass; worst final/initial masked color distance {worst_ratio:.3} (<= 0.5), worst monotonicity violations {worst_violations} (<= 2)"
        ),
    )
}

fn self_validation() -> Outcome {
    let t = trained();
    let cfg = FlowConfig::default();
    let mut g = t.bundle.generator.clone();
    let mut passed = 0;
    let mut worst = 0.0f32;
    for seed in 0..10 {
        let run = edit_scenario(100 + seed);
        let zs = interpolate_latents(&run.z0, &run.z, 7).unwrap();
        let frames = render_sequence(&mut g, &zs).unwrap();
        let pairwise: Vec<FlowColorField> = frames.windows(2).map(|p| estimate_flow_color(&p[0], &p[1], &cfg).unwrap()).collect();
        let fields = prefix_fields(&pairwise, ARCH.resolution, ARCH.resolution).unwrap();
        let recon = apply_field(&frames[0], fields.last().unwrap()).unwrap();
        let err = recon.mean_abs_diff(frames.last().unwrap());
        let step: f32 = frames.windows(2).map(|p| p[0].mean_abs_diff(&p[1])).sum::<f32>() / 7.0;
        worst = worst.max(err / step);
        if err <= 2.0 * step {
            passed += 1;
        }
    }
    Outcome::new(
        passed == 10,
        format!("{passed}/10 sequences; worst composed-field error / mean consecutive difference {worst:.2} (<= 2)"),
    )
}

fn random_field(h: usize, w: usize, seed: u64) -> FlowColorField {
    let mut r = SplitMix(seed);
    let n = h * w;
    let u = r.vec(n, -2.0, 2.0).into_iter().map(|v| v as f32).collect();
    let v = r.vec(n, -2.0, 2.0).into_iter().map(|v| v as f32).collect();
    let a = r.vec(12 * n, -0.5, 1.5).into_iter().map(|v| v as f32).collect();
    FlowColorField::from_parts(h, w, u, v, a).unwrap()
}

fn random_guide(h: usize, w: usize, seed: u64) -> ImageRGB {
    let mut r = SplitMix(seed);
    let blocks = r.vec(3 * 16, -1.0, 1.0);
    ImageRGB::from_fn(h, w, |c, y, x| {
        let b = (y * 4 / h) * 4 + x * 4 / w;
        (blocks[c * 16 + b] * 0.8 + r.uniform(-0.1, 0.1)) as f32
    })
}

fn guided_equivalence() -> Outcome {
    let cfg = GuidedConfig::default();
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let (h, w) = (8 + (seed % 3) as usize * 2, 8);
        let (nh, nw) = (32 + (seed % 2) as usize * 8, 32);
        let f = random_field(h, w, seed);
        let guide = random_guide(nh, nw, seed ^ 0xbeef);
        let ours = guided_upsample(&f, &guide, &cfg).unwrap();
        let n = nh * nw;
        let gray: Vec<f64> = (0..n)
            .map(|i| ((0..3).map(|c| guide.data()[c * n + i] as f64).sum::<f64>() / 3.0 + 1.0) / 2.0)
            .collect();
        for (k, (got, plane)) in ours.planes().iter().zip(f.planes()).enumerate() {
            let scale = match k {
                0 => nw as f64 / w as f64,
                1 => nh as f64 / h as f64,
                _ => 1.0,
            };
            let p: Vec<f64> = plane.iter().map(|&v| v as f64 * scale).collect();
            let want = ref_guided::guided_filter(&gray, &ref_guided::resize(&p, h, w, nh, nw), nh, nw, cfg.radius, cfg.eps as f64);
            worst = got.iter().zip(&want).map(|(a, b)| (*a as f64 - b).abs()).fold(worst, f64::max);
        }
    }
    let mut constant = 0.0f32;
    for seed in 0..20u64 {
        let guide: Vec<f32> = SplitMix(seed).vec(30 * 30, 0.0, 1.0).into_iter().map(|v| v as f32).collect();
        let c = SplitMix(seed ^ 1).uniform(-3.0, 3.0) as f32;
        let out = guided_filter(&guide, &vec![c; 900], 30, 30, &cfg).unwrap();
        constant = out.iter().map(|v| (v - c).abs()).fold(constant, f32::max);
    }
    Outcome::new(
        worst <= 1e-5 && constant <= 1e-6,
        format!("max deviation from naive reference {worst:.1e} over 20 pairs (<= 1e-5); constant drift {constant:.1e} (<= 1e-6)"),
    )
}

fn candidates_contract() -> Outcome {
    let t = trained();
    let editor = Editor::new(t.bundle.generator.clone(), None, HogConfig::default());
    let mut ok = true;
    let mut detail = String::new();
    for seed in 0..3 {
        let z0 = latent(ARCH.latent_dim, 9500 + seed);
        let frame = editor.clone().render(&z0).unwrap();
        let (pts, rgb) = scribble(&frame, seed);
        let mut state = EditState::new(z0);
        state
            .set_constraints(vec![make_color_constraint(stroke_mask(&pts, 3.0, 32, 32), 32, 32, rgb, 1.0).unwrap()])
            .unwrap();
        let a = editor.candidates(&state, 16, 9, 0.3, 10, 0.05, seed).unwrap();
        let b = editor.candidates(&state, 16, 9, 0.3, 10, 0.05, seed).unwrap();
        let sorted = a.windows(2).all(|w| w[0].energy <= w[1].energy);
        let same = a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.z == y.z && x.energy == y.energy);
        ok &= a.len() == 9 && sorted && same;
        detail = format!("count {}, ascending {sorted}, reproducible {same}", a.len());
    }
    Outcome::new(ok, format!("3 seeds; last: {detail}"))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn interactive_budget() -> Outcome {
    // Desk-size generator: the cost depends on the architecture, not on the weights.
    let g = build_generator(&ArchDescriptor::DESK, &mut rng(1)).unwrap();
    let mut editor = Editor::new(g, None, HogConfig::default());
    let z0 = latent(ArchDescriptor::DESK.latent_dim, 2);
    let frame = editor.render(&z0).unwrap();
    let script = EditScript {
        constraints: vec![
            ConstraintSpec::Color {
                points: vec![[6.0, 6.0], [20.0, 14.0]],
                radius: 3.0,
                mask: None,
                rgb: [0.9, 0.1, 0.1],
                weight: 1.0,
            },
            ConstraintSpec::Sketch {
                points: vec![[4.0, 24.0], [28.0, 24.0]],
                width: 2.0,
                weight: 1.0,
            },
        ],
        ..EditScript::default()
    };
    let mut state = EditState::new(z0);
    script.apply(&mut state, &frame, &HogConfig::default()).unwrap();
    editor.step(&mut state, 2, 0.05).unwrap();
    let steps: Vec<f64> = (0..30)
        .map(|_| {
            let start = Instant::now();
            editor.step(&mut state, 1, 0.05).unwrap();
            start.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    let step_ms = median(steps);

    let mut g64 = randomized(build_generator(&ArchDescriptor::FULL, &mut rng(3)).unwrap(), 3);
    let photo = Texture::new(4).render(256, 0.0, 0.0);
    let (z0, z1) = (latent(100, 5), latent(100, 6));
    let start = Instant::now();
    let r = transfer_edit(&photo, &z0, &z1, &mut g64, &TransferConfig::default()).unwrap();
    let transfer_s = start.elapsed().as_secs_f64();
    Outcome::new(
        step_ms < 100.0 && transfer_s < 20.0 && r.frames.len() == 8,
        format!(
            "median z-step {step_ms:.1} ms at 32 px, latent 100, 64 base channels (< 100 ms); transfer 64-px model -> 256-px photo, {} frames in {transfer_s:.1} s (< 20 s)",
            r.frames.len()
        ),
    )
}

fn serialization() -> Outcome {
    let t = trained();
    let dir = std::env::temp_dir().join(format!("latentbrush-acceptance-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    let (a, b) = (dir.join("a"), dir.join("b"));
    t.bundle.save(&a).unwrap();
    ModelBundle::load(&a).unwrap().save(&b).unwrap();
    let mut weights_same = true;
    for f in ["model.json", "generator.gvmw", "discriminator.gvmw", "encoder.gvmw"] {
        weights_same &= std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap();
    }
    let loaded = ModelBundle::load(&a).unwrap();
    weights_same &= loaded.generator.params == t.bundle.generator.params;

    let model = Arc::new(t.bundle.clone());
    let settings = Settings {
        projection_steps: 20,
        candidate_steps: 3,
        ..Settings::default()
    };
    let photo = t.test.items()[0].clone();
    let mut s = Session::from_photo("accept".into(), "toy".into(), model.clone(), photo, &settings).unwrap();
    s.set_constraints(EditScript {
        constraints: vec![ConstraintSpec::Color {
            points: vec![[6.0, 6.0], [20.0, 14.0]],
            radius: 3.0,
            mask: None,
            rgb: [0.9, 0.1, 0.1],
            weight: 1.0,
        }],
        ..EditScript::default()
    })
    .unwrap();
    s.step(10, None, &mut |_| {}).unwrap();
    let c = s.candidates(Some(2)).unwrap();
    s.select(c[1].z.values().to_vec(), true).unwrap();
    s.step(5, None, &mut |_| {}).unwrap();
    let (sa, sb) = (SessionStore::new(dir.join("sa")).unwrap(), SessionStore::new(dir.join("sb")).unwrap());
    sa.save(&s).unwrap();
    let replayed = sa.load(s.id(), model, &settings).unwrap();
    sb.save(&replayed).unwrap();
    let mut session_same = true;
    for f in ["session.json", "history.json", "photo.png"] {
        session_same &= std::fs::read(dir.join("sa").join(s.id()).join(f)).unwrap()
            == std::fs::read(dir.join("sb").join(s.id()).join(f)).unwrap();
    }
    let drift = replayed
        .state
        .z
        .values()
        .iter()
        .zip(s.state.z.values())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f32, f32::max);
    let _ = std::fs::remove_dir_all(&dir);
    Outcome::new(
        weights_same && session_same && drift <= REPLAY_TOLERANCE,
        format!("model files byte-exact {weights_same}; session files byte-exact {session_same}; replayed z drift {drift:.1e} (<= 1e-6)"),
    )
}

fn main() {
    // `cargo test` passes filter and harness flags; this report always runs in full.
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("gradient correctness", gradients),
        ("projection method ordering", table_ordering),
        ("manifold-sample recovery", manifold_recovery),
        ("flow recovery oracle", flow_recovery),
        ("flow energy monotonicity", energy_monotonicity),
        ("composed-field self-validation", self_validation),
        ("guided filter equivalence", guided_equivalence),
        ("edit-loop behavior", edit_loop),
        ("candidates contract", candidates_contract),
        ("interactive budget", interactive_budget),
        ("serialization", serialization),
    ];
    println!("acceptance: {} criteria", criteria.len());
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        if !outcome.pass {
            failed += 1;
        }
        println!(
            "{} {name}: {} [{:.1}s]",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
