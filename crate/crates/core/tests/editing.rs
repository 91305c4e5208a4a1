use latentbrush::edit::{
    data_term, make_color_constraint, make_sketch_constraint, make_warp_constraint, masked_color_distance, render_stroke,
    stroke_mask, EditState, Editor, Rect,
};
use latentbrush::hog::{hog_features, HogConfig};
use latentbrush::image::ImageRGB;
use latentbrush::latent::LatentVector;
use latentbrush::models::Network;
use latentbrush_testkit::energy::{random_constraints, reference_data_term};
use latentbrush_testkit::fixtures::{rng, toy_generator, TOY};
use latentbrush_testkit::randomized;
use proptest::prelude::*;

fn generator(seed: u64) -> Network {
    randomized(toy_generator(seed), seed ^ 0x51)
}

fn editor(seed: u64) -> Editor {
    Editor::new(generator(seed), None, HogConfig::default())
}

fn anchor(seed: u64) -> LatentVector {
    LatentVector::sample(TOY.latent_dim, &mut rng(seed))
}

#[test]
fn vertical_edge_votes_into_horizontal_gradient_bin() {
    let img = ImageRGB::from_fn(16, 16, |_, _, x| if x < 8 { -1.0 } else { 1.0 });
    let d = hog_features(&img, &HogConfig::default()).unwrap();
    let bins = 9;
    // Cells in columns 1 and 2 straddle the edge at x = 8.
    for cy in 0..4 {
        for cx in 1..3 {
            let h = &d.data()[(cy * 4 + cx) * bins..(cy * 4 + cx + 1) * bins];
            let best = (0..bins).max_by(|&a, &b| h[a].total_cmp(&h[b])).unwrap();
            assert_eq!(best, 0, "cell ({cy}, {cx}): {h:?}");
            assert!(h[0] > 0.9);
        }
    }
}

#[test]
fn energy_is_zero_without_constraints_at_anchor() {
    let mut ed = editor(1);
    let state = EditState::new(anchor(2));
    let e = ed.evaluate(&state, state.z.values(), true).unwrap();
    assert_eq!(e.energy, 0.0);
    assert!(e.grad.iter().all(|&g| g == 0.0));
}

#[test]
fn satisfied_color_constraint_has_zero_energy() {
    let mut ed = editor(3);
    let z0 = anchor(4);
    let frame = ed.render(&z0).unwrap();
    let mask = stroke_mask(&[[10.0, 10.0]], 3.0, 32, 32);
    let rgb = [frame.get(0, 10, 10), frame.get(1, 10, 10), frame.get(2, 10, 10)];
    // A single-pixel mask at the sampled pixel, so the target matches exactly.
    let mut single = vec![0.0; 32 * 32];
    single[10 * 32 + 10] = 1.0;
    let mut state = EditState::new(z0);
    state.set_constraints(vec![make_color_constraint(single, 32, 32, rgb, 1.0).unwrap()]).unwrap();
    assert!(ed.evaluate(&state, &state.z.values().to_vec(), false).unwrap().energy.abs() < 1e-10);
    assert!(mask.iter().any(|&m| m > 0.0));
}

#[test]
fn energy_is_data_term_plus_smoothness() {
    for seed in 0..6 {
        let mut ed = editor(10 + seed);
        let z0 = anchor(20 + seed);
        let frame = ed.render(&z0).unwrap();
        let mut state = EditState::new(z0.clone());
        state.set_constraints(random_constraints(&frame, 7, seed)).unwrap();
        let z: Vec<f32> = z0.values().iter().map(|v| (v * 0.7 + 0.1).clamp(-1.0, 1.0)).collect();
        let e = ed.evaluate(&state, &z, false).unwrap();
        let x = ed.render(&LatentVector::new(z.clone()).unwrap()).unwrap();
        let pixels: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
        let smooth: f64 = z.iter().zip(z0.values()).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
        let want = reference_data_term(&state.constraints, &pixels, 32) + 5.0 * smooth;
        assert!((e.energy - want).abs() < 1e-4 * want.max(1.0), "seed {seed}: {} vs {want}", e.energy);
    }
}

#[test]
fn empty_strokes_are_rejected() {
    let cfg = HogConfig::default();
    assert!(make_color_constraint(vec![0.0; 1024], 32, 32, [1.0, 0.0, 0.0], 1.0).is_err());
    assert!(make_sketch_constraint(&[], 2.0, 32, 32, &cfg, 1.0).is_err());
    assert!(make_color_constraint(vec![1.0; 10], 32, 32, [1.0, 0.0, 0.0], 1.0).is_err());
}

#[test]
fn warp_outside_the_frame_is_rejected() {
    let frame = ImageRGB::filled(32, 32, [0.0; 3]);
    let rect = Rect { x: 20, y: 20, w: 8, h: 8 };
    assert!(make_warp_constraint(&frame, rect, 6, 0, &HogConfig::default(), 1.0).is_err());
    assert!(make_warp_constraint(&frame, rect, 0, -21, &HogConfig::default(), 1.0).is_err());
}

#[test]
fn zero_displacement_warp_is_already_satisfied() {
    let mut ed = editor(5);
    let z0 = anchor(6);
    let frame = ed.render(&z0).unwrap();
    let c = make_warp_constraint(&frame, Rect { x: 4, y: 8, w: 12, h: 8 }, 0, 0, &HogConfig::default(), 1.0).unwrap();
    let (data, _) = data_term(&[c], frame.data(), 32, 32, &HogConfig::default(), false).unwrap();
    assert!(data.abs() < 1e-9, "{data}");
}

#[test]
fn sketch_on_matching_structure_costs_less_than_elsewhere() {
    let cfg = HogConfig::default();
    let stroke = [[4.0, 16.0], [28.0, 16.0]];
    let c = make_sketch_constraint(&stroke, 2.0, 32, 32, &cfg, 1.0).unwrap();
    let matching = render_stroke(&stroke, 2.0, 32, 32);
    let (on, _) = data_term(std::slice::from_ref(&c), matching.data(), 32, 32, &cfg, false).unwrap();
    let mut total = 0.0;
    for seed in 0..5 {
        let other = latentbrush_testkit::energy::noise_image(32, seed);
        total += data_term(std::slice::from_ref(&c), other.data(), 32, 32, &cfg, false).unwrap().0;
    }
    assert!(on < 0.1 * total / 5.0, "{on} vs {}", total / 5.0);
}

#[test]
fn zero_steps_change_nothing() {
    let mut ed = editor(7);
    let mut state = EditState::new(anchor(8));
    let frame = ed.render(&state.z).unwrap();
    state.set_constraints(random_constraints(&frame, 1, 3)).unwrap();
    let before = state.clone();
    let r = ed.step(&mut state, 0, 0.05).unwrap();
    assert_eq!(state.z, before.z);
    assert_eq!(state.moments, before.moments);
    assert_eq!(r.frame, frame);
}

#[test]
fn step_frame_is_generator_output_at_new_latent() {
    let mut ed = editor(9);
    let mut state = EditState::new(anchor(10));
    let frame = ed.render(&state.z).unwrap();
    state.set_constraints(random_constraints(&frame, 3, 4)).unwrap();
    let r = ed.step(&mut state, 3, 0.05).unwrap();
    assert_eq!(r.frame, ed.render(&state.z).unwrap());
    assert_eq!(r.step_ms.len(), 3);
    assert_eq!(state.steps, 3);
}

#[test]
fn heavy_smoothness_pins_the_latent() {
    let mut ed = editor(11);
    let mut state = EditState::new(anchor(12));
    let frame = ed.render(&state.z).unwrap();
    state.set_constraints(random_constraints(&frame, 1, 5)).unwrap();
    state.lambda_s = 1e3 * state.constraints[0].weight;
    ed.step(&mut state, 20, 1e-4).unwrap();
    assert!(state.z.distance(&state.z0).sqrt() < 1e-2);
}

#[test]
fn color_scribble_pulls_masked_region_toward_target() {
    let mut ed = editor(13);
    let mut state = EditState::new(anchor(14));
    let mask = stroke_mask(&[[8.0, 8.0], [24.0, 24.0]], 4.0, 32, 32);
    let c = make_color_constraint(mask, 32, 32, [-1.0, -1.0, -1.0], 1.0).unwrap();
    state.set_constraints(vec![c.clone()]).unwrap();
    state.lambda_s = 0.05;
    let start = masked_color_distance(&ed.render(&state.z).unwrap(), &c).unwrap();
    let r = ed.step(&mut state, 20, 0.05).unwrap();
    let end = masked_color_distance(&r.frame, &c).unwrap();
    assert!(end < start, "{start} -> {end}");
}

#[test]
fn candidates_are_sorted_reproducible_and_nine() {
    let ed = editor(15);
    let mut state = EditState::new(anchor(16));
    let frame = Editor::new(ed.generator.clone(), None, HogConfig::default()).render(&state.z).unwrap();
    state.set_constraints(random_constraints(&frame, 1, 6)).unwrap();
    let a = ed.candidates(&state, 16, 9, 0.3, 3, 0.05, 42).unwrap();
    let b = ed.candidates(&state, 16, 9, 0.3, 3, 0.05, 42).unwrap();
    assert_eq!(a.len(), 9);
    assert!(a.windows(2).all(|w| w[0].energy <= w[1].energy));
    let za: Vec<_> = a.iter().map(|c| c.z.clone()).collect();
    let zb: Vec<_> = b.iter().map(|c| c.z.clone()).collect();
    assert_eq!(za, zb);
    // The kept set is the prefix of the full pool.
    let all = ed.candidates(&state, 16, 16, 0.3, 3, 0.05, 42).unwrap();
    assert_eq!(all[..9].iter().map(|c| c.z.clone()).collect::<Vec<_>>(), za);
}

#[test]
fn single_unperturbed_candidate_equals_plain_step() {
    let mut ed = editor(17);
    let mut state = EditState::new(anchor(18));
    let frame = ed.render(&state.z).unwrap();
    state.set_constraints(random_constraints(&frame, 1, 7)).unwrap();
    let c = ed.candidates(&state, 1, 1, 0.0, 5, 0.05, 0).unwrap();
    let mut plain = state.clone();
    ed.step(&mut plain, 5, 0.05).unwrap();
    assert_eq!(c[0].z, plain.z);
}

#[test]
fn candidate_settings_are_validated() {
    let ed = editor(19);
    let state = EditState::new(anchor(20));
    assert!(ed.candidates(&state, 4, 9, 0.3, 1, 0.05, 0).is_err());
    assert!(ed.candidates(&state, 0, 0, 0.3, 1, 0.05, 0).is_err());
}

#[test]
fn relative_sequence_endpoints() {
    let mut ed = editor(21);
    let mut state = EditState::new(anchor(22));
    state.z = anchor(23);
    let frames = ed.relative_sequence(&state, 1).unwrap();
    assert_eq!(frames.len(), 2);
    assert_eq!(frames[0], ed.render(&state.z0).unwrap());
    assert_eq!(frames[1], ed.render(&state.z).unwrap());
    state.z = state.z0.clone();
    let same = ed.relative_sequence(&state, 4).unwrap();
    assert!(same.windows(2).all(|w| w[0] == w[1]));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn latent_stays_in_box(seed in 0u64..500, lr in 0.05f32..2.0) {
        let mut ed = editor(seed);
        let mut state = EditState::new(anchor(seed ^ 9));
        let frame = ed.render(&state.z).unwrap();
        state.set_constraints(random_constraints(&frame, 1, seed)).unwrap();
        state.lambda_s = 0.0;
        for _ in 0..4 {
            ed.step(&mut state, 3, lr).unwrap();
            prop_assert!(state.z.values().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }
}
