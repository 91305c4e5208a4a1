use latentbrush::flow::FlowColorField;
use latentbrush::guided::{guided_filter, guided_upsample, GuidedConfig};
use latentbrush::image::ImageRGB;
use latentbrush_oracle::guided as reference;
use latentbrush_oracle::SplitMix;
use proptest::prelude::*;

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
    // Piecewise-constant blocks plus noise so the filter has edges to follow.
    let blocks = r.vec(3 * 16, -1.0, 1.0);
    ImageRGB::from_fn(h, w, |c, y, x| {
        let b = (y * 4 / h) * 4 + x * 4 / w;
        (blocks[c * 16 + b] * 0.8 + r.uniform(-0.1, 0.1)) as f32
    })
}

/// Reference pipeline: naive bilinear resize with displacement scaling, then the naive filter on
/// the guide's `[0, 1]` gray levels.
fn reference_upsample(f: &FlowColorField, guide: &ImageRGB, cfg: &GuidedConfig) -> Vec<Vec<f64>> {
    let (h, w) = (f.height(), f.width());
    let (nh, nw) = (guide.height(), guide.width());
    let n = nh * nw;
    let gray: Vec<f64> = (0..n)
        .map(|i| {
            let s: f64 = (0..3).map(|c| guide.data()[c * n + i] as f64).sum();
            (s / 3.0 + 1.0) / 2.0
        })
        .collect();
    f.planes()
        .iter()
        .enumerate()
        .map(|(k, plane)| {
            let scale = match k {
                0 => nw as f64 / w as f64,
                1 => nh as f64 / h as f64,
                _ => 1.0,
            };
            let p: Vec<f64> = plane.iter().map(|&v| v as f64 * scale).collect();
            let up = reference::resize(&p, h, w, nh, nw);
            reference::guided_filter(&gray, &up, nh, nw, cfg.radius, cfg.eps as f64)
        })
        .collect()
}

#[test]
fn matches_naive_reference() {
    let cfg = GuidedConfig::default();
    for seed in 0..20 {
        let (h, w) = (6 + (seed % 3) as usize * 2, 8);
        let (nh, nw) = (24 + (seed % 2) as usize * 4, 32);
        let f = random_field(h, w, seed);
        let guide = random_guide(nh, nw, seed ^ 0xface);
        let ours = guided_upsample(&f, &guide, &cfg).unwrap();
        assert_eq!((ours.height(), ours.width()), (nh, nw));
        for (got, want) in ours.planes().iter().zip(reference_upsample(&f, &guide, &cfg)) {
            for (a, b) in got.iter().zip(&want) {
                assert!((*a as f64 - b).abs() < 1e-5, "seed {seed}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn constant_fields_stay_constant() {
    let cfg = GuidedConfig::default();
    let a = [0.9, 0.05, 0.0, 0.1, 0.0, 1.1, 0.0, -0.2, 0.3, 0.0, 0.7, 0.0];
    let f = FlowColorField::uniform(8, 8, 1.5, -0.5, a);
    let up = guided_upsample(&f, &random_guide(40, 40, 3), &cfg).unwrap();
    let want = [1.5 * 5.0, -0.5 * 5.0];
    for (k, plane) in up.planes().iter().enumerate() {
        let c = if k < 2 { want[k] } else { a[k - 2] };
        for v in plane.iter() {
            assert!((v - c).abs() < 1e-6, "plane {k}: {v} vs {c}");
        }
    }
}

#[test]
fn filter_preserves_constants_for_any_guide() {
    let guide: Vec<f32> = SplitMix(9).vec(400, 0.0, 1.0).into_iter().map(|v| v as f32).collect();
    let out = guided_filter(&guide, &vec![0.37; 400], 20, 20, &GuidedConfig::default()).unwrap();
    assert!(out.iter().all(|v| (v - 0.37).abs() < 1e-6));
}

#[test]
fn rejects_bad_extents() {
    assert!(guided_filter(&[0.0; 4], &[0.0; 5], 2, 2, &GuidedConfig::default()).is_err());
    let cfg = GuidedConfig { radius: 2, eps: 0.0 };
    assert!(guided_filter(&[0.0; 4], &[0.0; 4], 2, 2, &cfg).is_err());
}

fn combine(f: &FlowColorField, g: &FlowColorField, a: f32, b: f32) -> FlowColorField {
    let mix = |x: &[f32], y: &[f32]| -> Vec<f32> { x.iter().zip(y).map(|(p, q)| a * p + b * q).collect() };
    let mut planes = Vec::new();
    for k in 0..12 {
        planes.extend(mix(f.a_plane(k), g.a_plane(k)));
    }
    FlowColorField::from_parts(f.height(), f.width(), mix(f.u(), g.u()), mix(f.v(), g.v()), planes).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn upsampling_is_linear_in_the_field(seed in 0u64..1000, a in -2.0f32..2.0, b in -2.0f32..2.0) {
        let cfg = GuidedConfig::default();
        let guide = random_guide(20, 24, seed ^ 1);
        let (f, g) = (random_field(5, 6, seed), random_field(5, 6, seed ^ 2));
        let lhs = guided_upsample(&combine(&f, &g, a, b), &guide, &cfg).unwrap();
        let (uf, ug) = (guided_upsample(&f, &guide, &cfg).unwrap(), guided_upsample(&g, &guide, &cfg).unwrap());
        let rhs = combine(&uf, &ug, a, b);
        for (x, y) in lhs.planes().iter().zip(rhs.planes()) {
            for (p, q) in x.iter().zip(y) {
                prop_assert!((p - q).abs() < 1e-4 * (1.0 + q.abs()), "{} vs {}", p, q);
            }
        }
    }
}
