use latentbrush::latent::LatentVector;
use latentbrush::project::{FeatureExtractor, Method, OptConfig, Optimizer, Projector, ReconLoss};
use latentbrush_testkit::fixtures::{rng, toy_discriminator, toy_encoder, toy_generator, TOY};
use latentbrush_testkit::randomized;

fn projector(seed: u64) -> Projector {
    let g = randomized(toy_generator(seed), seed ^ 0x77);
    let d = toy_discriminator(seed);
    Projector::new(
        g,
        Some(toy_encoder(seed)),
        Some(FeatureExtractor::discriminator(&d).unwrap()),
        ReconLoss::default(),
    )
}

fn target(p: &mut Projector, seed: u64) -> latentbrush::image::ImageRGB {
    p.render(&LatentVector::sample(TOY.latent_dim, &mut rng(seed))).unwrap()
}

#[test]
fn hybrid_with_zero_steps_equals_net() {
    let mut p = projector(1);
    let t = target(&mut p, 2);
    let net = p.project_net(&t).unwrap();
    let hyb = p.project_hybrid(&t, Optimizer::Adam { lr: 0.1 }, 0).unwrap();
    assert_eq!(net.z, hyb.z);
    assert_eq!(net.loss, hyb.loss);
    assert_eq!(net.reconstruction, hyb.reconstruction);
}

#[test]
fn single_restart_without_steps_returns_its_initialization() {
    let p = projector(3);
    let t = target(&mut p.clone(), 4);
    let cfg = OptConfig {
        steps: 0,
        restarts: 1,
        ..OptConfig::default()
    };
    let r = p.project_opt(&t, &cfg, 9).unwrap();
    let init = LatentVector::sample(TOY.latent_dim, &mut rng(9));
    assert_eq!(r.z, init);
    assert_eq!(r.trace.len(), 1);
}

#[test]
fn optimization_is_reproducible_by_seed() {
    let p = projector(5);
    let t = target(&mut p.clone(), 6);
    let cfg = OptConfig {
        steps: 10,
        restarts: 3,
        ..OptConfig::default()
    };
    let a = p.project_opt(&t, &cfg, 1).unwrap();
    let b = p.project_opt(&t, &cfg, 1).unwrap();
    assert_eq!(a.z, b.z);
    assert_eq!(a.loss, b.loss);
}

#[test]
fn best_of_restarts_is_no_worse_than_any_single_run() {
    let p = projector(7);
    let t = target(&mut p.clone(), 8);
    let cfg = OptConfig {
        steps: 15,
        restarts: 4,
        ..OptConfig::default()
    };
    let best = p.project_opt(&t, &cfg, 3).unwrap();
    let mut r = rng(3);
    let inits: Vec<LatentVector> = (0..4).map(|_| LatentVector::sample(TOY.latent_dim, &mut r)).collect();
    for init in inits {
        let (_, loss, _) = p.clone().optimize(&init, &t, cfg.optimizer, cfg.steps).unwrap();
        assert!(best.loss <= loss);
    }
}

#[test]
fn line_search_never_increases_the_loss() {
    for seed in 0..4 {
        let mut p = projector(10 + seed);
        let t = target(&mut p, 20 + seed);
        let init = LatentVector::sample(TOY.latent_dim, &mut rng(30 + seed));
        let (z, loss, trace) = p.optimize(&init, &t, Optimizer::LineSearch { initial_step: 0.1 }, 20).unwrap();
        assert!(trace.windows(2).all(|w| w[1] <= w[0]), "{trace:?}");
        assert!(z.values().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(loss, *trace.last().unwrap());
    }
}

#[test]
fn adam_reduces_the_loss() {
    let mut p = projector(12);
    let t = target(&mut p, 13);
    let init = LatentVector::sample(TOY.latent_dim, &mut rng(14));
    let (_, loss, trace) = p.optimize(&init, &t, Optimizer::Adam { lr: 0.05 }, 40).unwrap();
    assert!(loss < trace[0], "{} -> {loss}", trace[0]);
    assert!(trace.iter().all(|l| *l >= loss));
}

#[test]
fn encoder_projection_is_faster_than_optimization() {
    let mut p = projector(15);
    let t = target(&mut p, 16);
    let cfg = OptConfig {
        steps: 20,
        restarts: 2,
        ..OptConfig::default()
    };
    let (_, net) = p.project(&t, Method::Net, &cfg, 0).unwrap();
    let (_, opt) = p.project(&t, Method::Opt, &cfg, 0).unwrap();
    assert!(net < opt, "{net} vs {opt}");
}

#[test]
fn wrong_target_size_and_missing_encoder_are_errors() {
    let mut p = projector(17);
    let small = latentbrush::image::ImageRGB::filled(16, 16, [0.0; 3]);
    assert!(p.project_net(&small).is_err());
    assert!(p.project_opt(&small, &OptConfig::default(), 0).is_err());
    p.encoder = None;
    let t = target(&mut p, 18);
    assert!(p.project_net(&t).is_err());
    let cfg = OptConfig { restarts: 0, ..OptConfig::default() };
    assert!(p.project_opt(&t, &cfg, 0).is_err());
}

#[test]
fn method_names_round_trip() {
    for m in [Method::Opt, Method::Net, Method::Hybrid] {
        assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
    }
    assert!("gradient".parse::<Method>().is_err());
}

