use latentbrush::models;
use latentbrush::nn::{Graph, Layer, Mode, NetworkParams, Node};
use latentbrush::{Error, Tensor};
use latentbrush_oracle::layers::forward as ref_forward;
use latentbrush_testkit::fixtures::{self, TOY};
use latentbrush_testkit::{
    check_input_grad, check_layer_instance, check_param_grads, layer_suite, params_f64, random_params,
    random_tensor, ref_layers,
};

const TOL: f64 = 1e-3;

fn single(layer: Layer, shape: Vec<usize>) -> Graph {
    Graph::new(shape, vec![Node::new("n", layer)]).unwrap()
}

#[test]
fn identity_graph_passes_values_and_gradients_through() {
    let mut g = Graph::new(vec![4], vec![]).unwrap();
    let p = random_params(&g, 1);
    let x = random_tensor(&[2, 4], -1.0, 1.0, 2);
    assert_eq!(g.forward(&p, &x, Mode::Inference).unwrap(), x);
    let up = random_tensor(&[2, 4], -1.0, 1.0, 3);
    assert_eq!(g.backward_input(&p, &up).unwrap(), up);
}

#[test]
fn tanh_of_zero_is_zero() {
    let mut g = single(Layer::Tanh, vec![5]);
    let p = random_params(&g, 1);
    let y = g.forward(&p, &Tensor::zeros(&[1, 5]), Mode::Inference).unwrap();
    assert!(y.data().iter().all(|v| *v == 0.0));
}

#[test]
fn relu_gates_the_upstream_gradient() {
    let mut g = single(Layer::Relu, vec![2]);
    let p = random_params(&g, 1);
    let x = Tensor::new(vec![1, 2], vec![-1.0, 2.0]).unwrap();
    g.forward(&p, &x, Mode::Train).unwrap();
    let dx = g.backward_input(&p, &Tensor::full(&[1, 2], 1.0)).unwrap();
    assert_eq!(dx.data(), &[0.0, 1.0]);
}

#[test]
fn backward_before_forward_is_rejected() {
    let mut g = single(Layer::Relu, vec![2]);
    let p = random_params(&g, 1);
    let up = Tensor::zeros(&[1, 2]);
    assert!(matches!(g.backward_input(&p, &up), Err(Error::BackwardBeforeForward)));
    assert!(matches!(g.backward_params(&p, &up), Err(Error::BackwardBeforeForward)));
}

#[test]
fn input_shape_mismatch_names_the_offender() {
    let mut gen = fixtures::toy_generator(1);
    let bad = Tensor::zeros(&[1, TOY.latent_dim + 1]);
    match gen.forward(&bad, Mode::Inference) {
        Err(Error::Shape { node, .. }) => assert_eq!(node, "input"),
        other => panic!("expected shape error, got {other:?}"),
    }
    // A parameter bundle for a different architecture fails at the first mismatching node.
    let other = models::build_generator(
        &latentbrush::nn::ArchDescriptor { base_channels: 3, ..TOY },
        &mut fixtures::rng(2),
    )
    .unwrap();
    let z = Tensor::zeros(&[1, TOY.latent_dim]);
    match gen.graph.forward(&other.params, &z, Mode::Inference) {
        Err(Error::Shape { node, .. }) => assert_eq!(node, "fc.weight"),
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn conv_bias_gradient_sums_upstream_over_positions() {
    let mut g = single(Layer::Conv { in_channels: 2, out_channels: 3 }, vec![2, 4, 4]);
    let p = random_params(&g, 5);
    g.forward(&p, &Tensor::zeros(&[1, 2, 4, 4]), Mode::Train).unwrap();
    let up = random_tensor(&[1, 3, 2, 2], -1.0, 1.0, 6);
    let grads = g.backward_params(&p, &up).unwrap();
    let db = grads.get("n.bias").unwrap();
    for o in 0..3 {
        let expect: f32 = up.data()[o * 4..(o + 1) * 4].iter().sum();
        assert!((db.data()[o] - expect).abs() < 1e-6);
    }
    assert!(grads.get("n.weight").unwrap().data().iter().all(|v| *v == 0.0));
}

#[test]
fn linear_weight_gradient_is_outer_product() {
    let mut g = single(Layer::Linear { in_features: 3, out_features: 2 }, vec![3]);
    let p = random_params(&g, 9);
    let x = Tensor::new(vec![1, 3], vec![0.5, -1.0, 2.0]).unwrap();
    let up = Tensor::new(vec![1, 2], vec![3.0, -0.25]).unwrap();
    g.forward(&p, &x, Mode::Train).unwrap();
    let dw = g.backward_params(&p, &up).unwrap();
    let expect = [1.5, -3.0, 6.0, -0.125, 0.25, -0.5];
    assert_eq!(dw.get("n.weight").unwrap().data(), &expect);
}

#[test]
fn every_layer_kind_passes_finite_differences() {
    for (name, mut graph, mode) in layer_suite() {
        for seed in 0..5 {
            let r = check_layer_instance(&mut graph, mode, 1000 + seed);
            assert!(r.max_rel_err < TOL, "{name} seed {seed}: {r:?}");
            assert!(r.checked > 0);
        }
    }
}

#[test]
fn toy_two_layer_generator_matches_reference_forward() {
    let nodes = vec![
        Node::new("up1", Layer::ConvTranspose { in_channels: 4, out_channels: 3 }),
        Node::new("relu", Layer::Relu),
        Node::new("up2", Layer::ConvTranspose { in_channels: 3, out_channels: 3 }),
        Node::new("tanh", Layer::Tanh),
    ];
    let mut g = Graph::new(vec![4, 2, 2], nodes).unwrap();
    let p = random_params(&g, 21);
    let z = random_tensor(&[2, 4, 2, 2], -1.0, 1.0, 22);
    let y = g.forward(&p, &z, Mode::Inference).unwrap();
    assert_eq!(y.shape(), &[2, 3, 8, 8]);
    let layers = ref_layers(&g, &params_f64(&p), Mode::Inference, g.len());
    let reference = ref_forward(&layers, &z.data().iter().map(|&v| v as f64).collect::<Vec<_>>(), 2, &[4, 2, 2]);
    for (a, b) in y.data().iter().zip(&reference.data) {
        assert!((*a as f64 - b).abs() < 1e-5);
    }
}

#[test]
fn full_toy_generator_input_gradient() {
    let mut gen = fixtures::toy_generator(3);
    for (mode, seed) in [(Mode::Train, 31), (Mode::Inference, 32)] {
        let z = random_tensor(&[2, TOY.latent_dim], -1.0, 1.0, seed);
        let end = gen.graph.len();
        let r = check_input_grad(&mut gen.graph, &gen.params, &z, mode, end, seed);
        assert!(r.max_rel_err < TOL, "{mode:?}: {r:?}");
    }
}

#[test]
fn toy_discriminator_parameter_gradients() {
    let mut d = fixtures::toy_discriminator(4);
    let x = random_tensor(&[3, 3, 32, 32], -1.0, 1.0, 41);
    let r = check_param_grads(&mut d.graph, &d.params, &x, Mode::Train, 12, 42);
    assert!(r.max_rel_err < TOL, "{r:?}");
}

#[test]
fn toy_encoder_input_gradient() {
    let mut e = fixtures::toy_encoder(5);
    let x = random_tensor(&[1, 3, 32, 32], -1.0, 1.0, 51);
    let end = e.graph.len();
    let r = check_input_grad(&mut e.graph, &e.params, &x, Mode::Inference, end, 52);
    assert!(r.max_rel_err < TOL, "{r:?}");
}

#[test]
fn inference_batchnorm_is_per_channel_affine() {
    let mut g = single(Layer::BatchNorm { channels: 2 }, vec![2, 3]);
    let p = random_params(&g, 61);
    let x = random_tensor(&[4, 2, 3], -1.0, 1.0, 62);
    let y = g.forward(&p, &x, Mode::Inference).unwrap();
    let (gm, bt, rm, rv) = ["gamma", "beta", "running_mean", "running_var"]
        .map(|s| p.get(&format!("n.{s}")).unwrap().data().to_vec())
        .into();
    for i in 0..x.len() {
        let ch = (i / 3) % 2;
        let scale = gm[ch] / (rv[ch] + latentbrush::nn::BN_EPS).sqrt();
        let expect = scale * x.data()[i] + (bt[ch] - scale * rm[ch]);
        assert!((y.data()[i] - expect).abs() < 1e-5);
    }
}

#[test]
fn train_mode_updates_running_stats_with_momentum() {
    let mut g = single(Layer::BatchNorm { channels: 1 }, vec![1, 2]);
    let mut p = random_params(&g, 71);
    let rm0 = p.get("n.running_mean").unwrap().data()[0];
    let x = Tensor::new(vec![2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    g.forward_train(&mut p, &x).unwrap();
    let rm1 = p.get("n.running_mean").unwrap().data()[0];
    assert!((rm1 - (0.9 * rm0 + 0.1 * 2.5)).abs() < 1e-6);
}

#[test]
fn forward_is_deterministic_and_does_not_mutate_input() {
    let mut gen = fixtures::toy_generator(8);
    let z = random_tensor(&[3, TOY.latent_dim], -1.0, 1.0, 81);
    let z_copy = z.clone();
    let a = gen.forward(&z, Mode::Train).unwrap();
    let b = gen.forward(&z, Mode::Train).unwrap();
    assert_eq!(a, b);
    assert_eq!(z, z_copy);
    let up = random_tensor(a.shape(), -1.0, 1.0, 82);
    let up_copy = up.clone();
    gen.backward_input(&up).unwrap();
    assert_eq!(up, up_copy);
}

#[allow(dead_code)]
fn _assert_params_send_sync(p: NetworkParams) -> impl Send + Sync {
    p
}
