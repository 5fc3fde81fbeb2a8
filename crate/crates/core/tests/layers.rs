mod common;

use common::{output_dims, per_example_oracle, randn, rng, sweep_geometries};
use pergrad::bench::{build_toy_net, equivalence_sweep, ToyNetConfig};
use pergrad::gradcheck::{check_per_example, FdTolerance};
use pergrad::layers::{
    aggregate_backward, backward_input, conv_per_example_grad, dense_per_example_grad, forward,
    loss_gradient, per_example_backward, per_example_loss, CacheEntry, ConvLayer, DenseLayer, Layer,
    PoolSpec,
};
use pergrad::{conv_nd, ConvGeometry, Error, Network, Tensor};
use proptest::prelude::*;

#[test]
fn route_matches_direct_per_example_loop() {
    for (g, xd, i) in sweep_geometries() {
        let x = randn(&xd, i as u64);
        let dy = randn(&output_dims(&g, &xd), 1000 + i as u64);
        let got = conv_per_example_grad(&x, &dy, &g).unwrap();
        let want = per_example_oracle(&x, &dy, &g);
        assert_eq!(got.dims(), want.dims(), "case {i}");
        assert!(got.max_abs_diff(&want).unwrap() <= 1e-10, "case {i}: {g:?}");
    }
}

#[test]
fn route_matches_loop_of_batch_one_aggregates() {
    for (g, xd, i) in sweep_geometries() {
        let x = randn(&xd, i as u64);
        let dy = randn(&output_dims(&g, &xd), 1000 + i as u64);
        let conv = ConvLayer::new(g.clone(), randn(&g.kernel_dims(), 7), None).unwrap();
        let net = Network::new(xd[1..].to_vec(), vec![Layer::Conv(conv)]).unwrap();
        let rows: Vec<Tensor> = (0..xd[0])
            .map(|b| {
                let xb = x.slice_batch(b..b + 1).unwrap();
                let (_, cache) = forward(&net, &xb).unwrap();
                let grads = aggregate_backward(&net, &cache, &dy.slice_batch(b..b + 1).unwrap()).unwrap();
                grads.params[0].weight.clone()
            })
            .collect();
        let want = Tensor::stack(&rows).unwrap();
        let got = conv_per_example_grad(&x, &dy, &g).unwrap();
        assert!(got.max_abs_diff(&want).unwrap() <= 1e-10, "case {i}");
    }
}

#[test]
fn route_hand_example() {
    let x = Tensor::new([1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let dy = Tensor::full([1, 1, 3], 1.0);
    let g = ConvGeometry::new(1, 1, [2]);
    assert_eq!(conv_per_example_grad(&x, &dy, &g).unwrap().data(), &[6.0, 9.0]);
    let zero = conv_per_example_grad(&x, &Tensor::zeros([1, 1, 3]), &g).unwrap();
    assert!(zero.data().iter().all(|&v| v == 0.0));
}

#[test]
fn dense_examples() {
    let x = Tensor::new([1, 2], vec![1.0, 2.0]).unwrap();
    let dy = Tensor::new([1, 1], vec![3.0]).unwrap();
    let g = dense_per_example_grad(&x, &dy).unwrap();
    assert_eq!(g.dims(), &[1, 1, 2]);
    assert_eq!(g.data(), &[3.0, 6.0]);

    let d = DenseLayer::new(Tensor::full([1, 1], 2.0), None).unwrap();
    let entry = CacheEntry { input: Tensor::full([3, 1], 1.0), argmax: None };
    let dy = randn(&[3, 1], 3);
    assert_eq!(backward_input(&Layer::Dense(d), &entry, &dy).unwrap(), dy.scale(2.0));
}

#[test]
fn loss_examples() {
    let out = Tensor::new([2, 2], vec![0.0, 0.0, 3.0, 4.0]).unwrap();
    assert_eq!(per_example_loss(&out).data(), &[0.0, 12.5]);
    assert_eq!(loss_gradient(&out), out);
}

#[test]
fn identity_conv_and_relu() {
    let conv = ConvLayer::new(ConvGeometry::new(1, 1, [1, 1]), Tensor::full([1, 1, 1, 1], 1.0), None).unwrap();
    let net = Network::new(vec![1, 3, 3], vec![Layer::Conv(conv), Layer::Relu]).unwrap();
    let x = randn(&[2, 1, 3, 3], 4);
    let (y, _) = forward(&net, &x).unwrap();
    assert_eq!(y, x.map(|v| v.max(0.0)));
    let negative = x.map(|v| -v.abs() - 1.0);
    assert!(forward(&net, &negative).unwrap().0.data().iter().all(|&v| v == 0.0));
}

#[test]
fn toy_net_forward_matches_hand_composition() {
    let cfg = ToyNetConfig {
        n_layers: 2,
        base_channels: 4,
        input_shape: vec![3, 12, 12],
        seed: 11,
        ..ToyNetConfig::default()
    };
    let net = build_toy_net(&cfg).unwrap();
    let x = randn(&[2, 3, 12, 12], 5);
    let (got, _) = forward(&net, &x).unwrap();

    let mut h = x.clone();
    for layer in net.layers() {
        h = match layer {
            Layer::Conv(c) => {
                let mut y = conv_nd(&h, &c.kernel, &c.geometry).unwrap();
                let bias = c.bias.as_ref().unwrap();
                let d_all = c.geometry.out_channels;
                let plane = y.numel() / (y.batch() * d_all);
                for (i, v) in y.data_mut().iter_mut().enumerate() {
                    *v += bias.data()[(i / plane) % d_all];
                }
                y
            }
            Layer::Relu => h.map(|v| v.max(0.0)),
            Layer::MaxPool(p) => {
                assert_eq!(*p, PoolSpec { window: 2, stride: 2 });
                let (b, c, hh, ww) = (h.dims()[0], h.dims()[1], h.dims()[2], h.dims()[3]);
                let (oh, ow) = ((hh - 2) / 2 + 1, (ww - 2) / 2 + 1);
                let mut out = Vec::new();
                for n in 0..b * c {
                    for i in 0..oh {
                        for j in 0..ow {
                            let at = |di: usize, dj: usize| h.data()[n * hh * ww + (2 * i + di) * ww + 2 * j + dj];
                            out.push(at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1)));
                        }
                    }
                }
                Tensor::new([b, c, oh, ow], out).unwrap()
            }
            Layer::Flatten => {
                let rest = h.numel() / h.batch();
                h.clone().reshape([h.batch(), rest]).unwrap()
            }
            Layer::Dense(d) => {
                let (i_len, j_len) = (d.inputs(), d.outputs());
                let mut out = Vec::new();
                for b in 0..h.batch() {
                    for j in 0..j_len {
                        let mut acc = d.bias.as_ref().unwrap().data()[j];
                        for i in 0..i_len {
                            acc += d.weight.data()[j * i_len + i] * h.data()[b * i_len + i];
                        }
                        out.push(acc);
                    }
                }
                Tensor::new([h.batch(), j_len], out).unwrap()
            }
        };
    }
    assert!(got.max_abs_diff(&h).unwrap() <= 1e-12);
}

/// Central differences of `sum_b L[b]` with respect to one layer's input.
fn input_fd(layers: Vec<Layer>, x: &Tensor) {
    let net = Network::new(x.dims()[1..].to_vec(), layers).unwrap();
    let (out, cache) = forward(&net, x).unwrap();
    // Walk the whole stack back to the network input.
    let mut dy = loss_gradient(&out);
    for (layer, entry) in net.layers().iter().zip(cache.entries()).rev() {
        dy = backward_input(layer, entry, &dy).unwrap();
    }
    let tol = FdTolerance::default();
    let total = |x: &Tensor| per_example_loss(&forward(&net, x).unwrap().0).data().iter().sum::<f64>();
    for i in (0..x.numel()).step_by((x.numel() / 25).max(1)) {
        let mut plus = x.clone();
        plus.data_mut()[i] += tol.step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= tol.step;
        let numeric = (total(&plus) - total(&minus)) / (2.0 * tol.step);
        assert!(
            tol.accepts(dy.data()[i], numeric),
            "entry {i}: analytic {} numeric {numeric}",
            dy.data()[i]
        );
    }
}

#[test]
fn input_gradients_match_finite_differences() {
    let mut r = rng(3);
    let g = ConvGeometry::new(2, 4, [2, 3])
        .with_stride([2, 1])
        .with_dilation([1, 2])
        .with_padding([1, 1])
        .with_groups(2);
    let x = randn(&[2, 2, 7, 8], 9);
    input_fd(vec![Layer::Conv(ConvLayer::random(g.clone(), true, 0.5, &mut r))], &x);
    input_fd(
        vec![
            Layer::Conv(ConvLayer::random(g.clone(), true, 0.5, &mut r)),
            Layer::Relu,
            Layer::MaxPool(PoolSpec { window: 2, stride: 1 }),
            Layer::Flatten,
            Layer::Dense(DenseLayer::random(4 * 3 * 5, 3, true, 0.2, &mut r)),
        ],
        &x,
    );
    let x1 = randn(&[3, 5], 10);
    input_fd(vec![Layer::Dense(DenseLayer::random(5, 4, true, 0.5, &mut r))], &x1);
}

#[test]
fn per_example_grads_match_finite_differences() {
    let net = build_toy_net(&ToyNetConfig {
        n_layers: 3,
        base_channels: 3,
        input_shape: vec![2, 12, 12],
        classes: 4,
        seed: 2,
        ..ToyNetConfig::default()
    })
    .unwrap();
    let x = randn(&[3, 2, 12, 12], 6);
    let (out, cache) = forward(&net, &x).unwrap();
    let g = per_example_backward(&net, &cache, &loss_gradient(&out)).unwrap();
    let report = check_per_example(&net, &x, &g, 10, 1, FdTolerance::default()).unwrap();
    assert!(report.probes.len() >= 40);
    assert!(report.passed(), "worst {}", report.worst_rel_error());
}

#[test]
fn sum_of_per_example_equals_aggregate() {
    for case in equivalence_sweep().iter().step_by(3) {
        let (net, x) = case.build(4).unwrap();
        let (out, cache) = forward(&net, &x).unwrap();
        let dy = loss_gradient(&out);
        let pe = per_example_backward(&net, &cache, &dy).unwrap().sum_over_batch().unwrap();
        let agg = aggregate_backward(&net, &cache, &dy).unwrap();
        let dev = pe.max_abs_diff(&agg).unwrap().into_iter().fold(0.0, f64::max);
        assert!(dev <= 1e-9, "{case}: {dev}");
    }
}

#[test]
fn zero_output_gradient_gives_zero_grads() {
    let (net, x) = equivalence_sweep()[5].build(0).unwrap();
    let (out, cache) = forward(&net, &x).unwrap();
    let zero = Tensor::zeros(out.dims().to_vec());
    let agg = aggregate_backward(&net, &cache, &zero).unwrap();
    let pe = per_example_backward(&net, &cache, &zero).unwrap();
    assert!(agg.tensors().chain(pe.tensors()).all(|t| t.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn single_example_batch_is_degenerate() {
    for case in equivalence_sweep().iter().filter(|c| c.batch == 1).take(12) {
        let (net, x) = case.build(1).unwrap();
        let (out, cache) = forward(&net, &x).unwrap();
        let dy = loss_gradient(&out);
        let pe = per_example_backward(&net, &cache, &dy).unwrap();
        let agg = aggregate_backward(&net, &cache, &dy).unwrap();
        let dev = pe.example(0).unwrap().max_abs_diff(&agg).unwrap().into_iter().fold(0.0, f64::max);
        assert!(dev <= 1e-12, "{case}: {dev}");
    }
}

#[test]
fn composition_errors_name_the_layer() {
    let conv = ConvLayer::new(ConvGeometry::new(3, 2, [5, 5]), Tensor::zeros([2, 3, 5, 5]), None).unwrap();
    let err = Network::new(vec![3, 8, 8], vec![Layer::Relu, Layer::Conv(conv.clone()), Layer::Conv(conv)]).unwrap_err();
    match err {
        Error::Composition { layer, .. } => assert_eq!(layer, 2),
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn three_axis_layers_are_rejected_for_per_example_route() {
    let g = ConvGeometry::new(1, 1, [1, 1, 1]);
    let x = Tensor::zeros([1, 1, 2, 2, 2]);
    assert!(conv_per_example_grad(&x, &x, &g).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Changing one example never moves another example's gradient.
    #[test]
    fn per_example_grads_are_local(case_idx in 0usize..108, seed in 0u64..1000, scale in 0.1f64..5.0) {
        let case = &equivalence_sweep()[case_idx];
        prop_assume!(case.batch > 1);
        let (net, x) = case.build(seed).unwrap();
        let grads = |x: &Tensor| {
            let (out, cache) = forward(&net, x).unwrap();
            per_example_backward(&net, &cache, &loss_gradient(&out)).unwrap()
        };
        let base = grads(&x);
        let row = x.numel() / x.batch();
        let mut moved = x.clone();
        moved.data_mut()[..row].iter_mut().for_each(|v| *v *= -scale);
        let after = grads(&moved);
        for b in 1..x.batch() {
            prop_assert_eq!(base.example(b).unwrap(), after.example(b).unwrap());
        }
    }
}
