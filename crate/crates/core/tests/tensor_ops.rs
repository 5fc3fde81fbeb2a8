mod common;

use common::{conv_oracle, randn, small_geometry};
use pergrad::tensor::{conv_nd_with, conv_output_extent, pad_spatial, truncate_spatial, LoopOrder};
use pergrad::{conv_nd, ConvGeometry, Error, Tensor};
use proptest::prelude::*;

fn instance(seed: u64) -> (Tensor, Tensor, ConvGeometry) {
    let (g, extents, batch) = small_geometry(seed);
    let mut xd = vec![batch, g.in_channels];
    xd.extend(&extents);
    (randn(&xd, seed + 1), randn(&g.kernel_dims(), seed + 2), g)
}

#[test]
fn conv_matches_direct_loop() {
    for seed in 0..300 {
        let (x, h, g) = instance(seed);
        let got = conv_nd(&x, &h, &g).unwrap();
        let want = conv_oracle(&x, &h, &g);
        assert_eq!(got.dims(), want.dims(), "seed {seed}: {g:?}");
        assert!(got.max_abs_diff(&want).unwrap() <= 1e-12, "seed {seed}: {g:?}");
    }
}

#[test]
fn loop_orders_agree_bitwise() {
    for seed in 0..100 {
        let (x, h, g) = instance(seed);
        let a = conv_nd_with(&x, &h, &g, LoopOrder::Scatter).unwrap();
        let b = conv_nd_with(&x, &h, &g, LoopOrder::Gather).unwrap();
        assert_eq!(a, b, "seed {seed}");
    }
}

#[test]
fn three_spatial_axes_match_direct_loop() {
    let g = ConvGeometry::new(2, 4, [2, 3, 2])
        .with_stride([1, 2, 1])
        .with_dilation([2, 1, 1])
        .with_padding([1, 0, 1])
        .with_groups(2);
    let x = randn(&[2, 2, 5, 6, 4], 7);
    let h = randn(&g.kernel_dims(), 8);
    let got = conv_nd(&x, &h, &g).unwrap();
    assert!(got.max_abs_diff(&conv_oracle(&x, &h, &g)).unwrap() <= 1e-12);
}

#[test]
fn depthwise_example() {
    let x = Tensor::new([1, 2, 4], vec![1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0]).unwrap();
    let h = Tensor::full([2, 1, 2], 1.0);
    let y = conv_nd(&x, &h, &ConvGeometry::new(2, 2, [2]).with_groups(2)).unwrap();
    assert_eq!(y.data(), &[3.0, 5.0, 7.0, 30.0, 50.0, 70.0]);
}

#[test]
fn extent_examples() {
    assert_eq!(conv_output_extent(10, 3, 1, 1, 0).unwrap(), 8);
    assert_eq!(conv_output_extent(10, 3, 2, 1, 0).unwrap(), 4);
    assert_eq!(conv_output_extent(10, 3, 1, 2, 0).unwrap(), 6);
}

#[test]
fn padding_and_truncation_examples() {
    let x = Tensor::new([1, 1, 2], vec![1.0, 2.0]).unwrap();
    assert_eq!(pad_spatial(&x, &[2]).unwrap().data(), &[0.0, 0.0, 1.0, 2.0, 0.0, 0.0]);
    assert_eq!(pad_spatial(&x, &[0]).unwrap(), x);
    let y = Tensor::new([1, 1, 3], vec![6.0, 9.0, 4.0]).unwrap();
    assert_eq!(truncate_spatial(&y, &[2]).unwrap().data(), &[6.0, 9.0]);
    let z = Tensor::zeros([1, 1, 3, 3]);
    assert_eq!(truncate_spatial(&z, &[2, 1]).unwrap().dims(), &[1, 1, 2, 1]);
}

#[test]
fn kernel_too_large_names_axis() {
    let g = ConvGeometry::new(1, 1, [2, 5]);
    let err = conv_nd(&Tensor::zeros([1, 1, 4, 4]), &Tensor::zeros([1, 1, 2, 5]), &g).unwrap_err();
    match err {
        Error::InvalidGeometry { axis, .. } => assert_eq!(axis, Some(3)),
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn channels_not_divisible_by_groups_rejected() {
    let g = ConvGeometry::new(3, 2, [1]).with_groups(2);
    assert!(matches!(
        conv_nd(&Tensor::zeros([1, 3, 4]), &Tensor::zeros([2, 1, 1]), &g),
        Err(Error::InvalidGeometry { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_is_linear_in_input(seed in 0u64..10_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let (x1, h, g) = instance(seed);
        let x2 = randn(x1.dims(), seed + 99);
        let mixed = x1.scale(a).add(&x2.scale(b)).unwrap();
        let lhs = conv_nd(&mixed, &h, &g).unwrap();
        let rhs = conv_nd(&x1, &h, &g).unwrap().scale(a)
            .add(&conv_nd(&x2, &h, &g).unwrap().scale(b)).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-10);
    }

    #[test]
    fn output_length_matches_extent_formula(seed in 0u64..10_000) {
        let (x, h, g) = instance(seed);
        let y = conv_nd(&x, &h, &g).unwrap();
        for a in 0..g.kernel.len() {
            let want = conv_output_extent(x.dims()[a + 2], g.kernel[a], g.stride[a], g.dilation[a], g.padding[a]).unwrap();
            prop_assert_eq!(y.dims()[a + 2], want);
        }
    }

    #[test]
    fn batch_rows_are_independent(seed in 0u64..10_000) {
        let (x, h, g) = instance(seed);
        let y = conv_nd(&x, &h, &g).unwrap();
        for b in 0..x.batch() {
            let single = conv_nd(&x.slice_batch(b..b + 1).unwrap(), &h, &g).unwrap();
            prop_assert_eq!(single, y.slice_batch(b..b + 1).unwrap());
        }
    }
}
