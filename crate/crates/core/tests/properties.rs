use cgni_core::imaging::{axis_offsets, patch_grid};
use cgni_core::ops::gradcheck::{grad_check, CheckLayer};
use cgni_core::ops::{conv2d_forward, output_dim, ConvSpec, PoolSpec};
use cgni_core::training::{lr_schedule, TrainConfig};
use cgni_core::{majority_vote, Label, PatchRecord, PatchSpec, Shape, Tensor};
use proptest::prelude::*;

const LAYER_TOL: f64 = 1e-4;

fn tensor(shape: Shape, data: Vec<f64>) -> Tensor<f64> {
    Tensor::from_vec(shape, data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn conv_gradients(
        c_in in 1usize..3, c_out in 1usize..3, k in 1usize..4,
        stride in 1usize..3, pad in 0usize..2, h in 5usize..8, n in 1usize..3, seed: u64,
    ) {
        let spec = ConvSpec::square(2 * k - 1, stride, pad.min(k - 1), c_in, c_out);
        let err = grad_check(CheckLayer::Conv(spec), Shape::new(n, c_in, h, h), 1e-6, seed).unwrap();
        prop_assert!(err < LAYER_TOL, "{err}");
    }

    #[test]
    fn pool_gradients(
        kernel in 2usize..6, stride in 1usize..3, pad in 0usize..3, include_pad: bool,
        h in 6usize..10, seed: u64,
    ) {
        let spec = PoolSpec::new(kernel, stride, pad.min(kernel - 1), include_pad);
        let err = grad_check(CheckLayer::AvgPool(spec), Shape::new(2, 2, h, h), 1e-6, seed).unwrap();
        prop_assert!(err < LAYER_TOL, "{err}");
    }

    #[test]
    fn batch_norm_gradients(n in 2usize..4, c in 1usize..4, h in 1usize..4, seed: u64) {
        let err = grad_check(CheckLayer::BatchNorm, Shape::new(n, c, h, h), 1e-6, seed).unwrap();
        prop_assert!(err < LAYER_TOL, "{err}");
    }

    #[test]
    fn relu_gradients(n in 1usize..3, c in 1usize..3, h in 1usize..5, seed: u64) {
        let err = grad_check(CheckLayer::Relu, Shape::new(n, c, h, h), 1e-6, seed).unwrap();
        prop_assert!(err < LAYER_TOL, "{err}");
    }

    #[test]
    fn linear_gradients(n in 1usize..4, feats in 1usize..9, out in 1usize..4, seed: u64) {
        let err = grad_check(
            CheckLayer::Linear { out_features: out }, Shape::new(n, feats, 1, 1), 1e-6, seed,
        ).unwrap();
        prop_assert!(err < LAYER_TOL, "{err}");
    }

    #[test]
    fn softmax_loss_gradients(n in 1usize..5, classes in 2usize..5, seed: u64) {
        let err = grad_check(
            CheckLayer::SoftmaxCrossEntropy, Shape::new(n, classes, 1, 1), 1e-6, seed,
        ).unwrap();
        prop_assert!(err < LAYER_TOL, "{err}");
    }
}

proptest! {
    #[test]
    fn conv_shape_algebra(
        h in 1usize..40, w in 1usize..40, k in 1usize..8, stride in 1usize..4, pad in 0usize..4,
    ) {
        let spec = ConvSpec { kernel_h: k, kernel_w: k, stride, pad, in_channels: 1, out_channels: 2 };
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, h, w));
        let fits = h + 2 * pad >= k && w + 2 * pad >= k;
        match conv2d_forward(&x, &Tensor::zeros(spec.weight_shape()), None, &spec) {
            Ok(y) => {
                prop_assert!(fits);
                let s = y.shape();
                prop_assert_eq!((s.n, s.c), (1, 2));
                prop_assert_eq!(s.h, (h + 2 * pad - k) / stride + 1);
                prop_assert_eq!(s.w, (w + 2 * pad - k) / stride + 1);
                prop_assert_eq!(output_dim("rows", h, k, stride, pad).unwrap(), s.h);
            }
            Err(_) => prop_assert!(!fits),
        }
    }

    #[test]
    fn conv_is_linear(
        a in -3.0f64..3.0, b in -3.0f64..3.0,
        xs in prop::collection::vec(-5.0f64..5.0, 2 * 36),
        ws in prop::collection::vec(-1.0f64..1.0, 2 * 9),
    ) {
        let spec = ConvSpec::square(3, 1, 1, 2, 1);
        let s = Shape::new(1, 2, 6, 6);
        let w = tensor(spec.weight_shape(), ws);
        let x = tensor(s, xs[..36].iter().chain(&xs[..36]).copied().collect());
        let y = tensor(s, xs[36..].iter().chain(&xs[36..]).copied().collect());
        let mix = tensor(s, x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect());
        let lhs = conv2d_forward(&mix, &w, None, &spec).unwrap();
        let cx = conv2d_forward(&x, &w, None, &spec).unwrap();
        let cy = conv2d_forward(&y, &w, None, &spec).unwrap();
        for ((l, p), q) in lhs.data().iter().zip(cx.data()).zip(cy.data()) {
            prop_assert!((l - (a * p + b * q)).abs() < 1e-9);
        }
    }
}

fn enumerate_offsets(dim: usize, patch: usize, stride: usize) -> Vec<usize> {
    (0..dim).filter(|o| o % stride == 0 && o + patch <= dim).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn grid_matches_enumeration(
        width in 1usize..400, height in 1usize..400, patch in 1usize..120, stride_seed in 0usize..1000,
        ni: bool,
    ) {
        let stride = 1 + stride_seed % patch;
        let spec = PatchSpec { patch_size: patch, stride_ni: stride, stride_cg: stride };
        let label = if ni { Label::Ni } else { Label::Cg };
        prop_assert_eq!(axis_offsets(width, patch, stride), enumerate_offsets(width, patch, stride));
        match patch_grid(width, height, &spec, label) {
            Ok(grid) => {
                let rows = enumerate_offsets(height, patch, stride);
                let cols = enumerate_offsets(width, patch, stride);
                let expected: Vec<_> = rows.iter()
                    .flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect();
                prop_assert_eq!(grid, expected);
            }
            Err(_) => prop_assert!(width < patch || height < patch),
        }
    }
}

fn record(p_cg: f64, p_ni: f64) -> PatchRecord {
    PatchRecord { image_id: "img".into(), row: 0, col: 0, label: Label::Ni, probs: Some((p_cg, p_ni)) }
}

/// Counts in sixteenths so that probability sums are exact.
fn vote_oracle(cg_sixteenths: &[u32]) -> Label {
    let ni_votes = cg_sixteenths.iter().filter(|&&k| k < 8).count();
    let cg_votes = cg_sixteenths.len() - ni_votes;
    let sum_cg: u32 = cg_sixteenths.iter().sum();
    let sum_ni: u32 = cg_sixteenths.iter().map(|k| 16 - k).sum();
    if ni_votes > cg_votes || (ni_votes == cg_votes && sum_ni > sum_cg) {
        Label::Ni
    } else {
        Label::Cg
    }
}

fn tied_set() -> impl Strategy<Value = Vec<u32>> {
    (1usize..8).prop_flat_map(|half| {
        (prop::collection::vec(0u32..8, half), prop::collection::vec(8u32..=16, half))
            .prop_map(|(a, b)| a.into_iter().chain(b).collect())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn vote_matches_oracle(
        ks in prop_oneof![prop::collection::vec(0u32..=16, 1..25), tied_set()],
        rotate in 0usize..25,
    ) {
        let records: Vec<_> = ks.iter().map(|&k| record(k as f64 / 16.0, (16 - k) as f64 / 16.0)).collect();
        let v = majority_vote(&records).unwrap();
        prop_assert_eq!(v.label, vote_oracle(&ks));
        prop_assert_eq!(v.votes_cg + v.votes_ni, ks.len());
        prop_assert_eq!(v.tie_broken, v.votes_cg == v.votes_ni);

        let mut permuted = records.clone();
        permuted.reverse();
        permuted.rotate_left(rotate % records.len());
        prop_assert_eq!(majority_vote(&permuted).unwrap(), v);
    }

    #[test]
    fn lr_is_non_increasing(a in 0u64..10_000_000, b in 0u64..10_000_000) {
        let cfg = TrainConfig::default();
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(lr_schedule(hi, &cfg) <= lr_schedule(lo, &cfg));
    }
}

#[test]
fn lr_closed_form() {
    let cfg = TrainConfig::default();
    for iter in [0u64, 1, 1_000, 10_000, 1_000_000] {
        let expected = 0.001 * (1.0 + 1e-4 * iter as f64).powf(-0.75);
        let got = lr_schedule(iter, &cfg);
        assert!(((got - expected) / expected).abs() < 1e-12, "{iter}: {got} vs {expected}");
    }
}
