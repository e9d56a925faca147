use proptest::prelude::*;
use tscn::data::{compute_flow, split, synth_generate, SynthSpec};
use tscn::eval::compute_cmc;
use tscn::fusion::{fuse, FusionKind};
use tscn::layers::{pool2d, subsample, upsample_zero_pad, PoolKind, PoolParams};
use tscn::network::{Network, NetworkConfig};
use tscn::training::{identity_loss_value, siamese_loss_value};
use tscn::verification::oracles;
use tscn::Tensor;

fn map(h: usize, w: usize, d: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-2.0f64..2.0, h * w * d).prop_map(move |v| Tensor::new([h, w, d], v).unwrap())
}

/// 2..=4 maps of one random shape.
fn stream_maps() -> impl Strategy<Value = Vec<Tensor>> {
    (1usize..5, 1usize..5, 1usize..4, 2usize..=4)
        .prop_flat_map(|(h, w, d, s)| prop::collection::vec(map(h, w, d), s))
}

fn kind() -> impl Strategy<Value = FusionKind> {
    prop::sample::select(FusionKind::ALL.to_vec())
}

fn distances() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>)> {
    (1usize..=8, 1usize..=8).prop_flat_map(|(p, g)| {
        (
            prop::collection::vec(prop::collection::vec(prop_oneof![0.0f64..1.0, (0u8..3).prop_map(f64::from)], g), p),
            prop::collection::vec(0..g, p),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fused_shape_follows_kind(maps in stream_maps(), k in kind()) {
        let (h, w, d) = maps[0].hwc().unwrap();
        let out = fuse(k, &maps).unwrap();
        prop_assert_eq!(out.y.shape(), &k.output_shape(maps.len(), [h, w, d])[..]);
    }

    #[test]
    fn concat_blocks_recover_inputs(maps in stream_maps(), k in prop::sample::select(vec![FusionKind::Channel, FusionKind::Width, FusionKind::Height])) {
        let out = fuse(k, &maps).unwrap();
        for (s, m) in maps.iter().enumerate() {
            prop_assert_eq!(&out.block(s).unwrap(), m);
        }
    }

    #[test]
    fn sum_and_max_ignore_stream_order(maps in stream_maps(), rot in 0usize..4) {
        let mut turned = maps.clone();
        turned.rotate_left(rot % maps.len());
        turned.reverse();
        prop_assert_eq!(fuse(FusionKind::Max, &maps).unwrap().y, fuse(FusionKind::Max, &turned).unwrap().y);
        // Summation order changes rounding only.
        let a = fuse(FusionKind::Sum, &maps).unwrap().y;
        let b = fuse(FusionKind::Sum, &turned).unwrap().y;
        prop_assert!(a.max_abs_diff(&b) <= 1e-12);
    }

    #[test]
    fn max_fusion_is_idempotent(x in map(3, 4, 2), copies in 2usize..=4) {
        let maps = vec![x.clone(); copies];
        prop_assert_eq!(fuse(FusionKind::Max, &maps).unwrap().y, x);
    }

    #[test]
    fn mismatched_shapes_are_rejected(a in map(2, 3, 2), b in map(3, 2, 2), k in kind()) {
        prop_assert!(fuse(k, &[a, b]).is_err());
    }

    #[test]
    fn cmc_matches_oracle_and_ends_at_one((dist, truth) in distances()) {
        let g = dist[0].len();
        let flat = Tensor::new([dist.len(), g], dist.concat()).unwrap();
        let curve = compute_cmc(&flat, &truth).unwrap();
        prop_assert!(curve.rates.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(curve.rates[g - 1], 1.0);
        prop_assert_eq!(curve.rates, oracles::cmc(&dist, &truth));
    }

    #[test]
    fn pooling_matches_oracle(
        x in (1usize..=8, 1usize..=8, 1usize..=3).prop_flat_map(|(h, w, d)| map(h, w, d)),
        k in prop::sample::select(vec![PoolKind::Max, PoolKind::Average, PoolKind::DilatedMax, PoolKind::DilatedAverage]),
        window in 1usize..=3,
        stride in 1usize..=3,
    ) {
        let (h, w, _) = x.hwc().unwrap();
        let dilation = if k.is_dilated() { 2 } else { 1 };
        let p = PoolParams::new(k, window, stride, dilation).unwrap().covering(h, w);
        let y = pool2d(&x, &p).unwrap();
        prop_assert_eq!(&y.shape()[..2], &[h.div_ceil(stride), w.div_ceil(stride)][..]);
        prop_assert!(y.max_abs_diff(&oracles::pool2d(&x, &p)) <= 1e-10);
    }

    #[test]
    fn subsample_inverts_zero_pad_upsampling(x in map(3, 2, 2), factor in 1usize..=4) {
        let up = upsample_zero_pad(&x, factor).unwrap();
        prop_assert_eq!(up.shape(), &[3 * factor, 2 * factor, 2][..]);
        prop_assert_eq!(up.sum(), x.sum());
        prop_assert_eq!(subsample(&up, factor, 0).unwrap(), x);
    }

    #[test]
    fn siamese_loss_is_nonnegative(
        (a, b) in (1usize..6).prop_flat_map(|n| (prop::collection::vec(-3.0f64..3.0, n), prop::collection::vec(-3.0f64..3.0, n))),
        margin in 0.1f64..8.0,
    ) {
        let pos = siamese_loss_value(&a, &b, true, margin).unwrap();
        let neg = siamese_loss_value(&a, &b, false, margin).unwrap();
        prop_assert!(pos >= 0.0 && neg >= 0.0);
        prop_assert!(neg <= margin);
        prop_assert!((pos + neg - margin).abs() < 1e-9 || pos >= margin);
    }

    #[test]
    fn identity_loss_ignores_logit_shift(logits in prop::collection::vec(-5.0f64..5.0, 2..8), shift in -10.0f64..10.0, pick in 0usize..8) {
        let label = pick % logits.len();
        let a = identity_loss_value(&logits, label).unwrap();
        let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
        prop_assert!(a >= 0.0);
        prop_assert!((a - identity_loss_value(&shifted, label).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn flow_stays_in_unit_range(prev in map(6, 7, 3), next in map(6, 7, 3)) {
        let f = compute_flow(&prev.map(|v| v.abs() / 2.0), &next.map(|v| v.abs() / 2.0)).unwrap();
        prop_assert_eq!(f.shape(), &[6, 7, 2][..]);
        prop_assert!(f.data().iter().all(|v| v.is_finite() && v.abs() <= 1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn split_is_disjoint_and_complete(seed in any::<u64>(), ids in 2usize..7) {
        let samples = synth_generate(&SynthSpec::new(ids, 2, (8, 8), 1)).unwrap();
        let s = split(&samples, seed).unwrap();
        let (train, test) = (s.train_ids(), s.test_ids());
        prop_assert_eq!(train.len(), ids / 2);
        prop_assert_eq!(train.len() + test.len(), ids);
        prop_assert!(train.iter().all(|i| !test.contains(i)));
    }

    #[test]
    fn feature_width_does_not_depend_on_extent(h in 8usize..20, w in 8usize..20, seed in 0u64..4) {
        let mut cfg = NetworkConfig::baseline().desk_scale();
        cfg.input_extent = (h, w);
        let net = Network::build(cfg.clone(), seed).unwrap();
        let frames: Vec<Tensor> = (0..2)
            .map(|t| Tensor::from_fn([h, w, cfg.input_channels], |i| ((i + t) % 7) as f64 / 7.0).unwrap())
            .collect();
        let f = net.sequence_features(&frames).unwrap();
        prop_assert_eq!(f.shape(), &[2, cfg.rnn_hidden][..]);
    }
}
