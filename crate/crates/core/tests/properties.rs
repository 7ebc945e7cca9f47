use intentlab::datamodel::{
    anticipation_pairs, extract_eval_clips, label_clip, tiling_count, IntentLabel, Split, UnlabeledVideo, VideoRecord,
};
use intentlab::losses::{info_nce_embeddings, temporal_contrastive_embeddings};
use intentlab::sampling::{sample_triplet, NegativeScope};
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scope() -> impl Strategy<Value = NegativeScope> {
    prop_oneof![Just(NegativeScope::Global), Just(NegativeScope::Local)]
}

fn block(k: usize, d: usize) -> impl Strategy<Value = Array2<f64>> {
    proptest::collection::vec(prop_oneof![-2.0..-0.1f64, 0.1..2.0f64], k * d)
        .prop_map(move |v| Array2::from_shape_vec((k, d), v).unwrap())
}

proptest! {
    #[test]
    fn labels_partition_by_position(start in 0.0..50.0f64, duration in 0.01..5.0f64, t_a in 0.0..50.0f64) {
        let l = label_clip(start, duration, t_a).unwrap();
        let expected = if start + duration <= t_a {
            IntentLabel::Intentional
        } else if start >= t_a {
            IntentLabel::Unintentional
        } else {
            IntentLabel::Transitional
        };
        prop_assert_eq!(l, expected);
        // Moving the clip later never moves the label back.
        let later = label_clip(start + 0.5, duration, t_a).unwrap();
        prop_assert!(later.index() >= l.index());
    }

    #[test]
    fn sampled_triplets_respect_the_margin(n in 4usize..60, seed in any::<u64>(), scope in scope()) {
        let v = UnlabeledVideo { id: "v".into(), features: Array2::zeros((n, 1)), clip_stride: 1.0 };
        let t = sample_triplet(&v, scope, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(t.anchor.abs_diff(t.positive), 1);
        let d = t.anchor.abs_diff(t.negative);
        prop_assert!(d >= 3);
        prop_assert!(scope == NegativeScope::Global || d <= 5);
        prop_assert!([t.anchor, t.positive, t.negative].iter().all(|&i| (1..=n).contains(&i)));
    }

    #[test]
    fn info_nce_is_nonnegative_and_scale_free(
        (zx, zy, zn) in (1usize..4, 1usize..6, 2usize..6).prop_flat_map(|(k, m, d)| (block(k, d), block(k, d), block(m, d))),
        tau in 0.05..2.0f64,
        c in 0.01..100.0f64,
    ) {
        let l = info_nce_embeddings(&zx, &zy, &zn, tau).unwrap();
        prop_assert!(l.iter().all(|&v| v >= 0.0 && v.is_finite()));
        let scaled = info_nce_embeddings(&(&zx * c), &zy, &(&zn * c), tau).unwrap();
        for (a, b) in l.iter().zip(&scaled) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn temporal_loss_is_swap_symmetric(
        (z1, z2, zn) in (1usize..4, 2usize..6).prop_flat_map(|(k, d)| (block(k, d), block(k, d), block(k, d))),
        tau in 0.05..2.0f64,
    ) {
        let a = temporal_contrastive_embeddings(&z1, &z2, &zn, tau).unwrap();
        let b = temporal_contrastive_embeddings(&z2, &z1, &zn, tau).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn eval_clips_tile_and_order_labels(n in 2usize..30, frac in 0.0..1.0f64) {
        let t_a = frac * n as f64;
        let v = VideoRecord::new("v", Array2::zeros((n, 2)), 1.0, Some(t_a), Split::LabeledTest).unwrap();
        let clips = extract_eval_clips(&v, 0.25, 1.0).unwrap();
        prop_assert_eq!(clips.len(), tiling_count(n as f64, 0.25, 1.0));
        prop_assert_eq!(clips.len(), 4 * (n - 1) + 1);
        prop_assert!(clips.windows(2).all(|w| w[0].label.index() <= w[1].label.index()));
        prop_assert!(clips.last().unwrap().spec.end() <= n as f64 + 1e-9);
        let pairs = anticipation_pairs(&clips, 0.25, 1.5).unwrap();
        prop_assert_eq!(pairs.len(), clips.len().saturating_sub(6));
        for (i, (spec, label)) in pairs.iter().enumerate() {
            prop_assert_eq!(spec, &clips[i].spec);
            prop_assert_eq!(*label, clips[i + 6].label);
        }
    }
}
