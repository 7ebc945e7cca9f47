use intentlab::datamodel::ClipSequence;
use intentlab::datamodel::{Split, VideoRecord};
use intentlab::error::Error;
use intentlab::sampling::*;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn video(id: &str, n: usize) -> VideoRecord {
    let feats = Array2::from_shape_fn((n, 3), |(i, j)| (10 * i + j) as f64);
    VideoRecord::new(id, feats, 1.0, None, Split::PretrainUnlabeled).unwrap()
}

#[test]
fn candidate_examples() {
    assert_eq!(positive_candidates(5, 12), vec![4, 6]);
    assert_eq!(positive_candidates(1, 12), vec![2]);
    assert_eq!(positive_candidates(12, 12), vec![11]);
    assert_eq!(negative_candidates(5, 12, NegativeScope::Global), vec![1, 2, 8, 9, 10, 11, 12]);
    assert_eq!(negative_candidates(5, 12, NegativeScope::Local), vec![1, 2, 8, 9, 10]);
    assert!(negative_candidates(2, 4, NegativeScope::Global).is_empty());
}

#[test]
fn four_clip_video_forces_triplets() {
    let v = video("v", 4);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..200 {
        let t = sample_triplet(&v, NegativeScope::Global, &mut rng).unwrap();
        match (t.anchor, t.negative) {
            (1, 4) => assert_eq!(t.positive, 2),
            (4, 1) => assert_eq!(t.positive, 3),
            other => panic!("inadmissible anchor/negative {other:?}"),
        }
    }
}

#[test]
fn three_clip_video_is_too_short() {
    let v = video("short", 3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let err = sample_triplet(&v, NegativeScope::Global, &mut rng).unwrap_err();
    assert!(matches!(err, Error::VideoTooShort { ref id, .. } if id == "short"));
}

#[test]
fn batch_gathers_rows() {
    let videos = vec![video("a", 8), video("b", 10), video("c", 12)];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batch = assemble_batch(&videos, NegativeScope::Global, &mut rng).unwrap();
    assert_eq!(batch.len(), 3);
    let ids: Vec<_> = batch.triplets.iter().map(|t| t.video_id.as_str()).collect();
    assert_eq!(ids, ["a", "b", "c"]);
    for (i, t) in batch.triplets.iter().enumerate() {
        assert_eq!(batch.anchors.row(i), videos[i].clip(t.anchor));
        assert_eq!(batch.positives.row(i), videos[i].clip(t.positive));
        assert_eq!(batch.negatives.row(i), videos[i].clip(t.negative));
    }
    assert_eq!(batch.stacked().nrows(), 9);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let again = assemble_batch(&videos, NegativeScope::Global, &mut rng).unwrap();
    assert_eq!(batch, again);
}

#[test]
fn single_video_batch() {
    let videos = vec![video("solo", 6)];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch = assemble_batch(&videos, NegativeScope::Local, &mut rng).unwrap();
    assert_eq!(batch.len(), 1);
    assert_eq!(batch.stacked().nrows(), 3);
}

#[test]
fn batch_reports_offending_video() {
    let videos = vec![video("ok", 8), video("tiny", 3)];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let err = assemble_batch(&videos, NegativeScope::Global, &mut rng).unwrap_err();
    assert!(matches!(err, Error::VideoTooShort { ref id, .. } if id == "tiny"));
    assert_eq!(usable_videos(&videos, NegativeScope::Global), vec![0]);
}
