//! Triplet sampling: an anchor, one immediate neighbour as positive, and a
//! negative outside the margin zone `{t-2, .., t+2}`.

use std::fmt;

use log::warn;
use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::ClipSequence;
use crate::error::{Error, Result};

/// Smallest anchor distance a negative may have.
pub const MIN_NEGATIVE_DISTANCE: usize = 3;
/// Largest anchor distance a negative may have under [`NegativeScope::Local`].
pub const LOCAL_MAX_DISTANCE: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeScope {
    Global,
    Local,
}

impl NegativeScope {
    pub const ALL: [NegativeScope; 2] = [NegativeScope::Global, NegativeScope::Local];

    pub fn name(self) -> &'static str {
        match self {
            NegativeScope::Global => "global",
            NegativeScope::Local => "local",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "global" => Some(NegativeScope::Global),
            "local" => Some(NegativeScope::Local),
            _ => None,
        }
    }

    /// Whether a clip `distance` steps from the anchor may serve as negative.
    pub fn admits(self, distance: usize) -> bool {
        match self {
            NegativeScope::Global => distance >= MIN_NEGATIVE_DISTANCE,
            NegativeScope::Local => (MIN_NEGATIVE_DISTANCE..=LOCAL_MAX_DISTANCE).contains(&distance),
        }
    }
}

impl fmt::Display for NegativeScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Clip indices are 1-based. The positive pair is `(anchor, positive)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub video_id: String,
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

pub fn positive_candidates(t: usize, n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(2);
    if t > 1 {
        out.push(t - 1);
    }
    if t < n {
        out.push(t + 1);
    }
    out
}

pub fn negative_candidates(t: usize, n: usize, scope: NegativeScope) -> Vec<usize> {
    let (lo, hi) = match scope {
        NegativeScope::Global => (1, n),
        NegativeScope::Local => (t.saturating_sub(LOCAL_MAX_DISTANCE).max(1), (t + LOCAL_MAX_DISTANCE).min(n)),
    };
    let left = lo..=t.saturating_sub(MIN_NEGATIVE_DISTANCE);
    let right = (t + MIN_NEGATIVE_DISTANCE)..=hi;
    left.filter(|&i| i >= 1).chain(right).collect()
}

/// Anchors whose positive and negative candidate sets are both nonempty.
pub fn admissible_anchors(n: usize, scope: NegativeScope) -> Vec<usize> {
    (1..=n).filter(|&t| !positive_candidates(t, n).is_empty() && !negative_candidates(t, n, scope).is_empty()).collect()
}

pub fn sample_triplet<V, R>(video: &V, scope: NegativeScope, rng: &mut R) -> Result<Triplet>
where
    V: ClipSequence + ?Sized,
    R: Rng + ?Sized,
{
    let n = video.num_clips();
    let anchors = admissible_anchors(n, scope);
    let &anchor = anchors.choose(rng).ok_or_else(|| Error::VideoTooShort {
        id: video.id().to_string(),
        reason: format!("{n} clips admit no anchor with a negative at distance >= {MIN_NEGATIVE_DISTANCE}"),
    })?;
    let positive = *positive_candidates(anchor, n).choose(rng).expect("admissible anchor has a positive");
    let negative = *negative_candidates(anchor, n, scope).choose(rng).expect("admissible anchor has a negative");
    Ok(Triplet { video_id: video.id().to_string(), anchor, positive, negative })
}

/// `K` triplets and their raw features, one triplet per video.
///
/// Row `i` of `anchors`, `positives` and `negatives` belongs to `triplets[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub triplets: Vec<Triplet>,
    pub anchors: Array2<f64>,
    pub positives: Array2<f64>,
    pub negatives: Array2<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.anchors.ncols()
    }

    /// Raw features stacked as `[anchors; positives; negatives]`.
    pub fn stacked(&self) -> Array2<f64> {
        ndarray::concatenate(ndarray::Axis(0), &[self.anchors.view(), self.positives.view(), self.negatives.view()])
            .expect("batch blocks share a width")
    }

    /// The batch with anchor and positive swapped in every triplet.
    pub fn swapped_positives(&self) -> Batch {
        Batch {
            triplets: self
                .triplets
                .iter()
                .map(|t| Triplet {
                    video_id: t.video_id.clone(),
                    anchor: t.positive,
                    positive: t.anchor,
                    negative: t.negative,
                })
                .collect(),
            anchors: self.positives.clone(),
            positives: self.anchors.clone(),
            negatives: self.negatives.clone(),
        }
    }

    /// Builds a batch from explicit triplets, gathering features by index.
    pub fn from_triplets<V: ClipSequence>(videos: &[V], triplets: Vec<Triplet>) -> Result<Batch> {
        if videos.len() != triplets.len() || videos.is_empty() {
            return Err(Error::ShapeMismatch(format!("{} videos for {} triplets", videos.len(), triplets.len())));
        }
        let d = videos[0].feature_dim();
        let k = videos.len();
        let mut anchors = Array2::zeros((k, d));
        let mut positives = Array2::zeros((k, d));
        let mut negatives = Array2::zeros((k, d));
        for (i, (v, t)) in videos.iter().zip(&triplets).enumerate() {
            if v.feature_dim() != d {
                return Err(Error::ShapeMismatch(format!(
                    "video {} has feature dim {}, expected {d}",
                    v.id(),
                    v.feature_dim()
                )));
            }
            let n = v.num_clips();
            for idx in [t.anchor, t.positive, t.negative] {
                if idx == 0 || idx > n {
                    return Err(Error::ShapeMismatch(format!("clip index {idx} outside [1, {n}] in video {}", v.id())));
                }
            }
            anchors.row_mut(i).assign(&v.clip(t.anchor));
            positives.row_mut(i).assign(&v.clip(t.positive));
            negatives.row_mut(i).assign(&v.clip(t.negative));
        }
        Ok(Batch { triplets, anchors, positives, negatives })
    }
}

/// Samples one triplet per video, in input order, from a single stream.
pub fn assemble_batch<V, R>(videos: &[V], scope: NegativeScope, rng: &mut R) -> Result<Batch>
where
    V: ClipSequence,
    R: Rng + ?Sized,
{
    let triplets = videos.iter().map(|v| sample_triplet(v, scope, rng)).collect::<Result<Vec<_>>>()?;
    Batch::from_triplets(videos, triplets)
}

/// Indices of videos that admit a triplet. Logs one warning with the count
/// of skipped videos.
pub fn usable_videos<V: ClipSequence>(videos: &[V], scope: NegativeScope) -> Vec<usize> {
    let usable: Vec<usize> = videos
        .iter()
        .enumerate()
        .filter(|(_, v)| !admissible_anchors(v.num_clips(), scope).is_empty())
        .map(|(i, _)| i)
        .collect();
    let skipped = videos.len() - usable.len();
    if skipped > 0 {
        warn!("skipping {skipped} videos too short for {scope} triplets");
    }
    usable
}
