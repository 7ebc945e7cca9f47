//! Videos, clips and the clip labeling rule.
//!
//! A video is a sequence of per-clip raw feature rows. Row `t` (1-based)
//! covers the time span `[(t - 1) * clip_stride, t * clip_stride)`, so a
//! video with `n` rows ends at `n * clip_stride` seconds.
//!
//! Evaluation clips are windows on a finer grid (0.25 s by default). Their
//! raw feature is the overlap-weighted mean of the rows the window covers,
//! see [`VideoRecord::window_features`].

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack used when comparing times that come out of stride arithmetic.
pub const TIME_EPS: f64 = 1e-9;

pub const DEFAULT_EVAL_STRIDE: f64 = 0.25;
pub const DEFAULT_WINDOW: f64 = 1.0;
pub const DEFAULT_HORIZON: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum IntentLabel {
    Intentional = 0,
    Transitional = 1,
    Unintentional = 2,
}

impl IntentLabel {
    pub const ALL: [IntentLabel; 3] = [IntentLabel::Intentional, IntentLabel::Transitional, IntentLabel::Unintentional];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            IntentLabel::Intentional => "intentional",
            IntentLabel::Transitional => "transitional",
            IntentLabel::Unintentional => "unintentional",
        }
    }
}

impl fmt::Display for IntentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Labels the clip `[start, start + duration)` against the transition `t_a`.
///
/// A clip ending exactly at `t_a` is intentional and a clip starting exactly
/// at `t_a` is unintentional, so the three regions partition `start >= 0`.
pub fn label_clip(start: f64, duration: f64, t_a: f64) -> Result<IntentLabel> {
    if !(duration > 0.0) {
        return Err(Error::NonPositiveDuration(duration));
    }
    let end = start + duration;
    Ok(if end <= t_a {
        IntentLabel::Intentional
    } else if start >= t_a {
        IntentLabel::Unintentional
    } else {
        IntentLabel::Transitional
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    PretrainUnlabeled,
    LabeledTrain,
    LabeledTest,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::PretrainUnlabeled, Split::LabeledTrain, Split::LabeledTest];

    pub fn file_stem(self) -> &'static str {
        match self {
            Split::PretrainUnlabeled => "pretrain",
            Split::LabeledTrain => "labeled_train",
            Split::LabeledTest => "labeled_test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub video_id: String,
    /// 1-based position of the clip on its grid.
    pub index: usize,
    pub start: f64,
    pub duration: f64,
}

impl ClipSpec {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }

    pub fn center(&self) -> f64 {
        self.start + 0.5 * self.duration
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledClip {
    pub spec: ClipSpec,
    pub label: IntentLabel,
}

/// Read access to a sequence of clip feature rows.
///
/// Implemented by both [`VideoRecord`] and the annotation-free
/// [`UnlabeledVideo`]; sampling only needs this much.
pub trait ClipSequence {
    fn id(&self) -> &str;
    fn features(&self) -> &Array2<f64>;

    fn num_clips(&self) -> usize {
        self.features().nrows()
    }

    fn feature_dim(&self) -> usize {
        self.features().ncols()
    }

    /// Raw feature of clip `t` (1-based).
    fn clip(&self, t: usize) -> ArrayView1<'_, f64> {
        self.features().row(t - 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub features: Array2<f64>,
    pub clip_stride: f64,
    pub transition: Option<f64>,
    pub split: Split,
}

/// A video as the pretraining path sees it: no transition field at all.
#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledVideo {
    pub id: String,
    pub features: Array2<f64>,
    pub clip_stride: f64,
}

impl<T: ClipSequence + ?Sized> ClipSequence for &T {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn features(&self) -> &Array2<f64> {
        (**self).features()
    }
}

impl ClipSequence for VideoRecord {
    fn id(&self) -> &str {
        &self.id
    }
    fn features(&self) -> &Array2<f64> {
        &self.features
    }
}

impl ClipSequence for UnlabeledVideo {
    fn id(&self) -> &str {
        &self.id
    }
    fn features(&self) -> &Array2<f64> {
        &self.features
    }
}

impl VideoRecord {
    pub fn new(
        id: impl Into<String>,
        features: Array2<f64>,
        clip_stride: f64,
        transition: Option<f64>,
        split: Split,
    ) -> Result<Self> {
        let rec = VideoRecord { id: id.into(), features, clip_stride, transition, split };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.nrows() == 0 || self.features.ncols() == 0 {
            return Err(Error::InvalidRecord(format!("video {} has no features", self.id)));
        }
        if !(self.clip_stride > 0.0) || !self.clip_stride.is_finite() {
            return Err(Error::InvalidRecord(format!("video {} has clip_stride {}", self.id, self.clip_stride)));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidRecord(format!("video {} has non-finite features", self.id)));
        }
        if let Some(t_a) = self.transition {
            if !(0.0..=self.end_time()).contains(&t_a) {
                return Err(Error::InvalidRecord(format!(
                    "video {} transition {} outside [0, {}]",
                    self.id,
                    t_a,
                    self.end_time()
                )));
            }
        }
        Ok(())
    }

    pub fn end_time(&self) -> f64 {
        self.features.nrows() as f64 * self.clip_stride
    }

    pub fn strip_annotation(self) -> UnlabeledVideo {
        UnlabeledVideo { id: self.id, features: self.features, clip_stride: self.clip_stride }
    }

    pub fn to_unlabeled(&self) -> UnlabeledVideo {
        self.clone().strip_annotation()
    }

    /// Raw feature of the window `[start, start + window)`.
    ///
    /// Each row contributes in proportion to its overlap with the window.
    pub fn window_features(&self, start: f64, window: f64) -> Result<Array1<f64>> {
        window_features(&self.features, self.clip_stride, start, window).ok_or_else(|| Error::VideoTooShort {
            id: self.id.clone(),
            reason: format!("window [{start}, {}) exceeds end {}", start + window, self.end_time()),
        })
    }

    pub fn to_json_line(&self) -> String {
        let line = VideoLine {
            id: self.id.clone(),
            clip_stride: self.clip_stride,
            transition: self.transition,
            split: self.split,
            features: self.features.rows().into_iter().map(|r| r.to_vec()).collect(),
        };
        serde_json::to_string(&line).expect("video record serializes")
    }

    pub fn from_json_line(s: &str) -> std::result::Result<Result<Self>, serde_json::Error> {
        let line: VideoLine = serde_json::from_str(s)?;
        Ok(line.into_record())
    }
}

pub(crate) fn window_features(rows: &Array2<f64>, clip_stride: f64, start: f64, window: f64) -> Option<Array1<f64>> {
    let end_time = rows.nrows() as f64 * clip_stride;
    if start < -TIME_EPS || start + window > end_time + TIME_EPS || !(window > 0.0) {
        return None;
    }
    let end = (start + window).min(end_time);
    let first = ((start / clip_stride + TIME_EPS).floor().max(0.0)) as usize;
    let mut out = Array1::zeros(rows.ncols());
    let mut r = first;
    while r < rows.nrows() {
        let lo = r as f64 * clip_stride;
        if lo >= end - TIME_EPS {
            break;
        }
        let hi = lo + clip_stride;
        let overlap = hi.min(end) - lo.max(start);
        if overlap > 0.0 {
            out.scaled_add(overlap / window, &rows.row(r));
        }
        r += 1;
    }
    Some(out)
}

#[derive(Serialize, Deserialize)]
struct VideoLine {
    id: String,
    clip_stride: f64,
    transition: Option<f64>,
    split: Split,
    features: Vec<Vec<f64>>,
}

impl VideoLine {
    fn into_record(self) -> Result<VideoRecord> {
        let n = self.features.len();
        let d = self.features.first().map_or(0, Vec::len);
        if self.features.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidRecord(format!("video {} has ragged feature rows", self.id)));
        }
        let flat: Vec<f64> = self.features.into_iter().flatten().collect();
        let features = Array2::from_shape_vec((n, d), flat).map_err(|e| Error::InvalidRecord(e.to_string()))?;
        VideoRecord::new(self.id, features, self.clip_stride, self.transition, self.split)
    }
}

pub fn write_jsonl(path: &Path, videos: &[VideoRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for v in videos {
        writeln!(w, "{}", v.to_json_line()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<VideoRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = VideoRecord::from_json_line(&line).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })??;
        out.push(rec);
    }
    Ok(out)
}

/// Loads the pretraining split. The transition field never leaves this
/// function.
pub fn read_pretrain_jsonl(path: &Path) -> Result<Vec<UnlabeledVideo>> {
    Ok(read_jsonl(path)?.into_iter().map(VideoRecord::strip_annotation).collect())
}

/// Number of windows of length `window` at `stride` that fit in `end`.
pub fn tiling_count(end: f64, stride: f64, window: f64) -> usize {
    if end + TIME_EPS < window {
        return 0;
    }
    ((end - window) / stride + TIME_EPS).floor() as usize + 1
}

/// Tiles `[0, end - window]` with windows at `stride` and labels each one.
pub fn extract_eval_clips(video: &VideoRecord, stride: f64, window: f64) -> Result<Vec<LabeledClip>> {
    let t_a = video.transition.ok_or_else(|| Error::MissingAnnotation(video.id.clone()))?;
    if !(stride > 0.0) {
        return Err(Error::InvalidConfig(format!("eval stride must be positive, got {stride}")));
    }
    let count = tiling_count(video.end_time(), stride, window);
    if count == 0 {
        return Err(Error::VideoTooShort {
            id: video.id.clone(),
            reason: format!("{} s is shorter than one {window} s window", video.end_time()),
        });
    }
    (0..count)
        .map(|k| {
            let start = k as f64 * stride;
            let label = label_clip(start, window, t_a)?;
            Ok(LabeledClip {
                spec: ClipSpec { video_id: video.id.clone(), index: k + 1, start, duration: window },
                label,
            })
        })
        .collect()
}

/// Pairs each clip with the label of the clip starting `horizon` later in
/// the same video. Clips without such a successor are dropped.
pub fn anticipation_pairs(clips: &[LabeledClip], stride: f64, horizon: f64) -> Result<Vec<(ClipSpec, IntentLabel)>> {
    let ratio = horizon / stride;
    let steps = ratio.round();
    if !(stride > 0.0) || horizon < 0.0 || (ratio - steps).abs() > 1e-6 {
        return Err(Error::HorizonNotMultipleOfStride { horizon, stride });
    }
    let steps = steps as usize;
    let mut out = Vec::new();
    for (i, clip) in clips.iter().enumerate() {
        let Some(future) = clips.get(i + steps) else {
            continue;
        };
        if future.spec.video_id == clip.spec.video_id && (future.spec.start - clip.spec.start - horizon).abs() <= 1e-6 {
            out.push((clip.spec.clone(), future.label));
        }
    }
    Ok(out)
}
