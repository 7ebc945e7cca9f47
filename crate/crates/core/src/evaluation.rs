//! Downstream protocols: linear-probe classification, sliding-window
//! transition localization and anticipation, in frozen and fine-tuned
//! regimes, plus the ablation matrix.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    anticipation_pairs, extract_eval_clips, ClipSpec, IntentLabel, VideoRecord, DEFAULT_EVAL_STRIDE, DEFAULT_HORIZON,
    DEFAULT_WINDOW,
};
use crate::error::{Error, Result};
use crate::losses::LossMode;
use crate::nn::{Linear, ModelParams, OptimState, Tape, Tensor};
use crate::sampling::NegativeScope;
use crate::synthgen::Dataset;
use crate::train::{init_params, pretrain, PretrainConfig};

const CLASSES: usize = 3;
/// Floor on per-feature standard deviation used for probe standardization.
const STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Frozen,
    Finetuned,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Frozen => "frozen",
            Regime::Finetuned => "finetuned",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "frozen" => Some(Regime::Frozen),
            "finetuned" | "finetune" => Some(Regime::Finetuned),
            _ => None,
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub stride: f64,
    pub window: f64,
    pub horizon: f64,
    pub thresholds: Vec<f64>,
    pub probe_steps: usize,
    pub probe_lr: f64,
    pub encoder_lr: f64,
    /// Clips per fine-tuning step; the probe itself is fit full-batch.
    pub finetune_batch: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            stride: DEFAULT_EVAL_STRIDE,
            window: DEFAULT_WINDOW,
            horizon: DEFAULT_HORIZON,
            thresholds: vec![1.0, 0.25],
            probe_steps: 500,
            probe_lr: 0.05,
            encoder_lr: 0.005,
            finetune_batch: 256,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{what} must be positive, got {v}")))
            }
        };
        positive(self.stride, "eval stride")?;
        positive(self.window, "eval window")?;
        positive(self.probe_lr, "probe lr")?;
        positive(self.encoder_lr, "encoder lr")?;
        if !(self.horizon >= 0.0) {
            return Err(Error::InvalidConfig(format!("horizon must be nonnegative, got {}", self.horizon)));
        }
        if self.thresholds.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::InvalidConfig("thresholds must be nonnegative".into()));
        }
        if self.finetune_batch == 0 {
            return Err(Error::InvalidConfig("finetune batch must be positive".into()));
        }
        Ok(())
    }
}

/// Linear map `d_f -> 3` applied to standardized features
/// `(f - shift) * scale`. The standardization is fixed at fit time.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeParams {
    pub linear: Linear,
    pub shift: Array1<f64>,
    pub scale: Array1<f64>,
}

impl ProbeParams {
    /// All-zero weights and identity standardization.
    pub fn zeros(d_f: usize) -> Self {
        ProbeParams { linear: Linear::zeros(d_f, CLASSES), shift: Array1::zeros(d_f), scale: Array1::ones(d_f) }
    }

    pub fn is_finite(&self) -> bool {
        [&self.linear.weight, &self.linear.bias].iter().all(|t| t.iter().all(|v| v.is_finite()))
            && self.shift.iter().chain(&self.scale).all(|v| v.is_finite())
    }

    pub fn logits(&self, features: &Tensor) -> Tensor {
        ((features - &self.shift) * &self.scale).dot(&self.linear.weight) + &self.linear.bias
    }

    fn standardize_from(features: &Tensor) -> (Array1<f64>, Array1<f64>) {
        let shift = features.mean_axis(Axis(0)).expect("nonempty features");
        let scale = features.std_axis(Axis(0), 0.0).mapv(|s| 1.0 / s.max(STD_FLOOR));
        (shift, scale)
    }
}

/// Raw clip features with labels, concatenated over videos.
#[derive(Clone, Debug)]
pub struct ClipSet {
    pub specs: Vec<ClipSpec>,
    pub labels: Vec<IntentLabel>,
    pub features: Tensor,
    /// Index into the source video slice for every row.
    pub video: Vec<usize>,
}

impl ClipSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Every eval clip of every video, labeled by the transition rule.
pub fn clip_set(videos: &[VideoRecord], cfg: &EvalConfig) -> Result<ClipSet> {
    build_set(videos, cfg, None)
}

/// Current-clip features paired with the label `horizon` seconds later.
pub fn anticipation_set(videos: &[VideoRecord], cfg: &EvalConfig, horizon: f64) -> Result<ClipSet> {
    build_set(videos, cfg, Some(horizon))
}

fn build_set(videos: &[VideoRecord], cfg: &EvalConfig, horizon: Option<f64>) -> Result<ClipSet> {
    let d = videos.first().map_or(0, |v| v.features.ncols());
    let mut specs = Vec::new();
    let mut labels = Vec::new();
    let mut rows: Vec<f64> = Vec::new();
    let mut video = Vec::new();
    for (vi, v) in videos.iter().enumerate() {
        if v.features.ncols() != d {
            return Err(Error::ShapeMismatch(format!(
                "video {} has {} features, expected {d}",
                v.id,
                v.features.ncols()
            )));
        }
        let clips = extract_eval_clips(v, cfg.stride, cfg.window)?;
        let items: Vec<(ClipSpec, IntentLabel)> = match horizon {
            None => clips.into_iter().map(|c| (c.spec, c.label)).collect(),
            Some(h) => anticipation_pairs(&clips, cfg.stride, h)?,
        };
        for (spec, label) in items {
            rows.extend(v.window_features(spec.start, spec.duration)?);
            specs.push(spec);
            labels.push(label);
            video.push(vi);
        }
    }
    let features = Array2::from_shape_vec((labels.len(), d), rows).expect("row-major clip features");
    Ok(ClipSet { specs, labels, features, video })
}

/// Number of whole videos kept for a labeled fraction.
pub fn videos_for_fraction(total: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!("labeled fraction must be in (0, 1], got {fraction}")));
    }
    Ok(((total as f64 * fraction).round() as usize).clamp(1.min(total), total))
}

/// Seeded subset of whole videos, returned in original order.
pub fn subsample_videos<R: Rng + ?Sized>(total: usize, fraction: f64, rng: &mut R) -> Result<Vec<usize>> {
    let k = videos_for_fraction(total, fraction)?;
    let mut idx: Vec<usize> = (0..total).collect();
    idx.shuffle(rng);
    idx.truncate(k);
    idx.sort_unstable();
    Ok(idx)
}

/// Row indices resampled so every present class has the majority-class
/// count: each class keeps all its rows, then tops up by uniform draws with
/// replacement from its own rows. Classes appear in label order.
pub fn balanced_indices<R: Rng + ?Sized>(labels: &[IntentLabel], rng: &mut R) -> Vec<usize> {
    let mut by_class: [Vec<usize>; CLASSES] = Default::default();
    for (i, l) in labels.iter().enumerate() {
        by_class[l.index()].push(i);
    }
    let target = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = Vec::with_capacity(target * CLASSES);
    for rows in by_class.iter().filter(|r| !r.is_empty()) {
        out.extend(rows);
        out.extend((rows.len()..target).map(|_| rows[rng.random_range(0..rows.len())]));
    }
    out
}

/// A probe and, for [`Regime::Finetuned`], the updated encoder.
#[derive(Clone, Debug)]
pub struct FittedProbe {
    pub probe: ProbeParams,
    pub encoder: Option<ModelParams>,
}

impl FittedProbe {
    /// The encoder to evaluate with: the fine-tuned one if any.
    pub fn encoder<'a>(&'a self, original: &'a ModelParams) -> &'a ModelParams {
        self.encoder.as_ref().unwrap_or(original)
    }
}

/// Fits the classification probe on a labeled-fraction subset of whole
/// videos.
pub fn fit_probe<R: Rng + ?Sized>(
    encoder: &ModelParams,
    videos: &[VideoRecord],
    regime: Regime,
    labeled_fraction: f64,
    cfg: &EvalConfig,
    rng: &mut R,
) -> Result<FittedProbe> {
    let keep = subsample_videos(videos.len(), labeled_fraction, rng)?;
    let chosen: Vec<VideoRecord> = keep.iter().map(|&i| videos[i].clone()).collect();
    let set = clip_set(&chosen, cfg)?;
    require_all_classes(&set.labels)?;
    fit_on_set(encoder, &set, regime, cfg, rng)
}

fn require_all_classes(labels: &[IntentLabel]) -> Result<()> {
    for class in IntentLabel::ALL {
        if !labels.contains(&class) {
            return Err(Error::MissingClass(class.name()));
        }
    }
    Ok(())
}

/// Balanced softmax-probe training on a prepared clip set. Classes absent
/// from the set are simply never targeted.
pub fn fit_on_set<R: Rng + ?Sized>(
    encoder: &ModelParams,
    set: &ClipSet,
    regime: Regime,
    cfg: &EvalConfig,
    rng: &mut R,
) -> Result<FittedProbe> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::InvalidRecord("no labeled clips to fit a probe on".into()));
    }
    let rows = balanced_indices(&set.labels, rng);
    let x = set.features.select(Axis(0), &rows);
    let y: Vec<usize> = rows.iter().map(|&r| set.labels[r].index()).collect();
    let feats = encoder.encode_rows(&x)?;
    let (shift, scale) = ProbeParams::standardize_from(&feats);
    let mut probe = ProbeParams { linear: Linear::zeros(encoder.d_f(), CLASSES), shift, scale };
    let mut probe_opt = OptimState::sgd(cfg.probe_lr)?;
    match regime {
        Regime::Frozen => {
            let z = (&feats - &probe.shift) * &probe.scale;
            for _ in 0..cfg.probe_steps {
                let tape = Tape::new();
                let (w, b) = (tape.leaf(probe.linear.weight.clone()), tape.leaf(probe.linear.bias.clone()));
                let input = tape.leaf(z.clone());
                let logits = tape.add_row(tape.matmul(input, w), b);
                let loss = tape.mean(tape.softmax_cross_entropy(logits, &y));
                let g = tape.backward(loss)?;
                let grads = [g.get_or_zeros(w, tape.shape(w)), g.get_or_zeros(b, tape.shape(b))];
                probe_opt.apply(&mut [&mut probe.linear.weight, &mut probe.linear.bias], &grads)?;
            }
            Ok(FittedProbe { probe, encoder: None })
        }
        Regime::Finetuned => {
            let mut enc = encoder.clone();
            let mut enc_opt = OptimState::sgd(cfg.encoder_lr)?;
            let shift_row = (-&probe.shift).insert_axis(Axis(0));
            let scale_diag = Array2::from_diag(&probe.scale);
            let batch = cfg.finetune_batch.min(rows.len());
            for _ in 0..cfg.probe_steps {
                let pick: Vec<usize> = if batch == rows.len() {
                    (0..rows.len()).collect()
                } else {
                    (0..batch).map(|_| rng.random_range(0..rows.len())).collect()
                };
                let xb = x.select(Axis(0), &pick);
                let yb: Vec<usize> = pick.iter().map(|&i| y[i]).collect();
                let tape = Tape::new();
                let bound = enc.encoder.bind(&tape);
                let (w, b) = (tape.leaf(probe.linear.weight.clone()), tape.leaf(probe.linear.bias.clone()));
                let f = bound.forward(&tape, tape.leaf(xb));
                let z = tape.matmul(tape.add_row(f, tape.leaf(shift_row.clone())), tape.leaf(scale_diag.clone()));
                let logits = tape.add_row(tape.matmul(z, w), b);
                let loss = tape.mean(tape.softmax_cross_entropy(logits, &yb));
                let g = tape.backward(loss)?;
                let grads = [g.get_or_zeros(w, tape.shape(w)), g.get_or_zeros(b, tape.shape(b))];
                probe_opt.apply(&mut [&mut probe.linear.weight, &mut probe.linear.bias], &grads)?;
                enc_opt.apply(&mut enc.encoder.tensors_mut(), &bound.grads(&tape, &g))?;
            }
            Ok(FittedProbe { probe, encoder: Some(enc) })
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn softmax_rows(logits: &Tensor) -> Tensor {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

#[derive(Clone, Debug)]
pub struct Classification {
    pub probabilities: Tensor,
    pub predictions: Vec<IntentLabel>,
    pub accuracy: f64,
}

/// Fraction of argmax matches; the argmax is taken on logits, ties go to the
/// lowest class index.
pub fn accuracy_from_logits(logits: &Tensor, labels: &[IntentLabel]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = logits.rows().into_iter().zip(labels).filter(|(row, l)| argmax(row.view()) == l.index()).count();
    hits as f64 / labels.len() as f64
}

pub fn classify(probe: &ProbeParams, encoder: &ModelParams, clips: &ClipSet) -> Result<Classification> {
    let logits = probe.logits(&encoder.encode_rows(&clips.features)?);
    let predictions =
        logits.rows().into_iter().map(|r| IntentLabel::from_index(argmax(r)).expect("three logits")).collect();
    Ok(Classification {
        probabilities: softmax_rows(&logits),
        accuracy: accuracy_from_logits(&logits, &clips.labels),
        predictions,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Localization {
    pub t_pred: f64,
    pub t_a: f64,
    /// `(threshold, correct)` in the order requested.
    pub correct: Vec<(f64, bool)>,
}

/// Center of the highest-scoring clip (earliest on ties), judged against
/// `t_a` at each threshold by `|t_pred - t_a| <= theta`.
pub fn localize_from_scores(clips: &[ClipSpec], scores: &[f64], t_a: f64, thresholds: &[f64]) -> Result<Localization> {
    if clips.is_empty() || clips.len() != scores.len() {
        return Err(Error::ShapeMismatch(format!("{} clips vs {} scores", clips.len(), scores.len())));
    }
    let best = argmax(ndarray::ArrayView1::from(scores));
    let t_pred = clips[best].center();
    let correct = thresholds.iter().map(|&th| (th, (t_pred - t_a).abs() <= th + crate::datamodel::TIME_EPS)).collect();
    Ok(Localization { t_pred, t_a, correct })
}

pub fn localize(
    probe: &ProbeParams,
    encoder: &ModelParams,
    video: &VideoRecord,
    cfg: &EvalConfig,
) -> Result<Localization> {
    let t_a = video.transition.ok_or_else(|| Error::MissingAnnotation(video.id.clone()))?;
    let set = clip_set(std::slice::from_ref(video), cfg)?;
    let probs = softmax_rows(&probe.logits(&encoder.encode_rows(&set.features)?));
    let scores: Vec<f64> = probs.column(IntentLabel::Transitional.index()).to_vec();
    localize_from_scores(&set.specs, &scores, t_a, &cfg.thresholds)
}

/// Expected localization accuracy of a predictor that picks a clip uniformly
/// at random: the mean over videos of the fraction of clip centers within
/// `threshold` of `t_a`.
pub fn random_localization_baseline(videos: &[VideoRecord], threshold: f64, cfg: &EvalConfig) -> Result<f64> {
    if videos.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for v in videos {
        let t_a = v.transition.ok_or_else(|| Error::MissingAnnotation(v.id.clone()))?;
        let clips = extract_eval_clips(v, cfg.stride, cfg.window)?;
        let hits =
            clips.iter().filter(|c| (c.spec.center() - t_a).abs() <= threshold + crate::datamodel::TIME_EPS).count();
        total += hits as f64 / clips.len() as f64;
    }
    Ok(total / videos.len() as f64)
}

/// Fits an anticipation probe on `train` and reports accuracy on `test`.
#[allow(clippy::too_many_arguments)]
pub fn anticipate<R: Rng + ?Sized>(
    encoder: &ModelParams,
    train: &[VideoRecord],
    test: &[VideoRecord],
    horizon: f64,
    regime: Regime,
    labeled_fraction: f64,
    cfg: &EvalConfig,
    rng: &mut R,
) -> Result<f64> {
    let keep = subsample_videos(train.len(), labeled_fraction, rng)?;
    let chosen: Vec<VideoRecord> = keep.iter().map(|&i| train[i].clone()).collect();
    let train_set = anticipation_set(&chosen, cfg, horizon)?;
    let test_set = anticipation_set(test, cfg, horizon)?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::NoValidPairs);
    }
    let fitted = fit_on_set(encoder, &train_set, regime, cfg, rng)?;
    Ok(classify(&fitted.probe, fitted.encoder(encoder), &test_set)?.accuracy)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub representation: String,
    pub cls_accuracy: f64,
    /// Threshold in seconds, formatted with `{}`, to accuracy.
    pub loc_accuracy_at: BTreeMap<String, f64>,
    pub ant_accuracy: f64,
    pub regime: Regime,
    pub labeled_fraction: f64,
    pub seed: u64,
    pub config_digest: String,
}

impl EvalMetrics {
    pub fn loc_at(&self, threshold: f64) -> Option<f64> {
        self.loc_accuracy_at.get(&threshold_key(threshold)).copied()
    }

    pub fn fractions_valid(&self) -> bool {
        let ok = |v: f64| (0.0..=1.0).contains(&v);
        ok(self.cls_accuracy) && ok(self.ant_accuracy) && self.loc_accuracy_at.values().all(|&v| ok(v))
    }
}

pub fn threshold_key(threshold: f64) -> String {
    format!("{threshold:?}")
}

/// What a metrics row describes besides its numbers.
#[derive(Clone, Debug)]
pub struct Setting<'a> {
    pub representation: &'a str,
    pub regime: Regime,
    pub labeled_fraction: f64,
    pub seed: u64,
    pub config_digest: &'a str,
}

/// Classification, localization and anticipation for one encoder in one
/// setting. The classification probe also drives localization.
pub fn evaluate(
    encoder: &ModelParams,
    train: &[VideoRecord],
    test: &[VideoRecord],
    setting: &Setting<'_>,
    cfg: &EvalConfig,
) -> Result<EvalMetrics> {
    let mut rng = ChaCha8Rng::seed_from_u64(setting.seed);
    rng.set_stream(2);
    let fitted = fit_probe(encoder, train, setting.regime, setting.labeled_fraction, cfg, &mut rng)?;
    let enc = fitted.encoder(encoder);
    let test_set = clip_set(test, cfg)?;
    let cls = classify(&fitted.probe, enc, &test_set)?;

    let mut hits = vec![0usize; cfg.thresholds.len()];
    for v in test {
        let loc = localize(&fitted.probe, enc, v, cfg)?;
        for (h, (_, ok)) in hits.iter_mut().zip(&loc.correct) {
            *h += usize::from(*ok);
        }
    }
    let loc_accuracy_at = cfg
        .thresholds
        .iter()
        .zip(&hits)
        .map(|(&th, &h)| (threshold_key(th), h as f64 / test.len().max(1) as f64))
        .collect();

    let ant_accuracy =
        anticipate(encoder, train, test, cfg.horizon, setting.regime, setting.labeled_fraction, cfg, &mut rng)?;
    Ok(EvalMetrics {
        representation: setting.representation.to_string(),
        cls_accuracy: cls.accuracy,
        loc_accuracy_at,
        ant_accuracy,
        regime: setting.regime,
        labeled_fraction: setting.labeled_fraction,
        seed: setting.seed,
        config_digest: setting.config_digest.to_string(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationCell {
    pub scope: NegativeScope,
    pub mode: LossMode,
}

/// The full {Global, Local} x {four loss modes} grid.
pub fn full_grid() -> Vec<AblationCell> {
    NegativeScope::ALL
        .iter()
        .flat_map(|&scope| LossMode::ALL.iter().map(move |&mode| AblationCell { scope, mode }))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub scope: NegativeScope,
    pub loss_mode: LossMode,
    pub seed: u64,
    pub metrics: Option<EvalMetrics>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSpread {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanSpread {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(MeanSpread { mean, std: var.sqrt() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub scope: NegativeScope,
    pub loss_mode: LossMode,
    pub runs: usize,
    pub failed: usize,
    pub cls: Option<MeanSpread>,
    /// Keyed like [`EvalMetrics::loc_accuracy_at`].
    pub loc: BTreeMap<String, MeanSpread>,
    pub ant: Option<MeanSpread>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub summary: Vec<CellSummary>,
}

/// Pretrains one encoder per cell and seed on the pretrain split, then
/// evaluates it frozen on all labeled data. Jobs run in parallel; each is
/// sequential and seeded, so the table does not depend on scheduling. A
/// failing job is recorded in its row and does not stop the others.
pub fn run_ablation_matrix(
    dataset: &Dataset,
    grid: &[AblationCell],
    seeds: &[u64],
    base: &PretrainConfig,
    cfg: &EvalConfig,
    config_digest: &str,
) -> Result<AblationTable> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig("ablation grid and seed list must be nonempty".into()));
    }
    let pretrain_videos = dataset.pretrain_view();
    let jobs: Vec<(AblationCell, u64)> = grid.iter().flat_map(|&c| seeds.iter().map(move |&s| (c, s))).collect();
    let rows: Vec<AblationRow> = jobs
        .par_iter()
        .map(|&(cell, seed)| {
            let run = || -> Result<EvalMetrics> {
                let pcfg = PretrainConfig { scope: cell.scope, mode: cell.mode, ..base.clone() };
                let out = pretrain(&pretrain_videos, &pcfg, seed)?;
                let name = format!("{}/{}", cell.scope.name(), cell.mode.name());
                let setting = Setting {
                    representation: &name,
                    regime: Regime::Frozen,
                    labeled_fraction: 1.0,
                    seed,
                    config_digest,
                };
                evaluate(&out.params, &dataset.labeled_train, &dataset.labeled_test, &setting, cfg)
            };
            match run() {
                Ok(m) => AblationRow { scope: cell.scope, loss_mode: cell.mode, seed, metrics: Some(m), error: None },
                Err(e) => {
                    log::warn!("ablation cell {}/{} seed {seed} failed: {e}", cell.scope.name(), cell.mode.name());
                    AblationRow {
                        scope: cell.scope,
                        loss_mode: cell.mode,
                        seed,
                        metrics: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    let summary = grid.iter().map(|&cell| summarize(cell, &rows)).collect();
    Ok(AblationTable { rows, summary })
}

fn summarize(cell: AblationCell, rows: &[AblationRow]) -> CellSummary {
    let mine: Vec<&AblationRow> = rows.iter().filter(|r| r.scope == cell.scope && r.loss_mode == cell.mode).collect();
    let ok: Vec<&EvalMetrics> = mine.iter().filter_map(|r| r.metrics.as_ref()).collect();
    let pick = |f: &dyn Fn(&EvalMetrics) -> f64| MeanSpread::of(&ok.iter().map(|m| f(m)).collect::<Vec<_>>());
    let mut loc = BTreeMap::new();
    if let Some(first) = ok.first() {
        for key in first.loc_accuracy_at.keys() {
            let vals: Vec<f64> = ok.iter().filter_map(|m| m.loc_accuracy_at.get(key).copied()).collect();
            if let Some(ms) = MeanSpread::of(&vals) {
                loc.insert(key.clone(), ms);
            }
        }
    }
    CellSummary {
        scope: cell.scope,
        loss_mode: cell.mode,
        runs: mine.len(),
        failed: mine.len() - ok.len(),
        cls: pick(&|m| m.cls_accuracy),
        loc,
        ant: pick(&|m| m.ant_accuracy),
    }
}

/// Frozen-probe classification for a pretrained and a scratch encoder
/// sharing a seed. Returns `(pretrained, scratch)`.
pub fn pretrained_vs_scratch(
    dataset: &Dataset,
    pcfg: &PretrainConfig,
    cfg: &EvalConfig,
    seed: u64,
    config_digest: &str,
) -> Result<(EvalMetrics, EvalMetrics)> {
    let trained = pretrain(&dataset.pretrain_view(), pcfg, seed)?.params;
    let scratch = init_params(pcfg, seed)?;
    let run = |enc: &ModelParams, name: &str| {
        let setting =
            Setting { representation: name, regime: Regime::Frozen, labeled_fraction: 1.0, seed, config_digest };
        evaluate(enc, &dataset.labeled_train, &dataset.labeled_test, &setting, cfg)
    };
    Ok((run(&trained, "pretrained")?, run(&scratch, "scratch")?))
}
