//! Oracle checks shared by the per-module tests and the acceptance target.
//! Each check returns a one-line detail on success and the first violation
//! on failure.
#![allow(dead_code)]
// Negated comparisons make NaN fail a check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::time::{Duration, Instant};

use intentlab::datamodel::{label_clip, IntentLabel, UnlabeledVideo};
use intentlab::evaluation::{
    clip_set, fit_on_set, localize, localize_from_scores, random_localization_baseline, EvalConfig, Regime,
};
use intentlab::losses::{
    info_nce_embeddings, loss_and_grads, pair_order_loss, permutation_loss, temporal_contrastive,
    temporal_contrastive_embeddings, total_loss, LossMode,
};
use intentlab::nn::{ModelDims, ModelParams};
use intentlab::sampling::{
    admissible_anchors, assemble_batch, negative_candidates, positive_candidates, sample_triplet, Batch, NegativeScope,
};
use intentlab::synthgen::{generate_dataset, GenConfig, SplitCounts};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub type Check = Result<String, String>;

pub const GRAD_TRIALS: usize = 20;
pub const GRAD_TOL: f64 = 1e-4;
pub const CLOSED_FORM_TOL: f64 = 1e-9;
pub const INVARIANCE_TOL: f64 = 1e-9;

fn small_dims<R: Rng>(rng: &mut R) -> ModelDims {
    let mut w = || rng.random_range(2..=8);
    ModelDims {
        d_in: w(),
        encoder_hidden: vec![w()],
        d_f: w(),
        proj_hidden: w(),
        d_z: w(),
        order_hidden: w(),
        perm_hidden: w(),
    }
}

/// `k` videos of 4..=9 clips with uniform features in `[-1, 1)`.
pub fn random_videos<R: Rng>(k: usize, d: usize, rng: &mut R) -> Vec<UnlabeledVideo> {
    (0..k)
        .map(|i| {
            let n = rng.random_range(4..=9);
            UnlabeledVideo {
                id: format!("v{i}"),
                features: Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0)),
                clip_stride: 1.0,
            }
        })
        .collect()
}

fn random_scope<R: Rng>(rng: &mut R) -> NegativeScope {
    NegativeScope::ALL[rng.random_range(0..NegativeScope::ALL.len())]
}

/// Central finite differences against the tape gradients for every loss
/// mode, over `GRAD_TRIALS` random batches per mode with `K <= 3` and every
/// width `<= 8`. Relative error per entry is `|a - n| / max(|a| + |n|, 1e-6)`.
pub fn gradient_suite() -> Check {
    let start = Instant::now();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut entries = 0usize;
    for (mi, &mode) in LossMode::ALL.iter().enumerate() {
        for trial in 0..GRAD_TRIALS {
            let mut rng = ChaCha8Rng::seed_from_u64((mi * 1000 + trial) as u64);
            let dims = small_dims(&mut rng);
            let k = rng.random_range(1..=3);
            let tau = rng.random_range(0.2..1.0);
            let params = ModelParams::init(&dims, tau, &mut rng).map_err(|e| e.to_string())?;
            let videos = random_videos(k, dims.d_in, &mut rng);
            let scope = random_scope(&mut rng);
            let batch = assemble_batch(&videos, scope, &mut rng).map_err(|e| e.to_string())?;
            let stream: u64 = rng.random();
            let loss_at = |p: &ModelParams| -> f64 {
                total_loss(&batch, p, mode, &mut ChaCha8Rng::seed_from_u64(stream)).unwrap().l_total
            };
            let (_, grads) = loss_and_grads(&batch, &params, mode, &mut ChaCha8Rng::seed_from_u64(stream))
                .map_err(|e| e.to_string())?;
            let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
            if grads.len() != names.len() {
                return Err(format!("{} gradients for {} tensors", grads.len(), names.len()));
            }
            for (ti, name) in names.iter().enumerate() {
                for idx in 0..grads[ti].len() {
                    let mut plus = params.clone();
                    plus.tensors_mut()[ti].as_slice_mut().expect("contiguous")[idx] += h;
                    let mut minus = params.clone();
                    minus.tensors_mut()[ti].as_slice_mut().expect("contiguous")[idx] -= h;
                    let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                    let analytic = grads[ti].as_slice().expect("contiguous")[idx];
                    let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6);
                    entries += 1;
                    worst = worst.max(rel);
                    if !(rel < GRAD_TOL) {
                        return Err(format!(
                            "{mode} trial {trial} {name}[{idx}]: analytic {analytic:e} vs numeric {numeric:e} (rel {rel:e})"
                        ));
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed();
    if elapsed >= Duration::from_secs(30) {
        return Err(format!("suite took {elapsed:.1?}, limit 30 s"));
    }
    Ok(format!(
        "{} modes x {GRAD_TRIALS} batches, {entries} entries, max rel err {worst:.2e}, {elapsed:.1?}",
        LossMode::ALL.len()
    ))
}

fn close(name: &str, got: f64, want: f64) -> Result<f64, String> {
    let err = (got - want).abs();
    if err < CLOSED_FORM_TOL {
        Ok(err)
    } else {
        Err(format!("{name}: {got} vs {want} (diff {err:e})"))
    }
}

/// Uniform-similarity InfoNCE, uninformative order head and uniform
/// permutation logits against their closed forms.
pub fn closed_forms() -> Check {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for negatives in 1..=8 {
        let v: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z = Array2::from_shape_vec((1, 5), v).unwrap();
        // Positive multiples of one vector: every cosine is 1.
        let zn = Array2::from_shape_fn((negatives, 5), |(i, j)| z[[0, j]] * (1.0 + i as f64));
        let tau = rng.random_range(0.05..2.0);
        let l = info_nce_embeddings(&z, &(&z * 3.0), &zn, tau).map_err(|e| e.to_string())?[0];
        worst = worst.max(close("InfoNCE", l, ((negatives + 1) as f64).ln())?);
    }
    for trial in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + trial);
        let dims = small_dims(&mut rng);
        let mut params = ModelParams::init(&dims, 0.5, &mut rng).unwrap();
        let k = rng.random_range(1..=3);
        let videos = random_videos(k, dims.d_in, &mut rng);
        let batch = assemble_batch(&videos, NegativeScope::Global, &mut rng).unwrap();
        for layer in &mut params.order_head.layers {
            layer.weight.fill(0.0);
            layer.bias.fill(0.0);
        }
        let bce = pair_order_loss(&batch, &params, &mut rng).map_err(|e| e.to_string())?;
        worst = worst.max(close("order BCE", bce, 2f64.ln())?);
        let last = params.perm_head.layers.len() - 1;
        params.perm_head.layers[last].weight.fill(0.0);
        params.perm_head.layers[last].bias.fill(rng.random_range(-2.0..2.0));
        let ce = permutation_loss(&batch, &params, &mut rng).map_err(|e| e.to_string())?;
        worst = worst.max(close("permutation CE", ce, 6f64.ln())?);
    }
    Ok(format!("log(|N|+1) for |N| in 1..=8, ln 2, log 6; max diff {worst:.1e}"))
}

fn brute_positives(t: usize, n: usize) -> Vec<usize> {
    (1..=n).filter(|&p| p.abs_diff(t) == 1).collect()
}

fn brute_negatives(t: usize, n: usize, scope: NegativeScope) -> Vec<usize> {
    (1..=n)
        .filter(|&j| {
            let d = j.abs_diff(t);
            d >= 3 && (scope == NegativeScope::Global || d <= 5)
        })
        .collect()
}

fn dummy_video(n: usize) -> UnlabeledVideo {
    UnlabeledVideo { id: format!("n{n}"), features: Array2::zeros((n, 1)), clip_stride: 1.0 }
}

pub fn candidate_sets_match_enumeration() -> Check {
    let mut cases = 0;
    for n in 1..=30 {
        for scope in NegativeScope::ALL {
            let mut anchors = Vec::new();
            for t in 1..=n {
                let pos = brute_positives(t, n);
                let neg = brute_negatives(t, n, scope);
                if positive_candidates(t, n) != pos {
                    return Err(format!("positives t={t} n={n}"));
                }
                if negative_candidates(t, n, scope) != neg {
                    return Err(format!("negatives t={t} n={n} {scope}"));
                }
                if !pos.is_empty() && !neg.is_empty() {
                    anchors.push(t);
                }
                cases += 1;
            }
            if admissible_anchors(n, scope) != anchors {
                return Err(format!("admissible anchors n={n} {scope}"));
            }
        }
    }
    Ok(format!("{cases} (t, n, scope) cases"))
}

pub fn margin_zone_fuzz(draws: usize) -> Check {
    let videos: Vec<UnlabeledVideo> = (0..=40).map(dummy_video).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..draws {
        let n = rng.random_range(4..=40);
        let scope = random_scope(&mut rng);
        let t = sample_triplet(&videos[n], scope, &mut rng).map_err(|e| e.to_string())?;
        let in_range = [t.anchor, t.positive, t.negative].iter().all(|&x| (1..=n).contains(&x));
        let d = t.anchor.abs_diff(t.negative);
        let ok = in_range && t.anchor.abs_diff(t.positive) == 1 && d >= 3 && (scope == NegativeScope::Global || d <= 5);
        if !ok {
            return Err(format!("draw {i}: n={n} {scope} {t:?}"));
        }
    }
    Ok(format!("{draws} draws"))
}

/// Chi-square goodness of fit of sampled triplets against the sampler's
/// law: anchor uniform over admissible anchors, then positive and negative
/// uniform over their candidate sets.
pub fn triplet_frequency_test(n: usize, draws: usize, alpha: f64) -> Check {
    let video = dummy_video(n);
    let mut details = Vec::new();
    for (si, scope) in NegativeScope::ALL.into_iter().enumerate() {
        let anchors = admissible_anchors(n, scope);
        let mut cells = std::collections::BTreeMap::new();
        for &t in &anchors {
            let pos = positive_candidates(t, n);
            let neg = negative_candidates(t, n, scope);
            let p = 1.0 / (anchors.len() * pos.len() * neg.len()) as f64;
            for &q in &pos {
                for &r in &neg {
                    cells.insert((t, q, r), (p, 0usize));
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(20 + si as u64);
        for _ in 0..draws {
            let t = sample_triplet(&video, scope, &mut rng).map_err(|e| e.to_string())?;
            match cells.get_mut(&(t.anchor, t.positive, t.negative)) {
                Some(c) => c.1 += 1,
                None => return Err(format!("inadmissible triplet {t:?}")),
            }
        }
        let stat: f64 = cells
            .values()
            .map(|&(p, c)| {
                let e = p * draws as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        let df = (cells.len() - 1) as f64;
        let critical = ChiSquared::new(df).unwrap().inverse_cdf(1.0 - alpha);
        if !(stat < critical) {
            return Err(format!("{scope}: chi2 {stat:.1} >= {critical:.1} (df {df})"));
        }
        details.push(format!("{scope} chi2 {stat:.1} < {critical:.1} (df {df})"));
    }
    Ok(details.join("; "))
}

pub fn sampling_oracle() -> Check {
    let a = candidate_sets_match_enumeration()?;
    let b = margin_zone_fuzz(1_000_000)?;
    let c = triplet_frequency_test(20, 100_000, 0.01)?;
    Ok(format!("{a}; margin held over {b}; {c}"))
}

/// Grid step in seconds; dyadic so every start, end and `t_a` is exact.
const LABEL_STEP: f64 = 0.125;
const LABEL_GRID: usize = 100;

/// The rule restated on integer grid units: a clip of `d` units starting at
/// `s` is intentional when it ends by `a`, unintentional when it starts at
/// or after `a`, and transitional when it straddles `a`.
fn rule_on_grid(s: i64, d: i64, a: i64) -> IntentLabel {
    let straddles = s < a && a < s + d;
    if straddles {
        IntentLabel::Transitional
    } else if a >= s + d {
        IntentLabel::Intentional
    } else {
        IntentLabel::Unintentional
    }
}

pub fn labeling_oracle() -> Check {
    let d_units = 8;
    let duration = d_units as f64 * LABEL_STEP;
    let mut table = vec![vec![IntentLabel::Intentional; LABEL_GRID]; LABEL_GRID];
    for (i, row) in table.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let got = label_clip(i as f64 * LABEL_STEP, duration, j as f64 * LABEL_STEP).map_err(|e| e.to_string())?;
            let want = rule_on_grid(i as i64, d_units, j as i64);
            if got != want {
                return Err(format!("start {i}, t_a {j}: {got} vs {want}"));
            }
            *cell = got;
        }
    }
    // Later starts never move a label back; later transitions never move it forward.
    for i in 0..LABEL_GRID {
        for j in 0..LABEL_GRID {
            if i + 1 < LABEL_GRID && table[i + 1][j].index() < table[i][j].index() {
                return Err(format!("label decreases with start at ({i}, {j})"));
            }
            if j + 1 < LABEL_GRID && table[i][j + 1].index() > table[i][j].index() {
                return Err(format!("label increases with t_a at ({i}, {j})"));
            }
        }
    }
    // Partition: for each t_a the starts split into I, then T, then U, and
    // the T block is exactly the starts in (t_a - d, t_a).
    #[allow(clippy::needless_range_loop)]
    for j in 0..LABEL_GRID {
        let col: Vec<IntentLabel> = (0..LABEL_GRID).map(|i| table[i][j]).collect();
        let t_rows: Vec<usize> = (0..LABEL_GRID).filter(|&i| col[i] == IntentLabel::Transitional).collect();
        let expected: Vec<usize> = (0..LABEL_GRID).filter(|&i| i < j && j < i + d_units as usize).collect();
        if t_rows != expected {
            return Err(format!("transitional block for t_a {j}: {t_rows:?} vs {expected:?}"));
        }
        let counts = IntentLabel::ALL.map(|c| col.iter().filter(|&&l| l == c).count());
        if counts.iter().sum::<usize>() != LABEL_GRID {
            return Err(format!("labels for t_a {j} do not partition the starts"));
        }
    }
    Ok(format!("{} (start, t_a) combinations", LABEL_GRID * LABEL_GRID))
}

/// Positive swap and positive rescaling leave the temporal loss unchanged;
/// localization correctness only grows with the threshold.
pub fn invariances() -> Check {
    let mut worst: f64 = 0.0;
    for trial in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + trial);
        let dims = small_dims(&mut rng);
        let params = ModelParams::init(&dims, rng.random_range(0.1..1.0), &mut rng).unwrap();
        let videos = random_videos(rng.random_range(1..=4), dims.d_in, &mut rng);
        let batch: Batch = assemble_batch(&videos, random_scope(&mut rng), &mut rng).unwrap();
        let a = temporal_contrastive(&batch, &params).map_err(|e| e.to_string())?;
        let b = temporal_contrastive(&batch.swapped_positives(), &params).map_err(|e| e.to_string())?;
        if (a - b).abs() >= INVARIANCE_TOL {
            return Err(format!("positive swap changed loss {a} -> {b}"));
        }
        worst = worst.max((a - b).abs());

        let k = rng.random_range(1..=4);
        let d = rng.random_range(2..=8);
        let mut z = (0..3).map(|_| Array2::from_shape_fn((k, d), |_| rng.random_range(-1.0..1.0))).collect::<Vec<_>>();
        let tau = rng.random_range(0.05..1.0);
        let base = temporal_contrastive_embeddings(&z[0], &z[1], &z[2], tau).map_err(|e| e.to_string())?;
        let which = rng.random_range(0..3);
        let row = rng.random_range(0..k);
        let c = rng.random_range(0.01..100.0);
        z[which].row_mut(row).mapv_inplace(|v| v * c);
        let scaled = temporal_contrastive_embeddings(&z[0], &z[1], &z[2], tau).map_err(|e| e.to_string())?;
        if (base - scaled).abs() >= INVARIANCE_TOL {
            return Err(format!("rescaling row {row} of block {which} by {c} changed loss {base} -> {scaled}"));
        }
        worst = worst.max((base - scaled).abs());
    }
    let videos = localization_monotonicity()?;
    Ok(format!("swap and rescale max diff {worst:.1e}; threshold monotonicity on {videos} videos"))
}

fn localization_monotonicity() -> Result<usize, String> {
    let gen = GenConfig { d_in: 8, ..GenConfig::default() };
    let counts = SplitCounts { pretrain: 0, labeled_train: 30, labeled_test: 60 };
    let data = generate_dataset(&gen, counts).map_err(|e| e.to_string())?;
    let cfg = EvalConfig { thresholds: vec![0.0, 0.25, 0.5, 1.0, 2.0, 4.0], probe_steps: 50, ..EvalConfig::default() };
    let dims = ModelDims { d_in: 8, encoder_hidden: vec![8], d_f: 8, ..ModelDims::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let encoder = ModelParams::init(&dims, 0.1, &mut rng).unwrap();
    let train = clip_set(&data.labeled_train, &cfg).map_err(|e| e.to_string())?;
    let fitted = fit_on_set(&encoder, &train, Regime::Frozen, &cfg, &mut rng).map_err(|e| e.to_string())?;
    let mut checked = 0;
    for v in &data.labeled_test {
        let loc = localize(&fitted.probe, &encoder, v, &cfg).map_err(|e| e.to_string())?;
        check_monotone(&v.id, &loc.correct)?;
        // Random scores as well, so ties and far picks are exercised.
        let set = clip_set(std::slice::from_ref(v), &cfg).map_err(|e| e.to_string())?;
        let scores: Vec<f64> = (0..set.len()).map(|_| rng.random_range(0.0..1.0)).collect();
        let t_a = v.transition.expect("labeled");
        let loc = localize_from_scores(&set.specs, &scores, t_a, &cfg.thresholds).map_err(|e| e.to_string())?;
        check_monotone(&v.id, &loc.correct)?;
        checked += 1;
    }
    Ok(checked)
}

fn check_monotone(id: &str, correct: &[(f64, bool)]) -> Result<(), String> {
    for w in correct.windows(2) {
        if w[0].1 && !w[1].1 {
            return Err(format!("video {id}: correct at {} but not at {}", w[0].0, w[1].0));
        }
    }
    Ok(())
}

/// Result of one seed of the end-to-end benchmark.
#[derive(Clone, Debug)]
pub struct BenchmarkRun {
    pub seed: u64,
    pub pretrained_cls: f64,
    pub scratch_cls: f64,
    pub pretrained_loc: f64,
    pub baseline_loc: f64,
    pub elapsed: Duration,
}

pub const CHANCE: f64 = 1.0 / 3.0;
pub const CLS_MARGIN: f64 = 0.15;
pub const LOC_MARGIN: f64 = 0.10;
pub const RUN_LIMIT: Duration = Duration::from_secs(300);

/// Default configuration with the dataset and run seeded by `seed`:
/// Combined-Global pretraining, frozen probes on all labeled videos.
pub fn benchmark_run(seed: u64) -> Result<BenchmarkRun, String> {
    let start = Instant::now();
    let cfg = intentlab::config::RunConfig::default();
    let gen = GenConfig { seed, ..cfg.gen.clone() };
    let data = generate_dataset(&gen, cfg.counts).map_err(|e| e.to_string())?;
    let (pre, scratch) =
        intentlab::evaluation::pretrained_vs_scratch(&data, &cfg.pretrain, &cfg.eval.protocol, seed, "benchmark")
            .map_err(|e| e.to_string())?;
    let stride = 1.0;
    let baseline_loc =
        random_localization_baseline(&data.labeled_test, stride, &cfg.eval.protocol).map_err(|e| e.to_string())?;
    Ok(BenchmarkRun {
        seed,
        pretrained_cls: pre.cls_accuracy,
        scratch_cls: scratch.cls_accuracy,
        pretrained_loc: pre.loc_at(stride).ok_or("missing loc@1.0")?,
        baseline_loc,
        elapsed: start.elapsed(),
    })
}

impl BenchmarkRun {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.pretrained_cls < CHANCE + CLS_MARGIN {
            v.push(format!("cls {:.4} < {:.4}", self.pretrained_cls, CHANCE + CLS_MARGIN));
        }
        if self.pretrained_loc < self.baseline_loc + LOC_MARGIN {
            v.push(format!("loc@1.0 {:.4} < baseline {:.4} + {LOC_MARGIN}", self.pretrained_loc, self.baseline_loc));
        }
        if !(self.scratch_cls < self.pretrained_cls) {
            v.push(format!("scratch cls {:.4} >= pretrained {:.4}", self.scratch_cls, self.pretrained_cls));
        }
        if self.elapsed >= RUN_LIMIT {
            v.push(format!("run took {:.0?}", self.elapsed));
        }
        v
    }

    pub fn summary(&self) -> String {
        format!(
            "seed {}: cls {:.3} (scratch {:.3}), loc@1.0 {:.3} (baseline {:.3}), {:.0?}",
            self.seed, self.pretrained_cls, self.scratch_cls, self.pretrained_loc, self.baseline_loc, self.elapsed
        )
    }
}
