//! Pretraining objectives.
//!
//! - `L_temp`: symmetric InfoNCE over the `K` positive pairs of a batch, with
//!   the `K` negatives shared by every pair. Works on projections `z = g(f)`.
//! - `L_ord`: binary cross-entropy of the order head over the three
//!   within-video pairs of every triplet, each concatenated in a random
//!   order. Works on backbone features `f`.
//! - Permutation variant: the three clips of a triplet are concatenated in
//!   one of six orders and the permutation head names the order.

use std::fmt;

use ndarray::{Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::model::{check_temperature, BoundModel, ModelParams, PERMUTATIONS};
use crate::nn::tape::{Tape, Tensor, Var};
use crate::sampling::Batch;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    TempOnly,
    OrdOnly,
    Combined,
    CombinedPermutation,
}

impl LossMode {
    pub const ALL: [LossMode; 4] =
        [LossMode::TempOnly, LossMode::OrdOnly, LossMode::Combined, LossMode::CombinedPermutation];

    pub fn name(self) -> &'static str {
        match self {
            LossMode::TempOnly => "temp_only",
            LossMode::OrdOnly => "ord_only",
            LossMode::Combined => "combined",
            LossMode::CombinedPermutation => "combined_permutation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.to_ascii_lowercase().replace('-', "_");
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    fn uses_temporal(self) -> bool {
        !matches!(self, LossMode::OrdOnly)
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_temp: f64,
    pub l_ord: f64,
    pub l_total: f64,
    /// Order-prediction samples: `3K` pairs, or `K` permutations.
    pub pair_count: usize,
    /// Negatives seen by each InfoNCE term.
    pub negative_count: usize,
}

/// `exp(cos(x, y) / tau)`.
pub fn similarity_q(x: ArrayView1<f64>, y: ArrayView1<f64>, tau: f64) -> Result<f64> {
    check_temperature(tau)?;
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {}", x.len(), y.len())));
    }
    let nx = x.dot(&x).sqrt();
    let ny = y.dot(&y).sqrt();
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::ZeroVector);
    }
    let cos = (x.dot(&y) / (nx * ny)).clamp(-1.0, 1.0);
    Ok((cos / tau).exp())
}

/// Per-row InfoNCE: row `i` of `zx` against row `i` of `zy`, with every row
/// of `zn` as a negative. Returns a `K x 1` column.
fn info_nce_rows(tape: &Tape, zx: Var, zy: Var, zn: Var, tau: f64) -> Var {
    let xn = tape.normalize_rows(zx);
    let yn = tape.normalize_rows(zy);
    let nn = tape.normalize_rows(zn);
    let pos = tape.sum_cols(tape.mul(xn, yn));
    let neg = tape.matmul(xn, tape.transpose(nn));
    let logits = tape.scale(tape.concat_cols(&[pos, neg]), 1.0 / tau);
    tape.sub(tape.logsumexp_rows(logits), tape.scale(pos, 1.0 / tau))
}

fn check_nonzero_rows(z: &Tensor) -> Result<()> {
    if z.rows().into_iter().any(|r| r.iter().all(|&v| v == 0.0)) {
        Err(Error::ZeroVector)
    } else {
        Ok(())
    }
}

/// InfoNCE of the positive pair `(x, y)` against the rows of `negatives`,
/// all passed through the projection head first.
pub fn info_nce(
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
    negatives: &Array2<f64>,
    params: &ModelParams,
    tau: f64,
) -> Result<f64> {
    check_temperature(tau)?;
    if negatives.nrows() == 0 {
        return Err(Error::EmptyNegativeSet);
    }
    let zx = params.proj_head.forward(&x.to_owned().insert_axis(Axis(0)))?;
    let zy = params.proj_head.forward(&y.to_owned().insert_axis(Axis(0)))?;
    let zn = params.proj_head.forward(negatives)?;
    info_nce_embeddings(&zx, &zy, &zn, tau).map(|col| col[0])
}

/// InfoNCE per row on embeddings that are already projected.
pub fn info_nce_embeddings(zx: &Tensor, zy: &Tensor, zn: &Tensor, tau: f64) -> Result<Vec<f64>> {
    check_temperature(tau)?;
    if zn.nrows() == 0 {
        return Err(Error::EmptyNegativeSet);
    }
    if zx.dim() != zy.dim() || zx.ncols() != zn.ncols() {
        return Err(Error::ShapeMismatch("embedding widths differ".into()));
    }
    for z in [zx, zy, zn] {
        check_nonzero_rows(z)?;
    }
    let tape = Tape::new();
    let out = info_nce_rows(&tape, tape.leaf(zx.clone()), tape.leaf(zy.clone()), tape.leaf(zn.clone()), tau);
    let col = tape.value(out).column(0).to_vec();
    Ok(col)
}

/// Symmetric temporal contrastive loss from projected embeddings of the
/// anchors, positives and shared negatives.
pub fn temporal_contrastive_embeddings(z1: &Tensor, z2: &Tensor, zn: &Tensor, tau: f64) -> Result<f64> {
    let k = z1.nrows();
    if k == 0 {
        return Err(Error::EmptyNegativeSet);
    }
    let a = info_nce_embeddings(z1, z2, zn, tau)?;
    let b = info_nce_embeddings(z2, z1, zn, tau)?;
    Ok((a.iter().sum::<f64>() + b.iter().sum::<f64>()) / (2 * k) as f64)
}

fn temporal_term(tape: &Tape, bound: &BoundModel, f: Var, k: usize, tau: f64) -> Var {
    let z = bound.proj_head.forward(tape, f);
    let rows = |lo: usize| (lo..lo + k).collect::<Vec<_>>();
    let z1 = tape.select_rows(z, &rows(0));
    let z2 = tape.select_rows(z, &rows(k));
    let zn = tape.select_rows(z, &rows(2 * k));
    let l12 = info_nce_rows(tape, z1, z2, zn, tau);
    let l21 = info_nce_rows(tape, z2, z1, zn, tau);
    tape.scale(tape.add(tape.sum(l12), tape.sum(l21)), 1.0 / (2 * k) as f64)
}

/// One concatenated pair for the order head. Rows index the stacked batch
/// `[anchors; positives; negatives]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OrderedPair {
    pub first_row: usize,
    pub second_row: usize,
    /// 1 iff the first clip precedes the second in its video.
    pub label: u8,
}

/// Draws the concatenation order of the pairs `(p1, p2)`, `(p1, n)` and
/// `(p2, n)` of every triplet, one fair coin per pair, in that order.
pub fn sample_pair_orders<R: Rng + ?Sized>(batch: &Batch, rng: &mut R) -> Result<Vec<OrderedPair>> {
    let k = batch.len();
    let mut out = Vec::with_capacity(3 * k);
    for (i, t) in batch.triplets.iter().enumerate() {
        let members = [(i, t.anchor), (k + i, t.positive), (2 * k + i, t.negative)];
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            if members[a].1 == members[b].1 {
                return Err(Error::DegenerateIndices(members[a].1));
            }
            let (first, second) =
                if rng.random_bool(0.5) { (members[b], members[a]) } else { (members[a], members[b]) };
            out.push(OrderedPair { first_row: first.0, second_row: second.0, label: u8::from(first.1 < second.1) });
        }
    }
    Ok(out)
}

fn order_term(tape: &Tape, bound: &BoundModel, f: Var, pairs: &[OrderedPair]) -> Var {
    let left: Vec<usize> = pairs.iter().map(|p| p.first_row).collect();
    let right: Vec<usize> = pairs.iter().map(|p| p.second_row).collect();
    let labels: Vec<f64> = pairs.iter().map(|p| f64::from(p.label)).collect();
    let cat = tape.concat_cols(&[tape.select_rows(f, &left), tape.select_rows(f, &right)]);
    let logits = bound.order_head.forward(tape, cat);
    tape.mean(tape.bce_with_logits(logits, &labels))
}

/// The six orderings of three items, in lexicographic order. Class `c` of
/// the permutation head means the clips were concatenated as
/// `sorted[PERMUTATION_TABLE[c][0]], sorted[..[1]], sorted[..[2]]`.
pub const PERMUTATION_TABLE: [[usize; 3]; PERMUTATIONS] =
    [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PermutedTriplet {
    /// Stacked-batch rows in concatenation order.
    pub rows: [usize; 3],
    pub class: usize,
}

/// Draws one permutation per triplet, uniform over the six orders.
pub fn sample_permutations<R: Rng + ?Sized>(batch: &Batch, rng: &mut R) -> Vec<PermutedTriplet> {
    let k = batch.len();
    batch
        .triplets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut members = [(t.anchor, i), (t.positive, k + i), (t.negative, 2 * k + i)];
            members.sort();
            let class = rng.random_range(0..PERMUTATIONS);
            let perm = PERMUTATION_TABLE[class];
            PermutedTriplet { rows: [members[perm[0]].1, members[perm[1]].1, members[perm[2]].1], class }
        })
        .collect()
}

fn permutation_term(tape: &Tape, bound: &BoundModel, f: Var, samples: &[PermutedTriplet]) -> Var {
    let cols: Vec<Var> = (0..3)
        .map(|j| {
            let rows: Vec<usize> = samples.iter().map(|s| s.rows[j]).collect();
            tape.select_rows(f, &rows)
        })
        .collect();
    let logits = bound.perm_head.forward(tape, tape.concat_cols(&cols));
    let targets: Vec<usize> = samples.iter().map(|s| s.class).collect();
    tape.mean(tape.softmax_cross_entropy(logits, &targets))
}

struct Built {
    bound: BoundModel,
    total: Var,
    report: LossReport,
}

fn build<R: Rng + ?Sized>(
    tape: &Tape,
    batch: &Batch,
    params: &ModelParams,
    mode: LossMode,
    rng: &mut R,
) -> Result<Built> {
    let k = batch.len();
    if k == 0 {
        return Err(Error::EmptyNegativeSet);
    }
    if batch.feature_dim() != params.d_in() {
        return Err(Error::ShapeMismatch(format!(
            "batch features have width {}, encoder expects {}",
            batch.feature_dim(),
            params.d_in()
        )));
    }
    check_temperature(params.temperature)?;
    let bound = params.bind(tape);
    let x = tape.leaf(batch.stacked());
    let f = bound.encoder.forward(tape, x);

    let temp = mode.uses_temporal().then(|| temporal_term(tape, &bound, f, k, params.temperature));
    let (ord, pair_count) = match mode {
        LossMode::TempOnly => (None, 0),
        LossMode::OrdOnly | LossMode::Combined => {
            let pairs = sample_pair_orders(batch, rng)?;
            (Some(order_term(tape, &bound, f, &pairs)), pairs.len())
        }
        LossMode::CombinedPermutation => {
            let samples = sample_permutations(batch, rng);
            (Some(permutation_term(tape, &bound, f, &samples)), samples.len())
        }
    };
    let total = match (temp, ord) {
        (Some(t), Some(o)) => tape.add(t, o),
        (Some(t), None) => t,
        (None, Some(o)) => o,
        (None, None) => unreachable!("every mode has a term"),
    };
    let l_temp = temp.map_or(0.0, |v| tape.scalar(v));
    let l_ord = ord.map_or(0.0, |v| tape.scalar(v));
    let report = LossReport {
        l_temp,
        l_ord,
        l_total: tape.scalar(total),
        pair_count,
        negative_count: if temp.is_some() { k } else { 0 },
    };
    Ok(Built { bound, total, report })
}

pub fn temporal_contrastive(batch: &Batch, params: &ModelParams) -> Result<f64> {
    let tape = Tape::new();
    // TempOnly draws nothing from the stream.
    let mut unused = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    Ok(build(&tape, batch, params, LossMode::TempOnly, &mut unused)?.report.l_temp)
}

pub fn pair_order_loss<R: Rng + ?Sized>(batch: &Batch, params: &ModelParams, rng: &mut R) -> Result<f64> {
    let tape = Tape::new();
    Ok(build(&tape, batch, params, LossMode::OrdOnly, rng)?.report.l_ord)
}

pub fn permutation_loss<R: Rng + ?Sized>(batch: &Batch, params: &ModelParams, rng: &mut R) -> Result<f64> {
    let tape = Tape::new();
    let built = build(&tape, batch, params, LossMode::CombinedPermutation, rng)?;
    Ok(built.report.l_ord)
}

pub fn total_loss<R: Rng + ?Sized>(
    batch: &Batch,
    params: &ModelParams,
    mode: LossMode,
    rng: &mut R,
) -> Result<LossReport> {
    let tape = Tape::new();
    Ok(build(&tape, batch, params, mode, rng)?.report)
}

/// The loss report and gradients aligned with [`ModelParams::tensors`].
pub fn loss_and_grads<R: Rng + ?Sized>(
    batch: &Batch,
    params: &ModelParams,
    mode: LossMode,
    rng: &mut R,
) -> Result<(LossReport, Vec<Tensor>)> {
    let tape = Tape::new();
    let built = build(&tape, batch, params, mode, rng)?;
    let g = tape.backward(built.total)?;
    Ok((built.report, built.bound.grads(&tape, &g)))
}
