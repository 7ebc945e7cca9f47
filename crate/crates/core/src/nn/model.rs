//! The encoder and its three heads.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Number of orderings of three clips.
pub const PERMUTATIONS: usize = 6;

/// A dense layer `x W + b` with `W: in x out` and `b: 1 x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear { weight: Array2::zeros((input, output)), bias: Array2::zeros((1, output)) }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        Linear {
            weight: Array2::from_shape_fn((input, output), |_| dist.sample(rng)),
            bias: Array2::zeros((1, output)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }
}

/// Dense layers with `tanh` between them and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `widths = [in, hidden.., out]`.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Self {
        Mlp { layers: widths.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect() }
    }

    pub fn zeros(widths: &[usize]) -> Self {
        Mlp { layers: widths.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect() }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Linear::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::output_dim)
    }

    /// Row-wise forward pass without recording gradients.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} columns, layer expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        let mut h = x.clone();
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.dot(&layer.weight) + &layer.bias;
            if i < last {
                h.mapv_inplace(f64::tanh);
            }
        }
        Ok(h)
    }

    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.{i}.weight"), &l.weight));
            out.push((format!("{prefix}.{i}.bias"), &l.bias));
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        self.push_tensors_mut(&mut out);
        out
    }

    fn push_tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
    }

    pub fn bind(&self, tape: &Tape) -> BoundMlp {
        BoundMlp {
            layers: self.layers.iter().map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone()))).collect(),
        }
    }
}

/// An [`Mlp`] whose parameters live on a tape.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    layers: Vec<(Var, Var)>,
}

impl BoundMlp {
    pub fn forward(&self, tape: &Tape, x: Var) -> Var {
        let mut h = x;
        let last = self.layers.len().saturating_sub(1);
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.add_row(tape.matmul(h, w), b);
            if i < last {
                h = tape.tanh(h);
            }
        }
        h
    }

    /// Gradients in the order of [`Mlp`] layers, weight before bias.
    pub fn grads(&self, tape: &Tape, g: &Gradients) -> Vec<Tensor> {
        let mut out = Vec::new();
        self.grads_into(tape, g, &mut out);
        out
    }

    fn grads_into(&self, tape: &Tape, g: &Gradients, out: &mut Vec<Tensor>) {
        for &(w, b) in &self.layers {
            out.push(g.get_or_zeros(w, tape.shape(w)));
            out.push(g.get_or_zeros(b, tape.shape(b)));
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelDims {
    pub d_in: usize,
    pub encoder_hidden: Vec<usize>,
    pub d_f: usize,
    pub proj_hidden: usize,
    pub d_z: usize,
    pub order_hidden: usize,
    pub perm_hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            d_in: 32,
            encoder_hidden: vec![64, 64],
            d_f: 32,
            proj_hidden: 32,
            d_z: 16,
            order_hidden: 32,
            perm_hidden: 32,
        }
    }
}

impl ModelDims {
    fn encoder_widths(&self) -> Vec<usize> {
        let mut w = vec![self.d_in];
        w.extend(&self.encoder_hidden);
        w.push(self.d_f);
        w
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.d_in, self.d_f, self.proj_hidden, self.d_z, self.order_hidden, self.perm_hidden];
        if all.contains(&0) || self.encoder_hidden.contains(&0) {
            return Err(Error::InvalidConfig("model widths must be positive".into()));
        }
        Ok(())
    }
}

/// Encoder `phi`, projection head `g`, order head `h`, permutation head and
/// the contrastive temperature.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub encoder: Mlp,
    pub proj_head: Mlp,
    pub order_head: Mlp,
    pub perm_head: Mlp,
    pub temperature: f64,
}

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(dims: &ModelDims, temperature: f64, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        check_temperature(temperature)?;
        Ok(ModelParams {
            encoder: Mlp::init(&dims.encoder_widths(), rng),
            proj_head: Mlp::init(&[dims.d_f, dims.proj_hidden, dims.d_z], rng),
            order_head: Mlp::init(&[2 * dims.d_f, dims.order_hidden, 1], rng),
            perm_head: Mlp::init(&[3 * dims.d_f, dims.perm_hidden, PERMUTATIONS], rng),
            temperature,
        })
    }

    pub fn zeros(dims: &ModelDims, temperature: f64) -> Result<Self> {
        dims.validate()?;
        check_temperature(temperature)?;
        Ok(ModelParams {
            encoder: Mlp::zeros(&dims.encoder_widths()),
            proj_head: Mlp::zeros(&[dims.d_f, dims.proj_hidden, dims.d_z]),
            order_head: Mlp::zeros(&[2 * dims.d_f, dims.order_hidden, 1]),
            perm_head: Mlp::zeros(&[3 * dims.d_f, dims.perm_hidden, PERMUTATIONS]),
            temperature,
        })
    }

    /// Widths recovered from the tensors; assumes the one-hidden-layer heads
    /// built by [`ModelParams::init`].
    pub fn dims(&self) -> ModelDims {
        let hidden = |m: &Mlp| m.layers.first().map_or(0, Linear::output_dim);
        let n = self.encoder.layers.len();
        ModelDims {
            d_in: self.d_in(),
            encoder_hidden: self.encoder.layers[..n.saturating_sub(1)].iter().map(Linear::output_dim).collect(),
            d_f: self.d_f(),
            proj_hidden: hidden(&self.proj_head),
            d_z: self.d_z(),
            order_hidden: hidden(&self.order_head),
            perm_hidden: hidden(&self.perm_head),
        }
    }

    pub fn d_in(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn d_f(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn d_z(&self) -> usize {
        self.proj_head.output_dim()
    }

    /// Named parameter tensors in a fixed order: encoder, projection head,
    /// order head, permutation head.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.encoder.tensors("encoder", &mut out);
        self.proj_head.tensors("proj_head", &mut out);
        self.order_head.tensors("order_head", &mut out);
        self.perm_head.tensors("perm_head", &mut out);
        out
    }

    /// Same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        self.encoder.push_tensors_mut(&mut out);
        self.proj_head.push_tensors_mut(&mut out);
        self.order_head.push_tensors_mut(&mut out);
        self.perm_head.push_tensors_mut(&mut out);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.temperature.is_finite() && self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    pub fn bind(&self, tape: &Tape) -> BoundModel {
        BoundModel {
            encoder: self.encoder.bind(tape),
            proj_head: self.proj_head.bind(tape),
            order_head: self.order_head.bind(tape),
            perm_head: self.perm_head.bind(tape),
        }
    }

    /// `phi(x)` for one clip feature.
    pub fn encode(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_finite_input(x)?;
        Ok(self.encoder.forward(&x.to_owned().insert_axis(Axis(0)))?.row(0).to_owned())
    }

    /// `phi` applied to every row.
    pub fn encode_rows(&self, x: &Tensor) -> Result<Tensor> {
        self.encoder.forward(x)
    }

    /// `g(f)`.
    pub fn project(&self, f: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_finite_input(f)?;
        Ok(self.proj_head.forward(&f.to_owned().insert_axis(Axis(0)))?.row(0).to_owned())
    }

    /// Logit that the clip with feature `f1` precedes the one with `f2`.
    pub fn order_logit(&self, f1: ArrayView1<f64>, f2: ArrayView1<f64>) -> Result<f64> {
        self.check_finite_input(f1)?;
        self.check_finite_input(f2)?;
        let cat = ndarray::concatenate(Axis(0), &[f1, f2]).expect("1-d concat");
        Ok(self.order_head.forward(&cat.insert_axis(Axis(0)))?[[0, 0]])
    }

    fn check_finite_input(&self, x: ArrayView1<f64>) -> Result<()> {
        if x.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("input has non-finite entries".into()))
        }
    }
}

pub(crate) fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveTemperature(t))
    }
}

/// A [`ModelParams`] whose tensors live on a tape.
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub encoder: BoundMlp,
    pub proj_head: BoundMlp,
    pub order_head: BoundMlp,
    pub perm_head: BoundMlp,
}

impl BoundModel {
    /// Gradients aligned with [`ModelParams::tensors`]; zeros for tensors
    /// the loss does not reach.
    pub fn grads(&self, tape: &Tape, g: &Gradients) -> Vec<Tensor> {
        let mut out = Vec::new();
        self.encoder.grads_into(tape, g, &mut out);
        self.proj_head.grads_into(tape, g, &mut out);
        self.order_head.grads_into(tape, g, &mut out);
        self.perm_head.grads_into(tape, g, &mut out);
        out
    }
}
