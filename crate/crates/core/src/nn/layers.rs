use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamSet};
use super::tape::{BatchStats, Tape, Var, NORM_EPS};
use super::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Fully connected layer; weight is out×in, bias 1×out.
#[derive(Clone, Debug, PartialEq)]
pub struct FcLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl FcLayer {
    /// Weights uniform in `±1/√in`, zero bias.
    pub fn init<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let w = Matrix::from_fn(out_dim, in_dim, |_, _| rng.random_range(-bound..=bound));
        let weight = params.add(format!("{name}.weight"), w);
        let bias = params.add(format!("{name}.bias"), Matrix::zeros(1, out_dim));
        FcLayer { weight, bias, activation, in_dim, out_dim }
    }

    pub fn apply(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var> {
        let w = tape.param(params, self.weight);
        let b = tape.param(params, self.bias);
        let y = tape.linear(x, w, Some(b))?;
        match self.activation {
            Activation::Relu => tape.relu(y),
            Activation::None => Ok(y),
        }
    }
}

/// `act(x·Wᵀ + b)` evaluated outside any tape.
pub fn fc_forward(layer: &FcLayer, params: &ParamSet, x: &Matrix) -> Result<Matrix> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = layer.apply(&mut tape, params, xv)?;
    Ok(tape.value(y).clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    LayerNorm,
    BatchNorm,
    None,
}

/// Running statistics update produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct NormUpdate {
    pub mean: ParamId,
    pub var: ParamId,
    pub stats: BatchStats,
}

/// Momentum of the retained running average.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Debug, PartialEq)]
pub struct NormLayer {
    pub kind: NormKind,
    pub channels: usize,
    gain: Option<ParamId>,
    shift: Option<ParamId>,
    running_mean: Option<ParamId>,
    running_var: Option<ParamId>,
}

impl NormLayer {
    pub fn init(params: &mut ParamSet, name: &str, kind: NormKind, channels: usize) -> Self {
        let mut layer = NormLayer {
            kind,
            channels,
            gain: None,
            shift: None,
            running_mean: None,
            running_var: None,
        };
        if kind == NormKind::None {
            return layer;
        }
        layer.gain = Some(params.add(format!("{name}.gain"), Matrix::filled(1, channels, 1.0)));
        layer.shift = Some(params.add(format!("{name}.shift"), Matrix::zeros(1, channels)));
        if kind == NormKind::BatchNorm {
            layer.running_mean =
                Some(params.add_buffer(format!("{name}.running_mean"), Matrix::zeros(1, channels)));
            layer.running_var =
                Some(params.add_buffer(format!("{name}.running_var"), Matrix::filled(1, channels, 1.0)));
        }
        layer
    }

    pub fn apply(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        x: Var,
        mode: Mode,
        updates: &mut Vec<NormUpdate>,
    ) -> Result<Var> {
        let (Some(g), Some(s)) = (self.gain, self.shift) else {
            return Ok(x);
        };
        let (gv, sv) = (tape.param(params, g), tape.param(params, s));
        match (self.kind, mode) {
            (NormKind::LayerNorm, _) => tape.layer_norm(x, gv, sv),
            (NormKind::BatchNorm, Mode::Train) => {
                let (y, stats) = tape.batch_norm(x, gv, sv)?;
                updates.push(NormUpdate {
                    mean: self.running_mean.expect("batch norm has running mean"),
                    var: self.running_var.expect("batch norm has running var"),
                    stats,
                });
                Ok(y)
            }
            (NormKind::BatchNorm, Mode::Eval) => {
                let mean = params.get(self.running_mean.expect("batch norm has running mean"));
                let var = params.get(self.running_var.expect("batch norm has running var"));
                tape.frozen_norm(x, gv, sv, mean.data(), var.data())
            }
            (NormKind::None, _) => Ok(x),
        }
    }
}

/// Folds batch statistics into the running averages.
pub fn apply_norm_updates(params: &mut ParamSet, updates: &[NormUpdate]) {
    for u in updates {
        let rm = params.get_mut(u.mean);
        for (r, m) in rm.data_mut().iter_mut().zip(&u.stats.mean) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
        }
        let rv = params.get_mut(u.var);
        for (r, v) in rv.data_mut().iter_mut().zip(&u.stats.var) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
        }
    }
}

/// Per-row standardization with affine parameters, outside any tape.
pub fn layer_norm_forward(x: &Matrix, gain: &[f64], shift: &[f64]) -> Result<Matrix> {
    if gain.len() != x.cols() || shift.len() != x.cols() {
        return Err(Error::shape("layer_norm_forward", "parameter length"));
    }
    let c = x.cols() as f64;
    let mut y = x.clone();
    for r in 0..y.rows() {
        let row = y.row_mut(r);
        let mean = row.iter().sum::<f64>() / c;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
        let is = 1.0 / (var + NORM_EPS).sqrt();
        for ((v, g), s) in row.iter_mut().zip(gain).zip(shift) {
            *v = (*v - mean) * is * g + s;
        }
    }
    Ok(y)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutSpec {
    pub rate: f64,
    pub training: bool,
}

impl DropoutSpec {
    pub fn new(rate: f64, training: bool) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(DropoutSpec { rate, training })
    }

    pub fn is_identity(&self) -> bool {
        !self.training || self.rate == 0.0
    }

    /// Inverted-dropout multipliers: 0 with probability `rate`, else `1/(1-rate)`.
    pub fn mask<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<f64> {
        let keep = 1.0 / (1.0 - self.rate);
        (0..len).map(|_| if rng.random::<f64>() < self.rate { 0.0 } else { keep }).collect()
    }

    pub fn apply<R: Rng + ?Sized>(&self, tape: &mut Tape, x: Var, rng: &mut R) -> Result<Var> {
        if self.is_identity() {
            return Ok(x);
        }
        let mask = self.mask(tape.value(x).len(), rng);
        tape.dropout(x, mask)
    }
}

pub fn dropout<R: Rng + ?Sized>(x: &Matrix, spec: DropoutSpec, rng: &mut R) -> Matrix {
    if spec.is_identity() {
        return x.clone();
    }
    let mut y = x.clone();
    for (v, m) in y.data_mut().iter_mut().zip(spec.mask(x.len(), rng)) {
        *v *= m;
    }
    y
}
