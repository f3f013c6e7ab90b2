//! The frame selector: affine input compression, a two-layer bidirectional
//! LSTM, and a two-way temperature softmax head whose first component is
//! the per-frame importance score.

use rand::Rng;

use super::layers::{BiLstm, BiLstmVars, Linear, LinearVars, Parameters};
use super::{check_features, prefixed};
use crate::autodiff::{Mat, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Selector {
    pub input: Linear,
    pub lstm: BiLstm,
    pub head: Linear,
    pub tau: f64,
}

#[derive(Clone, Debug)]
pub struct SelectorVars {
    pub input: LinearVars,
    pub lstm: BiLstmVars,
    pub head: LinearVars,
}

impl SelectorVars {
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.input.vars();
        v.extend(self.lstm.vars());
        v.extend(self.head.vars());
        v
    }
}

impl Selector {
    /// `d_h` must be even: each LSTM direction carries `d_h / 2` units.
    pub fn new<R: Rng + ?Sized>(rng: &mut R, d: usize, d_h: usize, tau: f64) -> Result<Self> {
        super::check_dims(d, d_h)?;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {tau}")));
        }
        Ok(Self {
            input: Linear::new(rng, d, d_h),
            lstm: BiLstm::new(rng, d_h, d_h / 2, 2),
            head: Linear::new(rng, d_h, 2),
            tau,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.input.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.input.output_dim()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> SelectorVars {
        SelectorVars {
            input: self.input.bind(tape, trainable),
            lstm: self.lstm.bind(tape, trainable),
            head: self.head.bind(tape, trainable),
        }
    }

    /// Importance scores as an `n x 1` node.
    pub fn forward(&self, tape: &mut Tape, vars: &SelectorVars, x: Var) -> Var {
        let z = vars.input.apply(tape, x);
        let h = vars.lstm.forward(tape, z).output;
        let logits = vars.head.apply(tape, h);
        let scaled = tape.scale(logits, 1.0 / self.tau);
        let probs = tape.softmax_rows(scaled);
        tape.col(probs, 0)
    }

    /// Per-frame importance scores `p_i` in `(0, 1)`.
    pub fn scores(&self, features: &Mat) -> Result<Vec<f64>> {
        check_features(features, self.feature_dim())?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let x = tape.constant(features.clone());
        let p = self.forward(&mut tape, &vars, x);
        Ok(tape.value(p).iter().copied().collect())
    }
}

impl Parameters for Selector {
    fn named_params(&self) -> Vec<(String, &Mat)> {
        let mut out = prefixed("input", self.input.named_params());
        out.extend(prefixed("lstm", self.lstm.named_params()));
        out.extend(prefixed("head", self.head.named_params()));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = self.input.params_mut();
        out.extend(self.lstm.params_mut());
        out.extend(self.head.params_mut());
        out
    }
}
