//! The reconstructor: a bidirectional LSTM encoder, a bilinear attention
//! block, and a step-wise bidirectional LSTM decoder with an affine output
//! projection back to the feature width.
//!
//! The decoder is driven one time step at a time: the forward and backward
//! cells of each layer both consume the step input and carry their own
//! states across steps, starting from the encoder's final states. At step
//! `i` the attention energies are `Y W_b z_{i-1}` where `z_{i-1}` is the
//! previous top-layer decoder output (`h_e`, the concatenated final
//! encoder states, at the first step). The step input is
//! `[context, z_{i-1}]`, with a zero vector in place of `z_0`.

use rand::Rng;

use super::layers::{uniform_init, BiLstm, BiLstmVars, Linear, LinearVars, LstmState, Parameters};
use super::{check_features, prefixed};
use crate::autodiff::{Mat, Tape, Var};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstructor {
    pub encoder: BiLstm,
    /// `W_b`, `d_h x d_h`.
    pub attention: Mat,
    pub decoder: BiLstm,
    pub output: Linear,
}

#[derive(Clone, Debug)]
pub struct ReconstructorVars {
    pub encoder: BiLstmVars,
    pub attention: Var,
    pub decoder: BiLstmVars,
    pub output: LinearVars,
}

impl ReconstructorVars {
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.encoder.vars();
        v.push(self.attention);
        v.extend(self.decoder.vars());
        v.extend(self.output.vars());
        v
    }
}

#[derive(Clone, Debug)]
pub struct ReconstructorOutput {
    /// `n x d` reconstruction.
    pub output: Var,
    /// One `1 x n` attention weight row per decoding step.
    pub attention: Vec<Var>,
}

impl Reconstructor {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, d: usize, d_h: usize) -> Result<Self> {
        super::check_dims(d, d_h)?;
        Ok(Self {
            encoder: BiLstm::new(rng, d, d_h / 2, 2),
            attention: uniform_init(rng, (d_h, d_h), d_h),
            decoder: BiLstm::new(rng, 2 * d_h, d_h / 2, 2),
            output: Linear::new(rng, d_h, d),
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.attention.nrows()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> ReconstructorVars {
        ReconstructorVars {
            encoder: self.encoder.bind(tape, trainable),
            attention: if trainable {
                tape.param(self.attention.clone())
            } else {
                tape.constant(self.attention.clone())
            },
            decoder: self.decoder.bind(tape, trainable),
            output: self.output.bind(tape, trainable),
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &ReconstructorVars, x: Var) -> ReconstructorOutput {
        let n = tape.shape(x).0;
        let d_h = self.hidden_dim();
        let enc = vars.encoder.forward(tape, x);
        let y = enc.output;
        let top = enc.final_states.last().expect("encoder has layers");
        let h_e = tape.concat_cols(top[0].h, top[1].h);

        let mut states: Vec<[LstmState; 2]> = enc.final_states.clone();
        let mut z_prev = h_e;
        let mut prev_output = tape.constant(Mat::zeros((1, d_h)));
        let mut outputs = Vec::with_capacity(n);
        let mut attention = Vec::with_capacity(n);
        for _ in 0..n {
            let query = tape.matmul_nt(z_prev, vars.attention);
            let energy = tape.matmul_nt(query, y);
            let weights = tape.softmax_rows(energy);
            let context = tape.matmul(weights, y);
            attention.push(weights);

            let mut input = tape.concat_cols(context, prev_output);
            for (layer, cells) in vars.decoder.layers.iter().enumerate() {
                let mut hs = [input; 2];
                for dir in 0..2 {
                    let gates = cells[dir].input_gates(tape, input);
                    let next = cells[dir].step(tape, gates, states[layer][dir]);
                    states[layer][dir] = next;
                    hs[dir] = next.h;
                }
                input = tape.concat_cols(hs[0], hs[1]);
            }
            outputs.push(input);
            z_prev = input;
            prev_output = input;
        }
        let z = tape.stack_rows(&outputs);
        let output = vars.output.apply(tape, z);
        ReconstructorOutput { output, attention }
    }

    /// Reconstruction `V_hat` of an `n x d` input sequence.
    pub fn reconstruct(&self, input: &Mat) -> Result<Mat> {
        Ok(self.reconstruct_with_attention(input)?.0)
    }

    /// Reconstruction plus the attention weight vector of every decoding step.
    pub fn reconstruct_with_attention(&self, input: &Mat) -> Result<(Mat, Vec<Vec<f64>>)> {
        check_features(input, self.feature_dim())?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let x = tape.constant(input.clone());
        let out = self.forward(&mut tape, &vars, x);
        let weights = out
            .attention
            .iter()
            .map(|w| tape.value(*w).iter().copied().collect())
            .collect();
        Ok((tape.value(out.output).clone(), weights))
    }
}

impl Parameters for Reconstructor {
    fn named_params(&self) -> Vec<(String, &Mat)> {
        let mut out = prefixed("encoder", self.encoder.named_params());
        out.push(("attention".into(), &self.attention));
        out.extend(prefixed("decoder", self.decoder.named_params()));
        out.extend(prefixed("output", self.output.named_params()));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = self.encoder.params_mut();
        out.push(&mut self.attention);
        out.extend(self.decoder.params_mut());
        out.extend(self.output.params_mut());
        out
    }
}
