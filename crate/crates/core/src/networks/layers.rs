//! Parameter containers for affine maps and bidirectional LSTM stacks, plus
//! their tape bindings.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::autodiff::{Mat, Tape, Var};

/// Ordered access to the trainable tensors of a network.
pub trait Parameters {
    /// `(name, tensor)` pairs in a fixed order.
    fn named_params(&self) -> Vec<(String, &Mat)>;
    /// Mutable tensors in the same order as [`Parameters::named_params`].
    fn params_mut(&mut self) -> Vec<&mut Mat>;

    fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.named_params().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

pub(crate) fn uniform_init<R: Rng + ?Sized>(rng: &mut R, shape: (usize, usize), fan_in: usize) -> Mat {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array2::from_shape_simple_fn(shape, || dist.sample(rng))
}

fn bind(tape: &mut Tape, value: &Mat, trainable: bool) -> Var {
    if trainable {
        tape.param(value.clone())
    } else {
        tape.constant(value.clone())
    }
}

/// `y = x W + b`, with `W` stored `in x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Mat,
    pub bias: Mat,
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, input: usize, output: usize) -> Self {
        Self {
            weight: uniform_init(rng, (input, output), input),
            bias: uniform_init(rng, (1, output), input),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> LinearVars {
        LinearVars {
            weight: bind(tape, &self.weight, trainable),
            bias: bind(tape, &self.bias, trainable),
        }
    }
}

impl LinearVars {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Var {
        tape.affine(x, self.weight, self.bias)
    }

    pub fn vars(&self) -> Vec<Var> {
        vec![self.weight, self.bias]
    }
}

impl Parameters for Linear {
    fn named_params(&self) -> Vec<(String, &Mat)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<&mut Mat> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// One LSTM cell with gate blocks ordered (input, forget, candidate, output).
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    /// `in x 4h`
    pub w_ih: Mat,
    /// `h x 4h`
    pub w_hh: Mat,
    /// `1 x 4h`
    pub bias: Mat,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmCellVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
    pub hidden: usize,
}

/// Hidden and cell state of one LSTM direction.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, input: usize, hidden: usize) -> Self {
        Self {
            w_ih: uniform_init(rng, (input, 4 * hidden), input),
            w_hh: uniform_init(rng, (hidden, 4 * hidden), hidden),
            bias: uniform_init(rng, (1, 4 * hidden), hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.nrows()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> LstmCellVars {
        LstmCellVars {
            w_ih: bind(tape, &self.w_ih, trainable),
            w_hh: bind(tape, &self.w_hh, trainable),
            bias: bind(tape, &self.bias, trainable),
            hidden: self.hidden(),
        }
    }
}

impl Parameters for LstmCell {
    fn named_params(&self) -> Vec<(String, &Mat)> {
        vec![
            ("w_ih".into(), &self.w_ih),
            ("w_hh".into(), &self.w_hh),
            ("bias".into(), &self.bias),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Mat> {
        vec![&mut self.w_ih, &mut self.w_hh, &mut self.bias]
    }
}

impl LstmCellVars {
    pub fn vars(&self) -> Vec<Var> {
        vec![self.w_ih, self.w_hh, self.bias]
    }

    pub fn zero_state(&self, tape: &mut Tape) -> LstmState {
        LstmState {
            h: tape.constant(Mat::zeros((1, self.hidden))),
            c: tape.constant(Mat::zeros((1, self.hidden))),
        }
    }

    /// Input-side gate pre-activations for every row of `x` at once.
    pub fn input_gates(&self, tape: &mut Tape, x: Var) -> Var {
        tape.affine(x, self.w_ih, self.bias)
    }

    /// One recurrent step given this step's input-side pre-activations (`1 x 4h`).
    pub fn step(&self, tape: &mut Tape, input_gates: Var, state: LstmState) -> LstmState {
        let h = self.hidden;
        let rec = tape.matmul(state.h, self.w_hh);
        let gates = tape.add(input_gates, rec);
        let i = tape.slice_cols(gates, 0, h);
        let i = tape.sigmoid(i);
        let f = tape.slice_cols(gates, h, h);
        let f = tape.sigmoid(f);
        let g = tape.slice_cols(gates, 2 * h, h);
        let g = tape.tanh(g);
        let o = tape.slice_cols(gates, 3 * h, h);
        let o = tape.sigmoid(o);
        let keep = tape.mul(f, state.c);
        let write = tape.mul(i, g);
        let c = tape.add(keep, write);
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc);
        LstmState { h, c }
    }
}

/// A stack of bidirectional LSTM layers; each direction has width `hidden`
/// and layer outputs are the concatenation `[forward, backward]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BiLstm {
    pub layers: Vec<[LstmCell; 2]>,
}

#[derive(Clone, Debug)]
pub struct BiLstmVars {
    pub layers: Vec<[LstmCellVars; 2]>,
}

/// Sequence output of a [`BiLstm`] pass plus the final state of every
/// (layer, direction), indexed `[layer][direction]`.
#[derive(Clone, Debug)]
pub struct BiLstmOutput {
    pub output: Var,
    pub final_states: Vec<[LstmState; 2]>,
}

impl BiLstm {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, input: usize, hidden: usize, num_layers: usize) -> Self {
        let mut layers = Vec::with_capacity(num_layers);
        let mut width = input;
        for _ in 0..num_layers {
            layers.push([LstmCell::new(rng, width, hidden), LstmCell::new(rng, width, hidden)]);
            width = 2 * hidden;
        }
        Self { layers }
    }

    /// Per-direction width.
    pub fn hidden(&self) -> usize {
        self.layers[0][0].hidden()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0][0].w_ih.nrows()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BiLstmVars {
        BiLstmVars {
            layers: self
                .layers
                .iter()
                .map(|[f, b]| [f.bind(tape, trainable), b.bind(tape, trainable)])
                .collect(),
        }
    }
}

impl Parameters for BiLstm {
    fn named_params(&self) -> Vec<(String, &Mat)> {
        let mut out = Vec::new();
        for (l, cells) in self.layers.iter().enumerate() {
            for (dir, cell) in ["fwd", "bwd"].iter().zip(cells.iter()) {
                for (name, t) in cell.named_params() {
                    out.push((format!("l{l}.{dir}.{name}"), t));
                }
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Mat> {
        self.layers
            .iter_mut()
            .flat_map(|cells| cells.iter_mut())
            .flat_map(|c| c.params_mut())
            .collect()
    }
}

impl BiLstmVars {
    pub fn vars(&self) -> Vec<Var> {
        self.layers
            .iter()
            .flat_map(|cells| cells.iter())
            .flat_map(|c| c.vars())
            .collect()
    }

    /// Runs the full stack over `x` (`n x in`), starting every direction
    /// from the zero state.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> BiLstmOutput {
        let n = tape.shape(x).0;
        let mut input = x;
        let mut final_states = Vec::with_capacity(self.layers.len());
        for cells in &self.layers {
            let mut dir_outputs = Vec::with_capacity(2);
            let mut finals = Vec::with_capacity(2);
            for (dir, cell) in cells.iter().enumerate() {
                let gates = cell.input_gates(tape, input);
                let mut state = cell.zero_state(tape);
                let mut hs: Vec<Option<Var>> = vec![None; n];
                let order: Box<dyn Iterator<Item = usize>> = if dir == 0 {
                    Box::new(0..n)
                } else {
                    Box::new((0..n).rev())
                };
                for t in order {
                    let g = tape.row(gates, t);
                    state = cell.step(tape, g, state);
                    hs[t] = Some(state.h);
                }
                let rows: Vec<Var> = hs.into_iter().map(|h| h.expect("visited")).collect();
                dir_outputs.push(tape.stack_rows(&rows));
                finals.push(state);
            }
            input = tape.concat_cols(dir_outputs[0], dir_outputs[1]);
            final_states.push([finals[0], finals[1]]);
        }
        BiLstmOutput {
            output: input,
            final_states,
        }
    }
}
