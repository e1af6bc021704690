//! Standard LSTM cell over batches of independent instances.
//!
//! Gate rows are stacked in the order `[input, forget, candidate, output]`.
//! One row of the input/state matrices is one recurrent instance (one edge,
//! one person, or the group), so all instances sharing a parameter set advance
//! with a single pair of matrix products.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{BoundParams, Graph, ModelParams, Tensor, Var};

pub const FORGET_BIAS_INIT: f64 = 1.0;

/// Parameter values of one LSTM.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// 4H × D
    pub w_ih: Tensor,
    /// 4H × H
    pub w_hh: Tensor,
    /// 4H
    pub bias: Tensor,
}

impl LstmParams {
    /// Uniform weights in `[-1/√H, 1/√H]`, zero bias except the forget slice.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(Error::dim("LSTM input and hidden sizes must be positive"));
        }
        let k = 1.0 / (hidden as f64).sqrt();
        let mut uniform = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-k..=k)).collect() };
        let w_ih = Tensor::matrix(4 * hidden, input, uniform(4 * hidden * input))?;
        let w_hh = Tensor::matrix(4 * hidden, hidden, uniform(4 * hidden * hidden))?;
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].fill(FORGET_BIAS_INIT);
        Ok(LstmParams {
            w_ih,
            w_hh,
            bias: Tensor::vector(bias)?,
        })
    }

    pub fn zeros(input: usize, hidden: usize) -> Result<Self> {
        Ok(LstmParams {
            w_ih: Tensor::zeros(&[4 * hidden, input])?,
            w_hh: Tensor::zeros(&[4 * hidden, hidden])?,
            bias: Tensor::zeros(&[4 * hidden])?,
        })
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.shape()[1]
    }

    pub fn input(&self) -> usize {
        self.w_ih.shape()[1]
    }

    pub fn insert_into(self, params: &mut ModelParams, prefix: &str) {
        params.insert(format!("{prefix}.w_ih"), self.w_ih);
        params.insert(format!("{prefix}.w_hh"), self.w_hh);
        params.insert(format!("{prefix}.bias"), self.bias);
    }

    pub fn from_params(params: &ModelParams, prefix: &str) -> Result<Self> {
        Ok(LstmParams {
            w_ih: params.get(&format!("{prefix}.w_ih"))?.clone(),
            w_hh: params.get(&format!("{prefix}.w_hh"))?.clone(),
            bias: params.get(&format!("{prefix}.bias"))?.clone(),
        })
    }
}

/// LSTM parameters as graph variables.
#[derive(Debug, Clone, Copy)]
pub struct Lstm {
    w_ih: Var,
    w_hh: Var,
    bias: Var,
    input: usize,
    hidden: usize,
}

impl Lstm {
    pub fn bind(graph: &Graph, bound: &BoundParams, prefix: &str) -> Result<Self> {
        let w_ih = bound.get(&format!("{prefix}.w_ih"))?;
        let w_hh = bound.get(&format!("{prefix}.w_hh"))?;
        let bias = bound.get(&format!("{prefix}.bias"))?;
        let (gates, input) = match graph.shape(w_ih) {
            [g, d] => (*g, *d),
            s => return Err(Error::dim(format!("{prefix}.w_ih has shape {s:?}"))),
        };
        if gates % 4 != 0 {
            return Err(Error::dim(format!("{prefix}: {gates} gate rows is not a multiple of 4")));
        }
        let hidden = gates / 4;
        if graph.shape(w_hh) != [gates, hidden] || graph.shape(bias) != [gates] {
            return Err(Error::dim(format!(
                "{prefix}: inconsistent shapes {:?}, {:?}, {:?}",
                graph.shape(w_ih),
                graph.shape(w_hh),
                graph.shape(bias)
            )));
        }
        Ok(Lstm {
            w_ih,
            w_hh,
            bias,
            input,
            hidden,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input(&self) -> usize {
        self.input
    }

    /// All-zero state for `rows` instances.
    pub fn zero_state(&self, graph: &mut Graph, rows: usize) -> Result<LstmState> {
        let zeros = Tensor::zeros(&[rows, self.hidden])?;
        Ok(LstmState {
            h: graph.constant(zeros.clone()),
            c: graph.constant(zeros),
        })
    }

    /// One time step: `x` is rows × D, the state rows × H.
    pub fn step(&self, graph: &mut Graph, state: &LstmState, x: Var) -> Result<LstmState> {
        let rows = match graph.shape(x) {
            [r, d] if *d == self.input => *r,
            s => {
                return Err(Error::dim(format!(
                    "LSTM input has shape {s:?}, expected [rows, {}]",
                    self.input
                )))
            }
        };
        if graph.shape(state.h) != [rows, self.hidden] || graph.shape(state.c) != [rows, self.hidden] {
            return Err(Error::dim(format!(
                "LSTM state shape {:?} does not match [{rows}, {}]",
                graph.shape(state.h),
                self.hidden
            )));
        }
        let h = self.hidden;
        let from_x = graph.matmul_nt(x, self.w_ih)?;
        let from_h = graph.matmul_nt(state.h, self.w_hh)?;
        let pre = graph.add(from_x, from_h)?;
        let pre = graph.add(pre, self.bias)?;

        let i_pre = graph.slice_cols(pre, 0, h)?;
        let f_pre = graph.slice_cols(pre, h, h)?;
        let g_pre = graph.slice_cols(pre, 2 * h, h)?;
        let o_pre = graph.slice_cols(pre, 3 * h, h)?;
        let i = graph.sigmoid(i_pre);
        let f = graph.sigmoid(f_pre);
        let g = graph.tanh(g_pre);
        let o = graph.sigmoid(o_pre);

        let keep = graph.mul(f, state.c)?;
        let write = graph.mul(i, g)?;
        let c = graph.add(keep, write)?;
        let squashed = graph.tanh(c);
        let h = graph.mul(o, squashed)?;
        Ok(LstmState { h, c })
    }
}

/// Hidden and cell matrices (rows × H) of a batch of LSTM instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// Convenience single-step entry point over parameter values.
pub fn lstm_step(
    graph: &mut Graph,
    params: &BoundParams,
    prefix: &str,
    state: &LstmState,
    x: Var,
) -> Result<LstmState> {
    let cell = Lstm::bind(graph, params, prefix)?;
    cell.step(graph, state, x)
}
