//! Recurrent and dense building blocks assembled from tape primitives.

use rand_chacha::ChaCha8Rng;

use crate::{AutodiffError, ParamId, ParamStore, Tape, Var};

/// Affine map `x W + b` applied row-wise.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        init_bound: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), input, output, init_bound, rng);
        let bias = bias.then(|| store.add_uniform(format!("{name}.bias"), 1, output, init_bound, rng));
        Linear { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
        let w = tape.param(self.weight);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(b);
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Weights of one LSTM direction. Gate column order is input, forget,
/// candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl LstmParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_size: usize,
        hidden_size: usize,
        init_bound: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let gates = 4 * hidden_size;
        LstmParams {
            w_input: store.add_uniform(format!("{name}.w_input"), input_size, gates, init_bound, rng),
            w_hidden: store.add_uniform(format!("{name}.w_hidden"), hidden_size, gates, init_bound, rng),
            bias: store.add_uniform(format!("{name}.bias"), 1, gates, init_bound, rng),
            input_size,
            hidden_size,
        }
    }
}

fn check_width(
    tape: &Tape,
    op: &'static str,
    v: Var,
    expected: usize,
) -> Result<(), AutodiffError> {
    let shape = tape.shape(v);
    if shape[1] != expected {
        return Err(AutodiffError::ShapeMismatch {
            op,
            left: shape.to_vec(),
            right: vec![expected],
        });
    }
    Ok(())
}

fn lstm_gates_step(
    tape: &mut Tape,
    projected_x: Var,
    h_prev: Var,
    c_prev: Var,
    p: &LstmParams,
) -> Result<(Var, Var), AutodiffError> {
    let hs = p.hidden_size;
    let wh = tape.param(p.w_hidden);
    let hproj = tape.matmul(h_prev, wh)?;
    let pre = tape.add(projected_x, hproj)?;
    let gates = tape.split_cols(pre, &[hs, hs, hs, hs])?;
    let i = tape.sigmoid(gates[0]);
    let f = tape.sigmoid(gates[1]);
    let g = tape.tanh(gates[2]);
    let o = tape.sigmoid(gates[3]);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// One LSTM step on a `1 x input` row.
pub fn lstm_cell(
    tape: &mut Tape,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    p: &LstmParams,
) -> Result<(Var, Var), AutodiffError> {
    check_width(tape, "lstm_cell.x", x, p.input_size)?;
    check_width(tape, "lstm_cell.h", h_prev, p.hidden_size)?;
    check_width(tape, "lstm_cell.c", c_prev, p.hidden_size)?;
    let wx = tape.param(p.w_input);
    let b = tape.param(p.bias);
    let xp = tape.matmul(x, wx)?;
    let xp = tape.add(xp, b)?;
    lstm_gates_step(tape, xp, h_prev, c_prev, p)
}

/// Runs an LSTM over the rows of `xs`; returns `(h, c)` per step.
pub fn lstm_sequence(
    tape: &mut Tape,
    xs: Var,
    p: &LstmParams,
    initial: Option<(Var, Var)>,
    reverse: bool,
) -> Result<Vec<(Var, Var)>, AutodiffError> {
    check_width(tape, "lstm_sequence", xs, p.input_size)?;
    let n = tape.shape(xs)[0];
    let wx = tape.param(p.w_input);
    let b = tape.param(p.bias);
    let proj = tape.matmul(xs, wx)?;
    let proj = tape.add_row(proj, b)?;
    let (mut h, mut c) = match initial {
        Some(s) => s,
        None => (tape.zeros(1, p.hidden_size), tape.zeros(1, p.hidden_size)),
    };
    let mut out = vec![(h, c); n];
    let order: Vec<usize> = if reverse {
        (0..n).rev().collect()
    } else {
        (0..n).collect()
    };
    for t in order {
        let xp = tape.row(proj, t)?;
        (h, c) = lstm_gates_step(tape, xp, h, c, p)?;
        out[t] = (h, c);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct BiLstmParams {
    pub forward: LstmParams,
    pub backward: LstmParams,
}

impl BiLstmParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_size: usize,
        hidden_size: usize,
        init_bound: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        BiLstmParams {
            forward: LstmParams::new(store, &format!("{name}.fwd"), input_size, hidden_size, init_bound, rng),
            backward: LstmParams::new(store, &format!("{name}.bwd"), input_size, hidden_size, init_bound, rng),
        }
    }

    pub fn output_size(&self) -> usize {
        self.forward.hidden_size + self.backward.hidden_size
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BiLstmOutput {
    /// Per-step `[forward ; backward]` states, `n x 2h`.
    pub states: Var,
    /// `[forward state at the last step ; backward state at the first step]`.
    pub summary: Var,
}

pub fn bilstm(tape: &mut Tape, xs: Var, p: &BiLstmParams) -> Result<BiLstmOutput, AutodiffError> {
    let n = tape.shape(xs)[0];
    if n == 0 {
        return Err(AutodiffError::EmptyInput("bilstm"));
    }
    let fwd = lstm_sequence(tape, xs, &p.forward, None, false)?;
    let bwd = lstm_sequence(tape, xs, &p.backward, None, true)?;
    let mut rows = Vec::with_capacity(n);
    for t in 0..n {
        rows.push(tape.concat_cols(&[fwd[t].0, bwd[t].0])?);
    }
    let states = tape.concat_rows(&rows)?;
    let summary = tape.concat_cols(&[fwd[n - 1].0, bwd[0].0])?;
    Ok(BiLstmOutput { states, summary })
}
