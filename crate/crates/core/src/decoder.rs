//! LSTM decoder over keywords and schema headers with attention context,
//! a copy switch over the previous query, and beam search.

use std::cmp::Ordering;

use ctxparse_autodiff::nn::{bilstm, lstm_cell, BiLstmParams, Linear, LstmParams};
use ctxparse_autodiff::{AutodiffError, ParamId, ParamStore, Rng, Tape, Var};
use thiserror::Error;

use crate::context_rep::dattn;
use crate::corpus::{num_keywords, OutputToken};
use crate::INIT_BOUND;

pub const DEFAULT_BEAM_SIZE: usize = 10;
pub const DEFAULT_MAX_LEN: usize = 60;

#[derive(Debug, Error)]
pub enum DecoderError {
    #[error("no previous query to copy from")]
    NoPreviousQuery,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderParams {
    pub keyword_embedding: ParamId,
    pub lstm: LstmParams,
    pub attn_utterance: ParamId,
    pub attn_schema: ParamId,
    pub attn_query: Option<ParamId>,
    pub w_o: Linear,
    pub w_sql: Linear,
    pub w_column: ParamId,
    pub query_encoder: Option<BiLstmParams>,
    pub w_copy: Option<Linear>,
    pub width: usize,
}

impl DecoderParams {
    /// `width` is the state width of tokens, headers and the decoder.
    pub fn new(store: &mut ParamStore, width: usize, editing: bool, rng: &mut Rng) -> Self {
        let context = if editing { 3 * width } else { 2 * width };
        DecoderParams {
            keyword_embedding: store.add_uniform("dec.keyword_embedding", num_keywords(), width, INIT_BOUND, rng),
            lstm: LstmParams::new(store, "dec.lstm", width + context, width, INIT_BOUND, rng),
            attn_utterance: store.add_uniform("dec.attn_utterance", width, width, INIT_BOUND, rng),
            attn_schema: store.add_uniform("dec.attn_schema", width, width, INIT_BOUND, rng),
            attn_query: editing.then(|| store.add_uniform("dec.attn_query", width, width, INIT_BOUND, rng)),
            w_o: Linear::new(store, "dec.w_o", width + context, width, false, INIT_BOUND, rng),
            w_sql: Linear::new(store, "dec.w_sql", width, num_keywords(), true, INIT_BOUND, rng),
            w_column: store.add_uniform("dec.w_column", width, width, INIT_BOUND, rng),
            query_encoder: editing
                .then(|| BiLstmParams::new(store, "dec.query_encoder", width, width / 2, INIT_BOUND, rng)),
            w_copy: editing.then(|| Linear::new(store, "dec.w_copy", context, 1, true, INIT_BOUND, rng)),
            width,
        }
    }

    pub fn editing(&self) -> bool {
        self.attn_query.is_some()
    }

    pub fn context_width(&self) -> usize {
        if self.editing() {
            3 * self.width
        } else {
            2 * self.width
        }
    }
}

/// Encoded previous query: its tokens and one state per token.
#[derive(Debug, Clone)]
pub struct PreviousQuery {
    pub tokens: Vec<OutputToken>,
    pub states: Var,
}

/// Attention targets for one turn.
#[derive(Debug, Clone)]
pub struct DecoderInputs {
    pub h_u: Var,
    pub h_s: Var,
    pub previous: Option<PreviousQuery>,
}

impl DecoderInputs {
    pub fn num_headers(&self, tape: &Tape) -> usize {
        tape.shape(self.h_s)[0]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
    pub context: Var,
}

/// Scores produced after one decoder step.
#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    /// Logits over `keywords ++ headers`.
    pub logits: Var,
    /// Copy probability, `1 × 1`; absent when nothing can be copied.
    pub p_copy: Option<Var>,
    /// Attention over the previous query's tokens.
    pub copy_alpha: Option<Var>,
}

/// Embedding of an output token: keyword table row or the header's state.
pub fn token_embedding(tape: &mut Tape, p: &DecoderParams, inputs: &DecoderInputs, token: OutputToken) -> Result<Var, AutodiffError> {
    match token {
        OutputToken::Keyword(k) => tape.param_rows(p.keyword_embedding, &[k]),
        OutputToken::Header(h) => tape.row(inputs.h_s, h),
    }
}

/// Bi-LSTM states over the embeddings of a previous query.
pub fn encode_prev_sql(
    tape: &mut Tape,
    p: &DecoderParams,
    inputs: &DecoderInputs,
    tokens: &[OutputToken],
) -> Result<Option<PreviousQuery>, AutodiffError> {
    let Some(encoder) = p.query_encoder else {
        return Ok(None);
    };
    if tokens.is_empty() {
        return Ok(None);
    }
    let rows = tokens
        .iter()
        .map(|&t| token_embedding(tape, p, inputs, t))
        .collect::<Result<Vec<_>, _>>()?;
    let xs = tape.concat_rows(&rows)?;
    let states = bilstm(tape, xs, &encoder)?.states;
    Ok(Some(PreviousQuery {
        tokens: tokens.to_vec(),
        states,
    }))
}

/// `[Attn(h, h_u) ; Attn(h, h_s) (; Attn(h, prev))]` and the attention over
/// the previous query when present.
pub fn compute_context(
    tape: &mut Tape,
    p: &DecoderParams,
    h: Var,
    inputs: &DecoderInputs,
) -> Result<(Var, Option<Var>), AutodiffError> {
    let (c_u, _) = dattn(tape, p.attn_utterance, h, inputs.h_u, None)?;
    let (c_s, _) = dattn(tape, p.attn_schema, h, inputs.h_s, None)?;
    let Some(attn_query) = p.attn_query else {
        return Ok((tape.concat_cols(&[c_u, c_s])?, None));
    };
    match &inputs.previous {
        Some(prev) => {
            let (c_q, alpha) = dattn(tape, attn_query, h, prev.states, None)?;
            Ok((tape.concat_cols(&[c_u, c_s, c_q])?, Some(alpha)))
        }
        None => {
            let c_q = tape.zeros(1, p.width);
            Ok((tape.concat_cols(&[c_u, c_s, c_q])?, None))
        }
    }
}

/// Logits `[o W_sql + b ; o W_column h_s^T]` with `o = tanh([h ; c] W_o)`.
pub fn output_logits(tape: &mut Tape, p: &DecoderParams, h: Var, context: Var, h_s: Var) -> Result<Var, AutodiffError> {
    let hc = tape.concat_cols(&[h, context])?;
    let o = p.w_o.forward(tape, hc)?;
    let o = tape.tanh(o);
    let m_sql = p.w_sql.forward(tape, o)?;
    let w_col = tape.param(p.w_column);
    let ow = tape.matmul(o, w_col)?;
    let m_col = tape.matmul_nt(ow, h_s)?;
    tape.concat_cols(&[m_sql, m_col])
}

/// Softmax over the joint keyword/header space.
pub fn output_distribution(tape: &mut Tape, p: &DecoderParams, h: Var, context: Var, h_s: Var) -> Result<Var, AutodiffError> {
    let logits = output_logits(tape, p, h, context, h_s)?;
    Ok(tape.softmax_rows(logits))
}

/// `[p_copy * P_prev ; (1 - p_copy) * P_gen]`, laid out as generation
/// entries first, then one entry per previous-query position.
pub fn edit_mixture(tape: &mut Tape, p_copy: Var, p_prev: Var, p_gen: Var) -> Result<Var, AutodiffError> {
    let keep = tape.one_minus(p_copy);
    let gen = tape.mul_scalar(p_gen, keep)?;
    let copy = tape.mul_scalar(p_prev, p_copy)?;
    tape.concat_cols(&[gen, copy])
}

pub fn initial_state(tape: &mut Tape, p: &DecoderParams) -> DecoderState {
    DecoderState {
        h: tape.zeros(1, p.width),
        c: tape.zeros(1, p.width),
        context: tape.zeros(1, p.context_width()),
    }
}

/// Feeds `prev` (the last emitted token, or end-of-sequence at the start)
/// and scores the next token.
pub fn step(
    tape: &mut Tape,
    p: &DecoderParams,
    inputs: &DecoderInputs,
    state: &DecoderState,
    prev: OutputToken,
) -> Result<(DecoderState, StepOutput), AutodiffError> {
    let q = token_embedding(tape, p, inputs, prev)?;
    let x = tape.concat_cols(&[q, state.context])?;
    let (h, c) = lstm_cell(tape, x, state.h, state.c, &p.lstm)?;
    let (context, copy_alpha) = compute_context(tape, p, h, inputs)?;
    let logits = output_logits(tape, p, h, context, inputs.h_s)?;
    let p_copy = match (p.w_copy, copy_alpha) {
        (Some(w), Some(_)) => {
            let s = w.forward(tape, context)?;
            Some(tape.sigmoid(s))
        }
        _ => None,
    };
    Ok((DecoderState { h, c, context }, StepOutput { logits, p_copy, copy_alpha }))
}

/// Probability of each joint token id after merging copy mass onto the
/// tokens of the previous query.
pub fn token_probabilities(tape: &Tape, out: &StepOutput, previous: Option<&PreviousQuery>) -> Vec<f64> {
    let mut probs = ctxparse_autodiff::softmax(tape.value(out.logits).values());
    if let (Some(pc), Some(alpha), Some(prev)) = (out.p_copy, out.copy_alpha, previous) {
        let pc = tape.value(pc).values()[0];
        for x in probs.iter_mut() {
            *x *= 1.0 - pc;
        }
        for (a, t) in tape.value(alpha).values().iter().zip(&prev.tokens) {
            probs[t.joint_id()] += pc * a;
        }
    }
    probs
}

/// Negative log-likelihood of `target` after one step.
pub fn step_loss(
    tape: &mut Tape,
    out: &StepOutput,
    previous: Option<&PreviousQuery>,
    target: OutputToken,
) -> Result<Var, AutodiffError> {
    let (Some(pc), Some(alpha), Some(prev)) = (out.p_copy, out.copy_alpha, previous) else {
        return tape.cross_entropy(out.logits, &[target.joint_id()]);
    };
    let p_gen = tape.softmax_rows(out.logits);
    let mixed = edit_mixture(tape, pc, alpha, p_gen)?;
    let gen_len = tape.shape(p_gen)[1];
    let mut parts = vec![tape.pick(mixed, 0, target.joint_id())?];
    for (i, t) in prev.tokens.iter().enumerate() {
        if *t == target {
            parts.push(tape.pick(mixed, 0, gen_len + i)?);
        }
    }
    let prob = tape.sum_scalars(&parts)?;
    let prob = tape.clamp_min(prob, f64::MIN_POSITIVE);
    let log = tape.log(prob);
    Ok(tape.scale(log, -1.0))
}

/// Teacher-forced loss of `target` (which should end with end-of-sequence).
pub fn sequence_loss(
    tape: &mut Tape,
    p: &DecoderParams,
    inputs: &DecoderInputs,
    target: &[OutputToken],
) -> Result<Var, AutodiffError> {
    let mut state = initial_state(tape, p);
    let mut prev = OutputToken::EOS;
    let mut losses = Vec::with_capacity(target.len());
    for &t in target {
        let (next, out) = step(tape, p, inputs, &state, prev)?;
        losses.push(step_loss(tape, &out, inputs.previous.as_ref(), t)?);
        state = next;
        prev = t;
    }
    tape.sum_scalars(&losses)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamCandidate {
    pub tokens: Vec<usize>,
    pub score: f64,
    pub finished: bool,
}

/// Incremental scorer driven by [`beam_search`].
pub trait BeamModel {
    type State: Clone;
    fn eos(&self) -> usize;
    /// Initial state and log-probabilities of the first token.
    fn start(&mut self) -> (Self::State, Vec<f64>);
    /// State after emitting `token`, and log-probabilities of the next one.
    fn advance(&mut self, state: &Self::State, token: usize) -> (Self::State, Vec<f64>);
}

/// Higher score first, then lexicographically smaller token ids.
fn rank(a_score: f64, a_tokens: &[usize], b_score: f64, b_tokens: &[usize]) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_tokens.cmp(b_tokens))
}

/// Tokens, score, model state and next-token log-probabilities.
type Hypothesis<S> = (Vec<usize>, f64, S, Vec<f64>);

/// Beam search with raw summed log-probabilities. Candidates that hit
/// `max_len` without end-of-sequence are returned unfinished.
pub fn beam_search<M: BeamModel>(model: &mut M, beam_size: usize, max_len: usize) -> Vec<BeamCandidate> {
    let beam_size = beam_size.max(1);
    let eos = model.eos();
    let (state, logp) = model.start();
    let mut active: Vec<Hypothesis<M::State>> = vec![(Vec::new(), 0.0, state, logp)];
    let mut finished: Vec<BeamCandidate> = Vec::new();
    for _ in 0..max_len.max(1) {
        let mut expansions: Vec<(f64, Vec<usize>, usize)> = Vec::new();
        for (a, (tokens, score, _, logp)) in active.iter().enumerate() {
            for (tok, lp) in logp.iter().enumerate() {
                if lp.is_finite() {
                    let mut seq = tokens.clone();
                    seq.push(tok);
                    expansions.push((score + lp, seq, a));
                }
            }
        }
        expansions.sort_by(|x, y| rank(x.0, &x.1, y.0, &y.1));
        expansions.truncate(beam_size);
        let mut next = Vec::with_capacity(expansions.len());
        for (score, seq, parent) in expansions {
            let last = *seq.last().expect("nonempty expansion");
            if last == eos {
                finished.push(BeamCandidate {
                    tokens: seq,
                    score,
                    finished: true,
                });
            } else {
                let (state, logp) = model.advance(&active[parent].2, last);
                next.push((seq, score, state, logp));
            }
        }
        active = next;
        if active.is_empty() {
            break;
        }
        if finished.len() >= beam_size {
            let mut scores: Vec<f64> = finished.iter().map(|c| c.score).collect();
            scores.sort_by(|a, b| b.total_cmp(a));
            let best_active = active.iter().map(|a| a.1).fold(f64::NEG_INFINITY, f64::max);
            if scores[beam_size - 1] >= best_active {
                active.clear();
                break;
            }
        }
    }
    finished.extend(active.into_iter().map(|(tokens, score, _, _)| BeamCandidate {
        tokens,
        score,
        finished: false,
    }));
    finished.sort_by(|a, b| rank(a.score, &a.tokens, b.score, &b.tokens));
    finished.truncate(beam_size);
    finished
}

/// Decoder over one turn's tape, adapted for [`beam_search`].
pub struct TapeDecoder<'a, 't, 'p> {
    pub tape: &'t mut Tape<'p>,
    pub params: &'a DecoderParams,
    pub inputs: &'a DecoderInputs,
}

impl TapeDecoder<'_, '_, '_> {
    fn scores(&mut self, state: &DecoderState, prev: OutputToken) -> (DecoderState, Vec<f64>) {
        let (next, out) = step(self.tape, self.params, self.inputs, state, prev).expect("decoder shapes are fixed at construction");
        let probs = token_probabilities(self.tape, &out, self.inputs.previous.as_ref());
        (next, probs.into_iter().map(f64::ln).collect())
    }
}

impl BeamModel for TapeDecoder<'_, '_, '_> {
    type State = DecoderState;

    fn eos(&self) -> usize {
        OutputToken::EOS.joint_id()
    }

    fn start(&mut self) -> (DecoderState, Vec<f64>) {
        let init = initial_state(self.tape, self.params);
        self.scores(&init, OutputToken::EOS)
    }

    fn advance(&mut self, state: &DecoderState, token: usize) -> (DecoderState, Vec<f64>) {
        self.scores(state, OutputToken::from_joint_id(token))
    }
}

/// Turns a beam candidate into output tokens without the trailing
/// end-of-sequence.
pub fn candidate_tokens(candidate: &BeamCandidate) -> Vec<OutputToken> {
    candidate
        .tokens
        .iter()
        .map(|&t| OutputToken::from_joint_id(t))
        .filter(|&t| t != OutputToken::EOS)
        .collect()
}
