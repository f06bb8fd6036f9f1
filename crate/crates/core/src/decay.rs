//! Memory decay weights over history tokens: learned gates or fixed
//! schedules, at token and utterance granularity.

use ctxparse_autodiff::nn::Linear;
use ctxparse_autodiff::{AutodiffError, ParamStore, Rng, Tape, Tensor, Var};
use thiserror::Error;

use crate::INIT_BOUND;

pub const DEFAULT_FLOOR: f64 = 0.8;

#[derive(Debug, Error)]
pub enum DecayError {
    #[error("invalid schedule {0}")]
    InvalidSchedule(String),
    #[error("decay config: {0}")]
    Config(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    /// `k - c*t`
    Linear { k: f64, c: f64 },
    /// `k^t`, `k < 1`
    Exponential { k: f64 },
    /// `k / (k + exp(t/k))`, `k >= 1`
    InverseSigmoid { k: f64 },
}

impl Schedule {
    pub fn validate(&self) -> Result<(), DecayError> {
        match *self {
            Schedule::Linear { k, c } if !k.is_finite() || !c.is_finite() || c < 0.0 => Err(
                DecayError::InvalidSchedule(format!("linear(k={k}, c={c}) needs finite k and c >= 0")),
            ),
            Schedule::Exponential { k } if !(k > 0.0 && k < 1.0) => Err(DecayError::InvalidSchedule(
                format!("exponential(k={k}) needs 0 < k < 1"),
            )),
            Schedule::InverseSigmoid { k } if !(k >= 1.0 && k.is_finite()) => Err(
                DecayError::InvalidSchedule(format!("inverse_sigmoid(k={k}) needs k >= 1")),
            ),
            _ => Ok(()),
        }
    }

    pub fn raw(&self, t: usize) -> f64 {
        let t = t as f64;
        match *self {
            Schedule::Linear { k, c } => k - c * t,
            Schedule::Exponential { k } => k.powf(t),
            Schedule::InverseSigmoid { k } => k / (k + (t / k).exp()),
        }
    }
}

/// Schedule weight at distance `t`, clamped into `[floor, 1]`.
pub fn schedule_decay(schedule: &Schedule, t: usize, floor: f64) -> Result<f64, DecayError> {
    schedule.validate()?;
    Ok(schedule.raw(t).max(floor).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayLevel {
    /// No decay: every weight is 1.
    Off,
    Token,
    Utterance,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayKind {
    Gate,
    Schedule,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelConfig {
    pub kind: DecayKind,
    pub schedule: Schedule,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayConfig {
    pub level: DecayLevel,
    pub token: LevelConfig,
    pub utterance: LevelConfig,
    pub floor: f64,
    /// Weight of the token level when `level` is `Both`.
    pub lambda: f64,
}

impl Default for DecayConfig {
    fn default() -> Self {
        DecayConfig {
            level: DecayLevel::Utterance,
            token: LevelConfig {
                kind: DecayKind::Schedule,
                schedule: Schedule::InverseSigmoid { k: 1.0 },
            },
            utterance: LevelConfig {
                kind: DecayKind::Schedule,
                schedule: Schedule::Linear { k: 1.0, c: 0.1 },
            },
            floor: DEFAULT_FLOOR,
            lambda: 0.5,
        }
    }
}

impl DecayConfig {
    pub fn off() -> Self {
        DecayConfig {
            level: DecayLevel::Off,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), DecayError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(DecayError::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.floor > 0.0 && self.floor <= 1.0) {
            return Err(DecayError::Config(format!("floor {} outside (0, 1]", self.floor)));
        }
        self.token.schedule.validate()?;
        self.utterance.schedule.validate()
    }

    fn uses(&self, level: DecayLevel) -> bool {
        self.level == level || (self.level == DecayLevel::Both && level != DecayLevel::Off)
    }

    pub fn needs_token_gate(&self) -> bool {
        self.uses(DecayLevel::Token) && self.token.kind == DecayKind::Gate
    }

    pub fn needs_utterance_gate(&self) -> bool {
        self.uses(DecayLevel::Utterance) && self.utterance.kind == DecayKind::Gate
    }
}

/// `sigmoid(V relu(U h))` per row of `h`.
#[derive(Debug, Clone, Copy)]
pub struct GateParams {
    pub u: Linear,
    pub v: Linear,
}

impl GateParams {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut Rng) -> Self {
        GateParams {
            u: Linear::new(store, &format!("{name}.u"), input, hidden, false, INIT_BOUND, rng),
            v: Linear::new(store, &format!("{name}.v"), hidden, 1, false, INIT_BOUND, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, h: Var) -> Result<Var, AutodiffError> {
        let hidden = self.u.forward(tape, h)?;
        let hidden = tape.relu(hidden);
        let score = self.v.forward(tape, hidden)?;
        Ok(tape.sigmoid(score))
    }
}

/// Token-level gate weight for each row of `token_states`.
pub fn gate_token_decay(tape: &mut Tape, token_states: Var, gate: &GateParams) -> Result<Var, AutodiffError> {
    gate.forward(tape, token_states)
}

/// Utterance-level gate weight for each row of `interaction_states`.
pub fn gate_utterance_decay(
    tape: &mut Tape,
    interaction_states: Var,
    gate: &GateParams,
) -> Result<Var, AutodiffError> {
    gate.forward(tape, interaction_states)
}

/// Where each history token sits, needed for schedule distances.
#[derive(Debug, Clone)]
pub struct DecayLayout<'a> {
    /// Zero-based turn of each token node.
    pub turn_of_token: &'a [usize],
    /// Position of each token in the current turn's concatenated input.
    pub positions: &'a [usize],
    pub current_turn: usize,
    /// Position of the current turn's first token.
    pub current_start: usize,
    pub num_headers: usize,
}

/// `m = [m_iu ; m_s]`; header weights are always 1.
#[derive(Debug, Clone, Copy)]
pub struct DecayVector {
    /// `num_tokens × 1`.
    pub m_iu: Var,
    pub num_tokens: usize,
    pub num_headers: usize,
}

impl DecayVector {
    pub fn len(&self) -> usize {
        self.num_tokens + self.num_headers
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Full `len × 1` column, headers last.
    pub fn full(&self, tape: &mut Tape) -> Result<Var, AutodiffError> {
        let ones = tape.constant(Tensor::filled(self.num_headers, 1, 1.0));
        tape.concat_rows(&[self.m_iu, ones])
    }

    pub fn values(&self, tape: &Tape) -> Vec<f64> {
        let mut v = tape.value(self.m_iu).values().to_vec();
        v.extend(std::iter::repeat_n(1.0, self.num_headers));
        v
    }
}

/// Encoder quantities the gates read.
#[derive(Debug, Clone, Copy)]
pub struct GateInputs<'a> {
    /// `num_tokens × d` token states.
    pub token_states: Var,
    /// `num_turns × h` interaction states, one row per turn.
    pub interaction_states: Var,
    pub token_gate: Option<&'a GateParams>,
    pub utterance_gate: Option<&'a GateParams>,
}

fn level_weights(
    tape: &mut Tape,
    layout: &DecayLayout,
    cfg: &LevelConfig,
    floor: f64,
    token_level: bool,
    gates: &GateInputs,
) -> Result<Var, DecayError> {
    let n = layout.turn_of_token.len();
    match cfg.kind {
        DecayKind::Schedule => {
            let mut w = Vec::with_capacity(n);
            for k in 0..n {
                let t = if token_level {
                    layout.current_start.saturating_sub(layout.positions[k])
                } else {
                    layout.current_turn - layout.turn_of_token[k]
                };
                w.push(schedule_decay(&cfg.schedule, t, floor)?);
            }
            Ok(tape.constant(Tensor::column_vector(w)))
        }
        DecayKind::Gate => {
            let raw = if token_level {
                let gate = gates
                    .token_gate
                    .ok_or_else(|| DecayError::Config("token gate parameters missing".into()))?;
                gate_token_decay(tape, gates.token_states, gate)?
            } else {
                let gate = gates
                    .utterance_gate
                    .ok_or_else(|| DecayError::Config("utterance gate parameters missing".into()))?;
                let per_turn = gate_utterance_decay(tape, gates.interaction_states, gate)?;
                let turns = tape.value(per_turn).rows();
                let mut select = Tensor::zeros(n, turns);
                for (k, &turn) in layout.turn_of_token.iter().enumerate() {
                    select.set(k, turn, 1.0);
                }
                let select = tape.constant(select);
                tape.matmul(select, per_turn)?
            };
            let floored = tape.clamp_min(raw, floor);
            // Current-turn tokens are not decayed.
            let history: Vec<f64> = layout
                .turn_of_token
                .iter()
                .map(|&t| if t < layout.current_turn { 1.0 } else { 0.0 })
                .collect();
            let keep = tape.constant(Tensor::column_vector(history.iter().map(|h| 1.0 - h).collect()));
            let history = tape.constant(Tensor::column_vector(history));
            let decayed = tape.mul(floored, history)?;
            Ok(tape.add(decayed, keep)?)
        }
    }
}

/// Builds the decay vector for the current turn.
pub fn assemble_decay(
    tape: &mut Tape,
    config: &DecayConfig,
    layout: &DecayLayout,
    gates: &GateInputs,
) -> Result<DecayVector, DecayError> {
    config.validate()?;
    let n = layout.turn_of_token.len();
    let m_iu = match config.level {
        DecayLevel::Off => tape.constant(Tensor::filled(n, 1, 1.0)),
        DecayLevel::Token => level_weights(tape, layout, &config.token, config.floor, true, gates)?,
        DecayLevel::Utterance => level_weights(tape, layout, &config.utterance, config.floor, false, gates)?,
        DecayLevel::Both => {
            let tok = level_weights(tape, layout, &config.token, config.floor, true, gates)?;
            let utt = level_weights(tape, layout, &config.utterance, config.floor, false, gates)?;
            let tok = tape.scale(tok, config.lambda);
            let utt = tape.scale(utt, 1.0 - config.lambda);
            tape.add(tok, utt)?
        }
    };
    Ok(DecayVector {
        m_iu,
        num_tokens: n,
        num_headers: layout.num_headers,
    })
}
