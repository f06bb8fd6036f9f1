//! Utterance, interaction and schema encoders over the concatenated input
//! `[CLS] x_1 … x_i [SEP] s_1 [SEP] … s_m [SEP]`.

use std::collections::BTreeMap;
use std::path::Path;

use ctxparse_autodiff::nn::{bilstm, lstm_sequence, BiLstmParams, LstmParams};
use ctxparse_autodiff::{AutodiffError, ParamId, ParamStore, Rng, Tape, Tensor, Var};
use thiserror::Error;

use crate::corpus::{SchemaHeader, Vocab, CLS, SEP};
use crate::INIT_BOUND;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("precomputed embeddings for `{example}`: expected {expected_len}x{expected_dim}, found {found_len}x{found_dim}")]
    DimensionMismatch {
        example: String,
        expected_len: usize,
        expected_dim: usize,
        found_len: usize,
        found_dim: usize,
    },
    #[error("no precomputed embeddings for example `{0}`")]
    MissingExample(String),
    #[error("header {0} has no tokens")]
    EmptyHeader(usize),
    #[error("precomputed embedding file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Positions of every turn token and header token in the concatenated input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputLayout {
    pub symbols: Vec<String>,
    pub turn_positions: Vec<Vec<usize>>,
    pub header_positions: Vec<Vec<usize>>,
}

impl InputLayout {
    pub fn new(turns: &[Vec<String>], headers: &[SchemaHeader]) -> Self {
        let mut symbols = vec![CLS.to_string()];
        let mut turn_positions = Vec::with_capacity(turns.len());
        for turn in turns {
            turn_positions.push((symbols.len()..symbols.len() + turn.len()).collect());
            symbols.extend(turn.iter().cloned());
        }
        symbols.push(SEP.to_string());
        let mut header_positions = Vec::with_capacity(headers.len());
        for header in headers {
            header_positions.push((symbols.len()..symbols.len() + header.tokens.len()).collect());
            symbols.extend(header.tokens.iter().cloned());
            symbols.push(SEP.to_string());
        }
        InputLayout {
            symbols,
            turn_positions,
            header_positions,
        }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Positions of all turn tokens, turn by turn.
    pub fn token_positions(&self) -> Vec<usize> {
        self.turn_positions.iter().flatten().copied().collect()
    }
}

/// Source of the per-position input vectors.
#[derive(Debug, Clone)]
pub enum EmbeddingProvider {
    /// Trainable word table indexed by vocabulary id.
    Lookup { table: ParamId, dim: usize },
    /// Externally computed vectors, one matrix per example id.
    Precomputed {
        dim: usize,
        records: BTreeMap<String, Tensor>,
    },
}

impl EmbeddingProvider {
    pub fn lookup(store: &mut ParamStore, name: &str, vocab_size: usize, dim: usize, rng: &mut Rng) -> Self {
        let table = store.add_uniform(name, vocab_size, dim, INIT_BOUND, rng);
        EmbeddingProvider::Lookup { table, dim }
    }

    /// Parses records `id<TAB>len<TAB>dim<TAB>v v v …` (row-major values).
    pub fn parse_precomputed(text: &str) -> Result<Self, EncoderError> {
        let mut records = BTreeMap::new();
        let mut dim = None;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| EncoderError::Parse { line: line_no, message };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(err(format!("expected 4 tab-separated fields, found {}", fields.len())));
            }
            let len: usize = fields[1].parse().map_err(|e| err(format!("length: {e}")))?;
            let d: usize = fields[2].parse().map_err(|e| err(format!("dimension: {e}")))?;
            let values = fields[3]
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| err(format!("value: {e}")))?;
            if *dim.get_or_insert(d) != d {
                return Err(err(format!("dimension {d} differs from earlier records")));
            }
            let tensor = Tensor::from_vec(len, d, values).map_err(|e| err(e.to_string()))?;
            records.insert(fields[0].to_string(), tensor);
        }
        let dim = dim.ok_or(EncoderError::Parse {
            line: 0,
            message: "no records".into(),
        })?;
        Ok(EmbeddingProvider::Precomputed { dim, records })
    }

    pub fn load_precomputed(path: &Path) -> Result<Self, EncoderError> {
        Self::parse_precomputed(&std::fs::read_to_string(path)?)
    }

    pub fn dimension(&self) -> usize {
        match self {
            EmbeddingProvider::Lookup { dim, .. } | EmbeddingProvider::Precomputed { dim, .. } => *dim,
        }
    }

    /// Whether vectors depend on the whole layout (and so must be
    /// recomputed for every turn).
    pub fn is_contextual(&self) -> bool {
        matches!(self, EmbeddingProvider::Precomputed { .. })
    }

    /// One row per layout position.
    pub fn embed(&self, tape: &mut Tape, vocab: &Vocab, example: &str, layout: &InputLayout) -> Result<Var, EncoderError> {
        match self {
            EmbeddingProvider::Lookup { table, .. } => Ok(tape.param_rows(*table, &vocab.ids(&layout.symbols))?),
            EmbeddingProvider::Precomputed { dim, records } => {
                let t = records
                    .get(example)
                    .ok_or_else(|| EncoderError::MissingExample(example.to_string()))?;
                if t.rows() != layout.len() || t.cols() != *dim {
                    return Err(EncoderError::DimensionMismatch {
                        example: example.to_string(),
                        expected_len: layout.len(),
                        expected_dim: *dim,
                        found_len: t.rows(),
                        found_dim: t.cols(),
                    });
                }
                Ok(tape.constant(t.clone()))
            }
        }
    }
}

/// Example id used to key precomputed embeddings.
pub fn example_id(interaction: usize, turn: usize) -> String {
    format!("{interaction}:{turn}")
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderParams {
    /// Utterance Bi-LSTM over token vectors.
    pub utterance: BiLstmParams,
    /// Interaction LSTM over utterance vectors.
    pub interaction: LstmParams,
    /// LSTM over `[token ; interaction state]`, producing final token states.
    pub enrich: LstmParams,
    pub schema: BiLstmParams,
    pub hidden: usize,
}

impl EncoderParams {
    pub fn new(store: &mut ParamStore, input: usize, hidden: usize, rng: &mut Rng) -> Self {
        EncoderParams {
            utterance: BiLstmParams::new(store, "enc.utterance", input, hidden, INIT_BOUND, rng),
            interaction: LstmParams::new(store, "enc.interaction", 2 * hidden, hidden, INIT_BOUND, rng),
            enrich: LstmParams::new(store, "enc.enrich", input + hidden, 2 * hidden, INIT_BOUND, rng),
            schema: BiLstmParams::new(store, "enc.schema", input, hidden, INIT_BOUND, rng),
            hidden,
        }
    }

    /// Width of token and header states.
    pub fn state_width(&self) -> usize {
        2 * self.hidden
    }
}

/// Bi-LSTM states of one utterance and its `[last fwd ; first bwd]` vector.
pub fn encode_utterance(tape: &mut Tape, p: &EncoderParams, xs: Var) -> Result<(Var, Var), AutodiffError> {
    let out = bilstm(tape, xs, &p.utterance)?;
    Ok((out.states, out.summary))
}

/// One interaction-LSTM step; `prev` is `None` before the first turn.
pub fn update_interaction_state(
    tape: &mut Tape,
    p: &EncoderParams,
    utterance_vector: Var,
    prev: Option<(Var, Var)>,
) -> Result<(Var, Var), AutodiffError> {
    let steps = lstm_sequence(tape, utterance_vector, &p.interaction, prev, false)?;
    Ok(steps[0])
}

/// Final token states from an LSTM over `[x_k ; h^I]`.
pub fn enrich_utterance(tape: &mut Tape, p: &EncoderParams, xs: Var, interaction: Var) -> Result<Var, AutodiffError> {
    let n = tape.shape(xs)[0];
    let ones = tape.constant(Tensor::filled(n, 1, 1.0));
    let repeated = tape.matmul(ones, interaction)?;
    let input = tape.concat_cols(&[xs, repeated])?;
    let steps = lstm_sequence(tape, input, &p.enrich, None, false)?;
    let rows: Vec<Var> = steps.into_iter().map(|(h, _)| h).collect();
    tape.concat_rows(&rows)
}

/// One `[last fwd ; first bwd]` vector per header.
pub fn encode_schema(tape: &mut Tape, p: &EncoderParams, headers: &[Var]) -> Result<Var, EncoderError> {
    let mut rows = Vec::with_capacity(headers.len());
    for (i, &h) in headers.iter().enumerate() {
        if tape.shape(h)[0] == 0 {
            return Err(EncoderError::EmptyHeader(i));
        }
        rows.push(bilstm(tape, h, &p.schema)?.summary);
    }
    Ok(tape.concat_rows(&rows)?)
}

#[derive(Debug, Clone)]
pub struct EncoderState {
    /// Final states of every token of every encoded turn, turn by turn.
    pub token_states: Var,
    pub turn_lengths: Vec<usize>,
    pub utterance_vectors: Vec<Var>,
    /// One row per turn.
    pub interaction_states: Var,
    pub schema_states: Var,
}

impl EncoderState {
    pub fn num_tokens(&self) -> usize {
        self.turn_lengths.iter().sum()
    }
}

/// Runs the turn recurrence over every turn of `layout`.
pub fn encode(tape: &mut Tape, p: &EncoderParams, embeddings: Var, layout: &InputLayout) -> Result<EncoderState, EncoderError> {
    let mut prev = None;
    let mut token_rows = Vec::new();
    let mut utterance_vectors = Vec::new();
    let mut interaction_rows = Vec::new();
    let mut turn_lengths = Vec::new();
    for positions in &layout.turn_positions {
        let xs = tape.select_rows(embeddings, positions)?;
        let (_, vector) = encode_utterance(tape, p, xs)?;
        let (h, c) = update_interaction_state(tape, p, vector, prev)?;
        token_rows.push(enrich_utterance(tape, p, xs, h)?);
        utterance_vectors.push(vector);
        interaction_rows.push(h);
        turn_lengths.push(positions.len());
        prev = Some((h, c));
    }
    let headers = layout
        .header_positions
        .iter()
        .map(|pos| tape.select_rows(embeddings, pos))
        .collect::<Result<Vec<_>, _>>()?;
    let schema_states = encode_schema(tape, p, &headers)?;
    Ok(EncoderState {
        token_states: tape.concat_rows(&token_rows)?,
        turn_lengths,
        utterance_vectors,
        interaction_states: tape.concat_rows(&interaction_rows)?,
        schema_states,
    })
}
