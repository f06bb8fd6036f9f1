//! The full parser: encoder, context graph, decay, context representation
//! and decoder wired together over one tape per interaction.

use std::collections::BTreeMap;
use std::path::Path;
use std::rc::Rc;

use ctxparse_autodiff::{
    load_checkpoint, save_checkpoint, seeded_rng, Adam, AutodiffError, ParamStore, Tape, Tensor, Var,
};

use crate::context_rep::{represent, Alignment, ContextError, ContextParams, ContextRepresentation};
use crate::corpus::{render_output_tokens, sql_to_output_tokens, Interaction, OutputToken, Schema, SqlParseError, Vocab};
use crate::decay::{assemble_decay, DecayConfig, DecayError, DecayLayout, DecayVector, GateInputs, GateParams};
use crate::decoder::{
    beam_search, candidate_tokens, encode_prev_sql, sequence_loss, DecoderInputs, DecoderParams, TapeDecoder,
};
use crate::encoder::{encode, example_id, EmbeddingProvider, EncoderError, EncoderParams, EncoderState, InputLayout};
use crate::reranker::pool_task_features;
use crate::schema_graph::{extend_graph, ContextGraph, GraphError};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Decay(#[from] DecayError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("gold query of interaction {interaction}, turn {turn}: {source}")]
    Target {
        interaction: usize,
        turn: usize,
        source: SqlParseError,
    },
    #[error("schema {expected} required, interaction uses {found}")]
    WrongSchema { expected: String, found: String },
    #[error("invalid model configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Width of trainable lookup embeddings; ignored for precomputed ones.
    pub embed_dim: usize,
    /// Per-direction encoder width; token and header states have width `2 * hidden`.
    pub hidden: usize,
    pub heads: usize,
    pub dcre_layers: usize,
    pub gate_hidden: usize,
    pub alignment: Alignment,
    pub decay: DecayConfig,
    pub editing: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 300,
            hidden: 300,
            heads: 4,
            dcre_layers: 1,
            gate_hidden: 300,
            alignment: Alignment::KeyAligned,
            decay: DecayConfig::default(),
            editing: true,
        }
    }
}

impl ModelConfig {
    pub fn state_width(&self) -> usize {
        2 * self.hidden
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden == 0 || self.embed_dim == 0 || self.gate_hidden == 0 {
            return Err(ModelError::Config("widths must be positive".into()));
        }
        if self.heads == 0 || !self.state_width().is_multiple_of(self.heads) {
            return Err(ModelError::Config(format!(
                "{} heads do not divide state width {}",
                self.heads,
                self.state_width()
            )));
        }
        self.decay.validate()?;
        Ok(())
    }
}

/// Parameter handles of every component. Values live in the [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Network {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub provider: EmbeddingProvider,
    pub encoder: EncoderParams,
    pub token_gate: Option<GateParams>,
    pub utterance_gate: Option<GateParams>,
    pub context: ContextParams,
    pub decoder: DecoderParams,
}

#[derive(Debug, Clone)]
pub struct Parser {
    pub store: ParamStore,
    pub net: Network,
}

impl Parser {
    /// Creates parameters in a fixed order from `seed`. A `precomputed`
    /// provider replaces the trainable lookup table.
    pub fn new(config: ModelConfig, vocab: Vocab, precomputed: Option<EmbeddingProvider>, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        let mut store = ParamStore::new();
        let provider = match precomputed {
            Some(p) => p,
            None => EmbeddingProvider::lookup(&mut store, "embedding", vocab.len(), config.embed_dim, &mut rng),
        };
        let input = provider.dimension();
        let width = config.state_width();
        let encoder = EncoderParams::new(&mut store, input, config.hidden, &mut rng);
        let token_gate = config
            .decay
            .needs_token_gate()
            .then(|| GateParams::new(&mut store, "decay.token", width, config.gate_hidden, &mut rng));
        let utterance_gate = config
            .decay
            .needs_utterance_gate()
            .then(|| GateParams::new(&mut store, "decay.utterance", config.hidden, config.gate_hidden, &mut rng));
        let context = ContextParams::new(&mut store, width, config.heads, config.dcre_layers, config.alignment, &mut rng)?;
        let decoder = DecoderParams::new(&mut store, width, config.editing, &mut rng);
        Ok(Parser {
            store,
            net: Network {
                config,
                vocab,
                provider,
                encoder,
                token_gate,
                utterance_gate,
                context,
                decoder,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        Ok(save_checkpoint(path, &self.store.named_values())?)
    }

    /// Overwrites parameter values from a checkpoint of the same architecture.
    pub fn load_weights(&mut self, path: &Path) -> Result<(), ModelError> {
        let named = load_checkpoint(path)?;
        Ok(self.store.load_from(&named)?)
    }

    /// One optimizer update on one interaction; returns the loss before it.
    pub fn train_step(&mut self, optimizer: &mut Adam, example: &PreparedInteraction) -> Result<f64, ModelError> {
        self.train_step_clipped(optimizer, example, GRAD_CLIP)
    }

    pub fn train_step_clipped(&mut self, optimizer: &mut Adam, example: &PreparedInteraction, clip: f64) -> Result<f64, ModelError> {
        self.store.zero_grads();
        let (loss, grads) = {
            let mut tape = Tape::new(&self.store);
            let loss = self.net.interaction_loss(
                &mut tape,
                example.index,
                example.interaction,
                example.schema,
                &example.targets,
            )?;
            (tape.value(loss).scalar(), tape.backward(loss))
        };
        grads.accumulate_into(&mut self.store);
        self.store.clip_grad_norm(clip);
        optimizer.step(&mut self.store);
        Ok(loss)
    }

    pub fn predict(&self, example: &PreparedInteraction, beam_size: usize, max_len: usize) -> Result<Vec<TurnPrediction>, ModelError> {
        let mut tape = Tape::new(&self.store);
        self.net
            .decode_interaction(&mut tape, example.index, example.interaction, example.schema, beam_size, max_len)
    }
}

/// Global gradient-norm clip applied before every update.
pub const GRAD_CLIP: f64 = 5.0;

/// An interaction with its schema and linearized gold queries.
#[derive(Debug, Clone)]
pub struct PreparedInteraction<'a> {
    pub index: usize,
    pub interaction: &'a Interaction,
    pub schema: &'a Schema,
    pub targets: Vec<Vec<OutputToken>>,
}

pub fn prepare<'a>(
    interactions: &'a [Interaction],
    schemas: &'a BTreeMap<String, Schema>,
) -> Result<Vec<PreparedInteraction<'a>>, ModelError> {
    interactions
        .iter()
        .enumerate()
        .map(|(index, interaction)| {
            let schema = schemas.get(&interaction.database_id).ok_or_else(|| ModelError::WrongSchema {
                expected: "a loaded schema".into(),
                found: interaction.database_id.clone(),
            })?;
            Ok(PreparedInteraction {
                index,
                interaction,
                schema,
                targets: gold_targets(index, interaction, schema)?,
            })
        })
        .collect()
}

/// Everything computed for one turn before decoding.
#[derive(Debug, Clone)]
pub struct TurnEncoding {
    pub graph: ContextGraph,
    pub decay: DecayVector,
    pub representation: ContextRepresentation,
}

/// Per-interaction state carried from turn to turn.
pub struct InteractionEncoder<'n> {
    net: &'n Network,
    schema: &'n Schema,
    index: usize,
    turns: Vec<Vec<String>>,
    graph: ContextGraph,
    whole: Option<EncoderState>,
    next_turn: usize,
}

impl<'n> InteractionEncoder<'n> {
    pub fn new(net: &'n Network, index: usize, interaction: &Interaction, schema: &'n Schema) -> Result<Self, ModelError> {
        if interaction.database_id != schema.database_id {
            return Err(ModelError::WrongSchema {
                expected: schema.database_id.clone(),
                found: interaction.database_id.clone(),
            });
        }
        Ok(InteractionEncoder {
            net,
            schema,
            index,
            turns: interaction.turns.iter().map(|t| t.utterance_tokens.clone()).collect(),
            graph: ContextGraph::empty(schema),
            whole: None,
            next_turn: 0,
        })
    }

    pub fn num_turns(&self) -> usize {
        self.turns.len()
    }

    /// Encodes the next turn. Turns must be visited in order.
    pub fn next_turn(&mut self, tape: &mut Tape) -> Result<TurnEncoding, ModelError> {
        let i = self.next_turn;
        self.next_turn += 1;
        let net = self.net;
        self.graph = extend_graph(&self.graph, &self.turns[i], self.schema)?;

        let (token_states, interaction_states, schema_states) = if net.provider.is_contextual() {
            let layout = InputLayout::new(&self.turns[..=i], &self.schema.headers);
            let emb = net.provider.embed(tape, &net.vocab, &example_id(self.index, i), &layout)?;
            let st = encode(tape, &net.encoder, emb, &layout)?;
            (st.token_states, st.interaction_states, st.schema_states)
        } else {
            if self.whole.is_none() {
                let layout = InputLayout::new(&self.turns, &self.schema.headers);
                let emb = net.provider.embed(tape, &net.vocab, &example_id(self.index, 0), &layout)?;
                self.whole = Some(encode(tape, &net.encoder, emb, &layout)?);
            }
            let st = self.whole.as_ref().expect("encoded above");
            let n: usize = st.turn_lengths[..=i].iter().sum();
            (
                tape.slice_rows(st.token_states, 0, n)?,
                tape.slice_rows(st.interaction_states, 0, i + 1)?,
                st.schema_states,
            )
        };

        let previous_tokens: usize = self.turns[..i].iter().map(Vec::len).sum();
        // positions in [cls] x_1 ... x_i
        let positions: Vec<usize> = (1..=self.graph.num_tokens()).collect();
        let layout = DecayLayout {
            turn_of_token: self.graph.turn_of_token(),
            positions: &positions,
            current_turn: i,
            current_start: 1 + previous_tokens,
            num_headers: self.schema.headers.len(),
        };
        let gates = GateInputs {
            token_states,
            interaction_states,
            token_gate: net.token_gate.as_ref(),
            utterance_gate: net.utterance_gate.as_ref(),
        };
        let decay = assemble_decay(tape, &net.config.decay, &layout, &gates)?;
        let relations = Rc::new(self.graph.relation_matrix());
        let representation = represent(tape, &net.context, token_states, schema_states, &relations, &decay)?;
        Ok(TurnEncoding {
            graph: self.graph.clone(),
            decay,
            representation,
        })
    }
}

/// Gold output sequences of every turn, without end-of-sequence.
pub fn gold_targets(index: usize, interaction: &Interaction, schema: &Schema) -> Result<Vec<Vec<OutputToken>>, ModelError> {
    interaction
        .turns
        .iter()
        .enumerate()
        .map(|(t, turn)| {
            sql_to_output_tokens(&turn.gold_sql, schema).map_err(|source| ModelError::Target {
                interaction: index,
                turn: t,
                source,
            })
        })
        .collect()
}

/// One decoded turn.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnPrediction {
    /// Beam candidates best first, with summed log-probabilities.
    pub candidates: Vec<(Vec<OutputToken>, f64)>,
    pub sql: String,
    /// Max-pooled fused token and header states of the turn.
    pub pooled: Vec<f64>,
}

/// Attention weights of one turn, read off the tape.
#[derive(Debug, Clone)]
pub struct TurnAttention {
    pub node_labels: Vec<String>,
    pub relation_block: String,
    pub decay: Vec<f64>,
    pub inner_alpha: Tensor,
    pub utterance_alpha: Tensor,
    pub schema_alpha: Tensor,
    /// Per layer, per head pre-softmax scores.
    pub dcre_scores: Vec<Vec<Tensor>>,
    /// Per layer, per head attention weights.
    pub dcre_alphas: Vec<Vec<Tensor>>,
}

impl Network {
    fn decoder_inputs(&self, tape: &mut Tape, enc: &TurnEncoding, previous: Option<&[OutputToken]>) -> Result<DecoderInputs, ModelError> {
        let mut inputs = DecoderInputs {
            h_u: enc.representation.h_u,
            h_s: enc.representation.h_s,
            previous: None,
        };
        if let Some(prev) = previous {
            inputs.previous = encode_prev_sql(tape, &self.decoder, &inputs, prev)?;
        }
        Ok(inputs)
    }

    /// Teacher-forced loss summed over turns. The previous query fed to the
    /// editing mechanism is the gold one.
    pub fn interaction_loss(
        &self,
        tape: &mut Tape,
        index: usize,
        interaction: &Interaction,
        schema: &Schema,
        targets: &[Vec<OutputToken>],
    ) -> Result<Var, ModelError> {
        let mut enc = InteractionEncoder::new(self, index, interaction, schema)?;
        let mut losses = Vec::with_capacity(targets.len());
        for (i, target) in targets.iter().enumerate() {
            let turn = enc.next_turn(tape)?;
            let previous = (i > 0).then(|| targets[i - 1].as_slice());
            let inputs = self.decoder_inputs(tape, &turn, previous)?;
            let mut seq = target.clone();
            seq.push(OutputToken::EOS);
            losses.push(sequence_loss(tape, &self.decoder, &inputs, &seq)?);
        }
        Ok(tape.sum_scalars(&losses)?)
    }

    /// Beam-decodes every turn; the previous query is the top prediction.
    pub fn decode_interaction(
        &self,
        tape: &mut Tape,
        index: usize,
        interaction: &Interaction,
        schema: &Schema,
        beam_size: usize,
        max_len: usize,
    ) -> Result<Vec<TurnPrediction>, ModelError> {
        let mut enc = InteractionEncoder::new(self, index, interaction, schema)?;
        let mut out: Vec<TurnPrediction> = Vec::with_capacity(enc.num_turns());
        for _ in 0..enc.num_turns() {
            let turn = enc.next_turn(tape)?;
            let previous = out.last().and_then(|p| p.candidates.first()).map(|c| c.0.clone());
            let inputs = self.decoder_inputs(tape, &turn, previous.as_deref())?;
            let beams = {
                let mut model = TapeDecoder {
                    tape: &mut *tape,
                    params: &self.decoder,
                    inputs: &inputs,
                };
                beam_search(&mut model, beam_size, max_len)
            };
            let candidates: Vec<(Vec<OutputToken>, f64)> =
                beams.iter().map(|b| (candidate_tokens(b), b.score)).collect();
            let sql = candidates
                .first()
                .map(|c| render_output_tokens(&c.0, schema))
                .unwrap_or_default();
            let pooled = pool_task_features(tape, turn.representation.h_u, turn.representation.h_s)?;
            out.push(TurnPrediction {
                candidates,
                sql,
                pooled: tape.value(pooled).values().to_vec(),
            });
        }
        Ok(out)
    }

    /// Max-pooled fused states of every turn. They do not depend on the
    /// previous query, so no decoding is needed.
    pub fn turn_features(
        &self,
        tape: &mut Tape,
        index: usize,
        interaction: &Interaction,
        schema: &Schema,
    ) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut enc = InteractionEncoder::new(self, index, interaction, schema)?;
        let mut out = Vec::with_capacity(enc.num_turns());
        for _ in 0..enc.num_turns() {
            let turn = enc.next_turn(tape)?;
            let pooled = pool_task_features(tape, turn.representation.h_u, turn.representation.h_s)?;
            out.push(tape.value(pooled).values().to_vec());
        }
        Ok(out)
    }

    /// Relation blocks, decay weights and attention maps of every turn.
    pub fn explain_interaction(
        &self,
        tape: &mut Tape,
        index: usize,
        interaction: &Interaction,
        schema: &Schema,
    ) -> Result<Vec<TurnAttention>, ModelError> {
        let mut enc = InteractionEncoder::new(self, index, interaction, schema)?;
        let mut out = Vec::with_capacity(enc.num_turns());
        for i in 0..enc.num_turns() {
            let turn = enc.next_turn(tape)?;
            let r = &turn.representation;
            out.push(TurnAttention {
                node_labels: turn.graph.node_labels(),
                relation_block: crate::schema_graph::format_relation_block(i, &turn.graph),
                decay: turn.decay.values(tape),
                inner_alpha: tape.value(r.dcri.inner_alpha).clone(),
                utterance_alpha: tape.value(r.dcri.utterance_alpha).clone(),
                schema_alpha: tape.value(r.dcri.schema_alpha).clone(),
                dcre_scores: r
                    .dcre
                    .iter()
                    .map(|l| l.scores.iter().map(|a| tape.value(*a).clone()).collect())
                    .collect(),
                dcre_alphas: r
                    .dcre
                    .iter()
                    .map(|l| l.alphas.iter().map(|a| tape.value(*a).clone()).collect())
                    .collect(),
            });
        }
        Ok(out)
    }
}
