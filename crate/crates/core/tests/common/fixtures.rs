//! Models shared by the unit tests and the acceptance run.

use std::collections::HashMap;

use ctxparse_autodiff::{grad_check, seeded_rng, AutodiffError, GradCheckReport, ParamStore, Tape};
use ctxparse_core::context_rep::{DcreLayerParams, LAYER_NORM_EPS};
use ctxparse_core::corpus::{build_vocab_with_schemas, Interaction, Schema};
use ctxparse_core::decay::{DecayConfig, DecayKind, DecayLevel};
use ctxparse_core::decoder::BeamModel;
use ctxparse_core::model::{gold_targets, ModelConfig, ModelError, Parser};
use ctxparse_core::synth::micro_example;
use rand::Rng as _;

use super::{to_mat, TransformerWeights};

/// Weights are scaled up before checking so attention is not uniform and
/// gradients are well above the finite-difference noise.
pub const GRADIENT_SCALE: f64 = 3.0;
pub const GRADIENT_EPS: f64 = 1e-5;

/// State width 8, two heads, both decay gates active.
pub fn micro_config() -> ModelConfig {
    let mut decay = DecayConfig::default();
    decay.level = DecayLevel::Both;
    decay.token.kind = DecayKind::Gate;
    decay.utterance.kind = DecayKind::Gate;
    // low enough that neither gate is clamped
    decay.floor = 0.05;
    ModelConfig {
        embed_dim: 6,
        hidden: 4,
        heads: 2,
        dcre_layers: 1,
        gate_hidden: 4,
        decay,
        ..Default::default()
    }
}

pub fn micro_parser() -> (Parser, Schema, Interaction) {
    let (schema, interaction) = micro_example();
    let vocab = build_vocab_with_schemas(std::slice::from_ref(&interaction), &[&schema], 1);
    let parser = Parser::new(micro_config(), vocab, None, 3).unwrap();
    (parser, schema, interaction)
}

fn as_autodiff(e: ModelError) -> AutodiffError {
    match e {
        ModelError::Autodiff(a) => a,
        other => panic!("model error during gradient check: {other}"),
    }
}

/// Central differences on every coordinate of the micro model's loss.
pub fn micro_gradient_check() -> GradCheckReport {
    let (mut parser, schema, interaction) = micro_parser();
    let targets = gold_targets(0, &interaction, &schema).unwrap();
    let ids: Vec<_> = parser.store.ids().collect();
    for id in ids {
        parser.store.value_mut(id).values_mut().iter_mut().for_each(|v| *v *= GRADIENT_SCALE);
    }
    let net = parser.net.clone();
    grad_check(&mut parser.store, GRADIENT_EPS, None, |tape: &mut Tape| {
        net.interaction_loss(tape, 0, &interaction, &schema, &targets).map_err(as_autodiff)
    })
    .unwrap()
}

/// Toy model whose next-token distribution is a fixed random function of
/// the prefix.
pub struct Toy {
    pub vocab: usize,
    pub seed: u64,
    pub cache: HashMap<Vec<usize>, Vec<f64>>,
}

impl Toy {
    pub fn new(vocab: usize, seed: u64) -> Self {
        Toy {
            vocab,
            seed,
            cache: HashMap::new(),
        }
    }

    pub fn logp(&mut self, prefix: &[usize]) -> Vec<f64> {
        let (vocab, seed) = (self.vocab, self.seed);
        self.cache
            .entry(prefix.to_vec())
            .or_insert_with(|| {
                let mut h = seed;
                for &t in prefix {
                    h = h.wrapping_mul(31).wrapping_add(t as u64 + 1);
                }
                let mut rng = seeded_rng(h);
                let w: Vec<f64> = (0..vocab).map(|_| rng.gen_range(0.05..1.0)).collect();
                let s: f64 = w.iter().sum();
                w.iter().map(|x| (x / s).ln()).collect()
            })
            .clone()
    }
}

impl BeamModel for Toy {
    type State = Vec<usize>;
    fn eos(&self) -> usize {
        0
    }
    fn start(&mut self) -> (Vec<usize>, Vec<f64>) {
        (Vec::new(), self.logp(&[]))
    }
    fn advance(&mut self, state: &Vec<usize>, token: usize) -> (Vec<usize>, Vec<f64>) {
        let mut s = state.clone();
        s.push(token);
        let lp = self.logp(&s);
        (s, lp)
    }
}

/// Every finished or length-capped sequence with its score.
pub fn enumerate(toy: &mut Toy, max_len: usize) -> Vec<(Vec<usize>, f64)> {
    let mut out = Vec::new();
    let mut frontier = vec![(Vec::new(), 0.0)];
    for len in 1..=max_len {
        let mut next = Vec::new();
        for (prefix, score) in frontier {
            let lp = toy.logp(&prefix);
            for (t, l) in lp.iter().enumerate() {
                let mut seq: Vec<usize> = prefix.clone();
                seq.push(t);
                if t == 0 || len == max_len {
                    out.push((seq, score + l));
                } else {
                    next.push((seq, score + l));
                }
            }
        }
        frontier = next;
    }
    out
}

/// The weights of a relation-aware layer, read as a plain transformer layer.
pub fn transformer_weights(store: &ParamStore, p: &DcreLayerParams) -> TransformerWeights {
    let v = |id| to_mat(store.value(id));
    TransformerWeights {
        w_q: v(p.w_q),
        w_k: v(p.w_k),
        w_v: v(p.w_v),
        gain: store.value(p.ln_gain).values().to_vec(),
        bias: store.value(p.ln_bias).values().to_vec(),
        w1: v(p.ffn_in.weight),
        b1: store.value(p.ffn_in.bias.unwrap()).values().to_vec(),
        w2: v(p.ffn_out.weight),
        b2: store.value(p.ffn_out.bias.unwrap()).values().to_vec(),
        heads: p.heads,
        eps: LAYER_NORM_EPS,
    }
}
