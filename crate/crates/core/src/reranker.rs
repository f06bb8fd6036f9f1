//! Binary reranker over beam candidates: pooled task features of the main
//! model plus a knowledge vector read from the utterances and candidate.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{index, SliceRandom};

use ctxparse_autodiff::nn::{bilstm, BiLstmParams};
use ctxparse_autodiff::{
    load_checkpoint, save_checkpoint, seeded_rng, Adam, AutodiffError, ParamId, ParamStore, Tape, Tensor, Var,
};

use crate::corpus::{tokenize_utterance, ClauseDecomposition, Interaction, Vocab, CLS, SEP};
use crate::evaluator::sql_match;
use crate::INIT_BOUND;

#[derive(Debug, thiserror::Error)]
pub enum RerankError {
    #[error("{candidates} candidates but {scores} scores")]
    LengthMismatch { candidates: usize, scores: usize },
    #[error("task features have width {found}, reranker expects {expected}")]
    FeatureWidth { expected: usize, found: usize },
    #[error("rerank samples line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One labeled candidate for turn `turn` of interaction `interaction`.
#[derive(Debug, Clone, PartialEq)]
pub struct RerankSample {
    pub interaction: usize,
    pub turn: usize,
    /// Utterance tokens of turns `0..=turn`.
    pub prefix: Vec<Vec<String>>,
    pub candidate: String,
    pub label: bool,
    /// Pooled task features of the turn.
    pub features: Vec<f64>,
}

/// Element-wise max over the rows of `[h_u ; h_s]`.
pub fn pool_task_features(tape: &mut Tape, h_u: Var, h_s: Var) -> Result<Var, AutodiffError> {
    let both = tape.concat_rows(&[h_u, h_s])?;
    tape.max_pool_rows(both)
}

/// `[cls] x_1 [sep] ... x_i [sep] y'` with the candidate split into words.
pub fn knowledge_layout(prefix: &[Vec<String>], candidate: &str) -> Vec<String> {
    let mut out = vec![CLS.to_string()];
    for turn in prefix {
        out.extend(turn.iter().cloned());
        out.push(SEP.to_string());
    }
    out.extend(tokenize_utterance(candidate));
    out
}

#[derive(Debug, Clone, Copy)]
pub struct RerankerParams {
    pub embedding: ParamId,
    pub encoder: BiLstmParams,
    /// `task_width × 1`.
    pub w_task: ParamId,
    /// `2 hidden × 1`.
    pub w_knowledge: ParamId,
}

/// Probability `σ(W_task h' + W_knowledge k)` as a `1 × 1` node, with the
/// pre-sigmoid logit.
pub fn score_candidate(
    tape: &mut Tape,
    w_task: Var,
    w_knowledge: Var,
    task: Var,
    knowledge: Var,
) -> Result<(Var, Var), AutodiffError> {
    let a = tape.matmul(task, w_task)?;
    let b = tape.matmul(knowledge, w_knowledge)?;
    let logit = tape.add(a, b)?;
    Ok((tape.sigmoid(logit), logit))
}

#[derive(Debug, Clone)]
pub struct Reranker {
    pub store: ParamStore,
    pub params: RerankerParams,
    pub vocab: Vocab,
    pub task_width: usize,
}

impl Reranker {
    pub fn new(vocab: Vocab, task_width: usize, embed_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let mut store = ParamStore::new();
        let embedding = store.add_uniform("rerank.embedding", vocab.len(), embed_dim, INIT_BOUND, &mut rng);
        let encoder = BiLstmParams::new(&mut store, "rerank.encoder", embed_dim, hidden, INIT_BOUND, &mut rng);
        let w_task = store.add_uniform("rerank.w_task", task_width, 1, INIT_BOUND, &mut rng);
        let w_knowledge = store.add_uniform("rerank.w_knowledge", 2 * hidden, 1, INIT_BOUND, &mut rng);
        Reranker {
            store,
            params: RerankerParams {
                embedding,
                encoder,
                w_task,
                w_knowledge,
            },
            vocab,
            task_width,
        }
    }

    /// Returns `(probability, logit)` nodes for one sample.
    pub fn forward(&self, tape: &mut Tape, sample: &RerankSample) -> Result<(Var, Var), RerankError> {
        if sample.features.len() != self.task_width {
            return Err(RerankError::FeatureWidth {
                expected: self.task_width,
                found: sample.features.len(),
            });
        }
        let ids = self.vocab.ids(&knowledge_layout(&sample.prefix, &sample.candidate));
        let xs = tape.param_rows(self.params.embedding, &ids)?;
        let knowledge = bilstm(tape, xs, &self.params.encoder)?.summary;
        let task = tape.constant(Tensor::from_vec(1, self.task_width, sample.features.clone())?);
        let w_task = tape.param(self.params.w_task);
        let w_knowledge = tape.param(self.params.w_knowledge);
        Ok(score_candidate(tape, w_task, w_knowledge, task, knowledge)?)
    }

    pub fn score(&self, sample: &RerankSample) -> Result<f64, RerankError> {
        let mut tape = Tape::new(&self.store);
        let (p, _) = self.forward(&mut tape, sample)?;
        Ok(tape.value(p).scalar())
    }

    /// One Adam update on the binary cross-entropy of `sample`.
    pub fn train_step(&mut self, optimizer: &mut Adam, sample: &RerankSample) -> Result<f64, RerankError> {
        self.store.zero_grads();
        let (loss, grads) = {
            let mut tape = Tape::new(&self.store);
            let (_, logit) = self.forward(&mut tape, sample)?;
            // BCE as cross-entropy over logits [0, s]
            let zero = tape.zeros(1, 1);
            let logits = tape.concat_cols(&[zero, logit])?;
            let loss = tape.cross_entropy(logits, &[usize::from(sample.label)])?;
            (tape.value(loss).scalar(), tape.backward(loss))
        };
        grads.accumulate_into(&mut self.store);
        optimizer.step(&mut self.store);
        Ok(loss)
    }

    /// Trains for `epochs` passes in a seeded shuffled order; returns the
    /// mean loss of each epoch.
    pub fn train(&mut self, samples: &[RerankSample], epochs: usize, lr: f64, seed: u64) -> Result<Vec<f64>, RerankError> {
        let mut rng = seeded_rng(seed);
        let mut optimizer = Adam::new(&self.store, lr);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut losses = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for &k in &order {
                total += self.train_step(&mut optimizer, &samples[k])?;
            }
            losses.push(total / samples.len().max(1) as f64);
        }
        Ok(losses)
    }

    pub fn save(&self, path: &Path) -> Result<(), RerankError> {
        Ok(save_checkpoint(path, &self.store.named_values())?)
    }

    pub fn load_weights(&mut self, path: &Path) -> Result<(), RerankError> {
        let named = load_checkpoint(path)?;
        Ok(self.store.load_from(&named)?)
    }
}

/// Labels every beam candidate by clause-set match against `gold`.
pub fn mine_negatives(
    interaction: usize,
    turn: usize,
    prefix: &[Vec<String>],
    features: &[f64],
    candidates: &[String],
    gold: &ClauseDecomposition,
) -> Vec<RerankSample> {
    candidates
        .iter()
        .map(|c| RerankSample {
            interaction,
            turn,
            prefix: prefix.to_vec(),
            candidate: c.clone(),
            label: sql_match(c, gold),
            features: features.to_vec(),
        })
        .collect()
}

/// Keeps every positive and a seeded uniform subset of negatives no larger
/// than the number of positives. Relative order is preserved.
pub fn downsample_balance(samples: &[RerankSample], seed: u64) -> Vec<RerankSample> {
    let positives = samples.iter().filter(|s| s.label).count();
    let negatives: Vec<usize> = (0..samples.len()).filter(|&k| !samples[k].label).collect();
    let keep = positives.min(negatives.len());
    let mut rng = seeded_rng(seed);
    let mut chosen: Vec<usize> = index::sample(&mut rng, negatives.len(), keep)
        .into_iter()
        .map(|k| negatives[k])
        .collect();
    chosen.sort_unstable();
    let mut kept = vec![false; samples.len()];
    for k in chosen {
        kept[k] = true;
    }
    samples
        .iter()
        .zip(kept)
        .filter(|(s, k)| s.label || *k)
        .map(|(s, _)| s.clone())
        .collect()
}

/// Candidate indices by descending score; ties keep beam order.
pub fn rerank(num_candidates: usize, scores: &[f64]) -> Result<Vec<usize>, RerankError> {
    if scores.len() != num_candidates {
        return Err(RerankError::LengthMismatch {
            candidates: num_candidates,
            scores: scores.len(),
        });
    }
    let mut order: Vec<usize> = (0..num_candidates).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    Ok(order)
}

/// Scores of 1 for correct candidates and 0 otherwise.
pub fn oracle_scores(candidates: &[String], gold: &ClauseDecomposition) -> Vec<f64> {
    candidates.iter().map(|c| f64::from(u8::from(sql_match(c, gold)))).collect()
}

/// Beam candidates of one turn with what the reranker needs.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGroup {
    pub interaction: usize,
    pub turn: usize,
    pub prefix: Vec<Vec<String>>,
    pub features: Vec<f64>,
    /// Best first, as produced by beam search.
    pub candidates: Vec<String>,
    pub gold: ClauseDecomposition,
}

impl CandidateGroup {
    pub fn samples(&self) -> Vec<RerankSample> {
        mine_negatives(self.interaction, self.turn, &self.prefix, &self.features, &self.candidates, &self.gold)
    }

    /// Whether any candidate matches the gold query.
    pub fn hit(&self) -> bool {
        self.candidates.iter().any(|c| sql_match(c, &self.gold))
    }

    /// Top candidate after ordering by `scores`.
    pub fn top_after(&self, scores: &[f64]) -> Result<Option<&String>, RerankError> {
        let order = rerank(self.candidates.len(), scores)?;
        Ok(order.first().map(|&k| &self.candidates[k]))
    }

    pub fn scores(&self, reranker: &Reranker) -> Result<Vec<f64>, RerankError> {
        self.samples().iter().map(|s| reranker.score(s)).collect()
    }
}

/// Fraction of groups whose top candidate is correct after ordering each
/// group by `scorer`.
pub fn top1_accuracy<F>(groups: &[CandidateGroup], mut scorer: F) -> Result<f64, RerankError>
where
    F: FnMut(&CandidateGroup) -> Result<Vec<f64>, RerankError>,
{
    if groups.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for g in groups {
        let scores = scorer(g)?;
        if g.top_after(&scores)?.is_some_and(|c| sql_match(c, &g.gold)) {
            correct += 1;
        }
    }
    Ok(correct as f64 / groups.len() as f64)
}

/// Fraction of groups with at least one correct candidate.
pub fn hit_rate(groups: &[CandidateGroup]) -> f64 {
    if groups.is_empty() {
        return 0.0;
    }
    groups.iter().filter(|g| g.hit()).count() as f64 / groups.len() as f64
}

/// Tokens of every utterance and candidate, for the reranker's lookup table.
pub fn reranker_vocab(interactions: &[Interaction], candidates: &[String]) -> Vocab {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let words = interactions
        .iter()
        .flat_map(|i| i.turns.iter().flat_map(|t| t.utterance_tokens.iter().cloned()))
        .chain(candidates.iter().flat_map(|c| tokenize_utterance(c)));
    for w in words {
        *counts.entry(w).or_default() += 1;
    }
    Vocab::with_tokens(counts.keys().map(String::as_str))
}

/// `interaction<TAB>turn<TAB>label<TAB>candidate` per line.
pub fn format_samples(samples: &[RerankSample]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", s.interaction, s.turn, u8::from(s.label), s.candidate));
    }
    out
}

/// Parsed sample record without prefix and features, which the caller
/// recomputes from the corpus and the main model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub interaction: usize,
    pub turn: usize,
    pub label: bool,
    pub candidate: String,
}

pub fn parse_samples(text: &str) -> Result<Vec<SampleRecord>, RerankError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: &str| RerankError::Parse {
            line: i + 1,
            message: message.to_string(),
        };
        let fields: Vec<&str> = line.splitn(4, '\t').collect();
        if fields.len() != 4 {
            return Err(err("expected 4 tab-separated fields"));
        }
        let label = match fields[2] {
            "0" => false,
            "1" => true,
            _ => return Err(err("label must be 0 or 1")),
        };
        out.push(SampleRecord {
            interaction: fields[0].parse().map_err(|_| err("bad interaction index"))?,
            turn: fields[1].parse().map_err(|_| err("bad turn index"))?,
            label,
            candidate: fields[3].to_string(),
        });
    }
    Ok(out)
}
