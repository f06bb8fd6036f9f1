//! Commands behind the `ctxparse` tool. Every path comes from a
//! [`RunConfig`], so the commands chain without moving files around.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use ctxparse_autodiff::{seeded_rng, Adam, Tape, Tensor};

use crate::config::{ConfigError, RunConfig};
use crate::corpus::{
    build_vocab_with_schemas, load_interactions, load_schemas, render_output_tokens, schema_map, CorpusError,
    Interaction, Schema, Vocab,
};
use crate::encoder::{EmbeddingProvider, EncoderError};
use crate::evaluator::{EvalError, EvalReport};
use crate::model::{prepare, ModelError, Parser, PreparedInteraction, TurnPrediction};
use crate::reranker::{
    downsample_balance, format_samples, mine_negatives, parse_samples, rerank, reranker_vocab, RerankError,
    RerankSample, Reranker,
};
use crate::schema_graph::{extend_graph, format_relation_block, ContextGraph};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("embeddings: {0}")]
    Embeddings(EncoderError),
    #[error("checkpoint {path}: {source}")]
    Checkpoint { path: String, source: Box<dyn std::error::Error + Send + Sync> },
    #[error("interaction {index} does not exist ({count} in split)")]
    UnknownInteraction { index: usize, count: usize },
    #[error("{path}: {source}")]
    Samples { path: String, source: RerankError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Rerank(#[from] RerankError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl PipelineError {
    /// 2 for configuration problems, 3 for bad or missing input data, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Corpus(_)
            | PipelineError::Embeddings(_)
            | PipelineError::Checkpoint { .. }
            | PipelineError::UnknownInteraction { .. }
            | PipelineError::Samples { .. } => 3,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

/// Vocabulary file written next to a checkpoint.
pub fn vocab_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".vocab");
    PathBuf::from(s)
}

/// Report file written next to a prediction file.
pub fn report_path(predictions: &Path) -> PathBuf {
    let mut s = predictions.as_os_str().to_owned();
    s.push(".report");
    PathBuf::from(s)
}

/// One query per turn, a blank line after each interaction. Empty
/// predictions are written as `-` so turns stay aligned.
pub fn format_predictions(predictions: &[Vec<String>]) -> String {
    let mut out = String::new();
    for turns in predictions {
        for sql in turns {
            let line = sql.replace('\n', " ");
            out.push_str(if line.trim().is_empty() { "-" } else { line.trim() });
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

pub fn parse_predictions(text: &str) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
        } else {
            current.push(line.trim().to_string());
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

struct Data {
    schemas: BTreeMap<String, Schema>,
}

impl Data {
    fn load(cfg: &RunConfig) -> Result<Self, PipelineError> {
        Ok(Data {
            schemas: schema_map(load_schemas(&cfg.data.schemas)?),
        })
    }

    fn split(&self, path: &Path) -> Result<Vec<Interaction>, PipelineError> {
        Ok(load_interactions(path, &self.schemas)?)
    }
}

fn provider(cfg: &RunConfig) -> Result<Option<EmbeddingProvider>, PipelineError> {
    cfg.data
        .embeddings
        .as_deref()
        .map(|p| EmbeddingProvider::load_precomputed(p).map_err(PipelineError::Embeddings))
        .transpose()
}

fn checkpoint_err(path: &Path, e: impl std::error::Error + Send + Sync + 'static) -> PipelineError {
    PipelineError::Checkpoint {
        path: path.display().to_string(),
        source: Box::new(e),
    }
}

/// Rebuilds the parser of `checkpoint` from its vocabulary sidecar.
pub fn load_parser(cfg: &RunConfig, checkpoint: &Path) -> Result<Parser, PipelineError> {
    let vocab = Vocab::load(&vocab_path(checkpoint)).map_err(|e| checkpoint_err(checkpoint, e))?;
    let mut parser = Parser::new(cfg.model.clone(), vocab, provider(cfg)?, cfg.seed)?;
    parser.load_weights(checkpoint).map_err(|e| checkpoint_err(checkpoint, e))?;
    Ok(parser)
}

fn decode_all(parser: &Parser, cfg: &RunConfig, prepared: &[PreparedInteraction]) -> Result<Vec<Vec<TurnPrediction>>, PipelineError> {
    prepared
        .iter()
        .map(|ex| Ok(parser.predict(ex, cfg.beam_size, cfg.max_len)?))
        .collect()
}

fn top_sql(predictions: &[Vec<TurnPrediction>]) -> Vec<Vec<String>> {
    predictions
        .iter()
        .map(|turns| turns.iter().map(|t| t.sql.clone()).collect())
        .collect()
}

fn prefix(interaction: &Interaction, turn: usize) -> Vec<Vec<String>> {
    interaction.turns[..=turn].iter().map(|t| t.utterance_tokens.clone()).collect()
}

/// Labeled samples for every beam candidate of every training turn.
fn mine(
    predictions: &[Vec<TurnPrediction>],
    prepared: &[PreparedInteraction],
) -> Vec<RerankSample> {
    let mut out = Vec::new();
    for (ex, turns) in prepared.iter().zip(predictions) {
        for (t, pred) in turns.iter().enumerate() {
            let candidates: Vec<String> = pred
                .candidates
                .iter()
                .map(|(tokens, _)| render_output_tokens(tokens, ex.schema))
                .collect();
            let gold = &ex.interaction.turns[t].gold_clauses;
            out.extend(mine_negatives(ex.index, t, &prefix(ex.interaction, t), &pred.pooled, &candidates, gold));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub dev_question_match: Option<f64>,
}

/// Trains the parser, writing the checkpoint and a log line after every
/// epoch. Rerank samples are mined from epoch `rerank.mine_start_epoch` on.
pub fn train(cfg: &RunConfig) -> Result<Vec<EpochRecord>, PipelineError> {
    let data = Data::load(cfg)?;
    let train_set = data.split(&cfg.data.train)?;
    let dev_set = cfg.data.dev.as_deref().map(|p| data.split(p)).transpose()?;
    let schema_refs: Vec<&Schema> = data.schemas.values().collect();
    let vocab = build_vocab_with_schemas(&train_set, &schema_refs, 1);
    let mut parser = Parser::new(cfg.model.clone(), vocab, provider(cfg)?, cfg.seed)?;
    write_file(&vocab_path(&cfg.checkpoint), &parser.net.vocab.to_text())?;
    // initial weights, so even zero epochs leave a usable checkpoint
    parser.save(&cfg.checkpoint)?;

    let prepared = prepare(&train_set, &data.schemas)?;
    let dev_prepared = dev_set.as_ref().map(|d| prepare(d, &data.schemas)).transpose()?;
    let mut optimizer = Adam::new(&parser.store, cfg.lr);
    let mut rng = seeded_rng(cfg.seed);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut log = String::new();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut samples: Vec<RerankSample> = Vec::new();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss = 0.0;
        for &k in &order {
            loss += parser.train_step_clipped(&mut optimizer, &prepared[k], cfg.clip)?;
        }
        parser.save(&cfg.checkpoint)?;
        let dev_question_match = match (&dev_prepared, &dev_set) {
            (Some(p), Some(d)) => {
                let preds = top_sql(&decode_all(&parser, cfg, p)?);
                Some(EvalReport::evaluate(&preds, d)?.question_match.fraction())
            }
            _ => None,
        };
        if cfg.rerank.mine_start_epoch.is_some_and(|s| epoch >= s) {
            samples.extend(mine(&decode_all(&parser, cfg, &prepared)?, &prepared));
            write_file(&cfg.rerank.samples, &format_samples(&samples))?;
        }
        write!(log, "epoch {epoch}\tloss {loss:.6}").expect("write to string");
        if let Some(qm) = dev_question_match {
            write!(log, "\tdev_question_match {qm:.6}").expect("write to string");
        }
        log.push('\n');
        write_file(&cfg.log, &log)?;
        records.push(EpochRecord {
            epoch,
            loss,
            dev_question_match,
        });
    }
    Ok(records)
}

/// Decodes the evaluation split, optionally reranking each beam, and
/// writes the prediction file and its report.
pub fn evaluate(cfg: &RunConfig) -> Result<EvalReport, PipelineError> {
    let data = Data::load(cfg)?;
    let golds = data.split(cfg.eval_split())?;
    let predictions: Vec<Vec<String>> = if cfg.gold_passthrough {
        golds
            .iter()
            .map(|i| i.turns.iter().map(|t| t.gold_sql.clone()).collect())
            .collect()
    } else {
        let parser = load_parser(cfg, &cfg.checkpoint)?;
        let prepared = prepare(&golds, &data.schemas)?;
        let decoded = decode_all(&parser, cfg, &prepared)?;
        if cfg.rerank.enabled {
            let reranker = load_reranker(cfg, parser.net.config.state_width())?;
            rerank_predictions(&reranker, &prepared, &decoded)?
        } else {
            top_sql(&decoded)
        }
    };
    let report = EvalReport::evaluate(&predictions, &golds)?;
    write_file(&cfg.predictions, &format_predictions(&predictions))?;
    write_file(&report_path(&cfg.predictions), &report.to_string())?;
    Ok(report)
}

fn rerank_predictions(
    reranker: &Reranker,
    prepared: &[PreparedInteraction],
    decoded: &[Vec<TurnPrediction>],
) -> Result<Vec<Vec<String>>, PipelineError> {
    let mut out = Vec::with_capacity(decoded.len());
    for (ex, turns) in prepared.iter().zip(decoded) {
        let mut chosen = Vec::with_capacity(turns.len());
        for (t, pred) in turns.iter().enumerate() {
            let candidates: Vec<String> = pred
                .candidates
                .iter()
                .map(|(tokens, _)| render_output_tokens(tokens, ex.schema))
                .collect();
            let p = prefix(ex.interaction, t);
            let scores = candidates
                .iter()
                .map(|c| {
                    reranker.score(&RerankSample {
                        interaction: ex.index,
                        turn: t,
                        prefix: p.clone(),
                        candidate: c.clone(),
                        label: false,
                        features: pred.pooled.clone(),
                    })
                })
                .collect::<Result<Vec<f64>, _>>()?;
            let order = rerank(candidates.len(), &scores)?;
            chosen.push(order.first().map(|&k| candidates[k].clone()).unwrap_or_default());
        }
        out.push(chosen);
    }
    Ok(out)
}

fn load_reranker(cfg: &RunConfig, task_width: usize) -> Result<Reranker, PipelineError> {
    let path = &cfg.rerank.checkpoint;
    let vocab = Vocab::load(&vocab_path(path)).map_err(|e| checkpoint_err(path, e))?;
    let mut reranker = Reranker::new(vocab, task_width, cfg.rerank.embed_dim, cfg.rerank.hidden, cfg.seed);
    reranker.load_weights(path).map_err(|e| checkpoint_err(path, e))?;
    Ok(reranker)
}

/// Trains the reranker on balanced samples of the training split. Samples
/// come from the file written during training when mining was scheduled,
/// otherwise they are mined now from the checkpoint and written out.
/// Returns the per-epoch losses.
pub fn rerank_train(cfg: &RunConfig) -> Result<Vec<f64>, PipelineError> {
    let data = Data::load(cfg)?;
    let train_set = data.split(&cfg.data.train)?;
    let parser = load_parser(cfg, &cfg.checkpoint)?;
    let prepared = prepare(&train_set, &data.schemas)?;
    let samples = if cfg.rerank.mine_start_epoch.is_some() {
        let path = &cfg.rerank.samples;
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let records = parse_samples(&text).map_err(|source| PipelineError::Samples {
            path: path.display().to_string(),
            source,
        })?;
        let mut features: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
        let mut out = Vec::with_capacity(records.len());
        for r in records {
            let ex = prepared.get(r.interaction).filter(|ex| r.turn < ex.interaction.turns.len()).ok_or_else(|| {
                PipelineError::Samples {
                    path: path.display().to_string(),
                    source: RerankError::Parse {
                        line: 0,
                        message: format!("interaction {} turn {} not in the training split", r.interaction, r.turn),
                    },
                }
            })?;
            if let std::collections::btree_map::Entry::Vacant(e) = features.entry(r.interaction) {
                let mut tape = Tape::new(&parser.store);
                let f = parser.net.turn_features(&mut tape, ex.index, ex.interaction, ex.schema)?;
                e.insert(f);
            }
            out.push(RerankSample {
                interaction: r.interaction,
                turn: r.turn,
                prefix: prefix(ex.interaction, r.turn),
                candidate: r.candidate,
                label: r.label,
                features: features[&r.interaction][r.turn].clone(),
            });
        }
        out
    } else {
        let samples = mine(&decode_all(&parser, cfg, &prepared)?, &prepared);
        write_file(&cfg.rerank.samples, &format_samples(&samples))?;
        samples
    };
    let balanced = downsample_balance(&samples, cfg.seed);
    let candidates: Vec<String> = balanced.iter().map(|s| s.candidate.clone()).collect();
    let vocab = reranker_vocab(&train_set, &candidates);
    let mut reranker = Reranker::new(
        vocab,
        parser.net.config.state_width(),
        cfg.rerank.embed_dim,
        cfg.rerank.hidden,
        cfg.seed,
    );
    let losses = reranker.train(&balanced, cfg.rerank.epochs, cfg.rerank.lr, cfg.seed)?;
    write_file(&vocab_path(&cfg.rerank.checkpoint), &reranker.vocab.to_text())?;
    reranker.save(&cfg.rerank.checkpoint)?;
    Ok(losses)
}

fn interaction_of(golds: &[Interaction], index: usize) -> Result<&Interaction, PipelineError> {
    golds.get(index).ok_or(PipelineError::UnknownInteraction {
        index,
        count: golds.len(),
    })
}

/// Relation matrix of the context graph after every turn of one
/// interaction of the evaluation split.
pub fn link(cfg: &RunConfig, index: usize) -> Result<String, PipelineError> {
    let data = Data::load(cfg)?;
    let golds = data.split(cfg.eval_split())?;
    let interaction = interaction_of(&golds, index)?;
    let schema = &data.schemas[&interaction.database_id];
    let mut graph = ContextGraph::empty(schema);
    let mut out = format!("interaction {index}\n");
    for (t, turn) in interaction.turns.iter().enumerate() {
        graph = extend_graph(&graph, &turn.utterance_tokens, schema).map_err(ModelError::from)?;
        out.push_str(&format_relation_block(t, &graph));
    }
    Ok(out)
}

fn write_matrix(out: &mut String, name: &str, m: &Tensor) {
    let (rows, cols) = (m.rows(), m.cols());
    writeln!(out, "matrix {name} {rows} {cols}").expect("write to string");
    for r in 0..rows {
        let row: Vec<String> = (0..cols).map(|c| m.get(r, c).to_string()).collect();
        writeln!(out, "{}", row.join(" ")).expect("write to string");
    }
}

/// Decay weights and attention maps of every turn of one interaction,
/// as labeled numeric blocks.
pub fn export_attention(cfg: &RunConfig, index: usize) -> Result<String, PipelineError> {
    let data = Data::load(cfg)?;
    let golds = data.split(cfg.eval_split())?;
    let interaction = interaction_of(&golds, index)?;
    let schema = &data.schemas[&interaction.database_id];
    let parser = load_parser(cfg, &cfg.checkpoint)?;
    let mut tape = Tape::new(&parser.store);
    let turns = parser.net.explain_interaction(&mut tape, index, interaction, schema)?;
    let mut out = format!("interaction {index}\n");
    for (t, a) in turns.iter().enumerate() {
        writeln!(out, "turn {}", t + 1).expect("write to string");
        writeln!(out, "nodes {}", a.node_labels.join(" ")).expect("write to string");
        let decay: Vec<String> = a.decay.iter().map(f64::to_string).collect();
        writeln!(out, "decay {}", decay.join(" ")).expect("write to string");
        write_matrix(&mut out, "dcri.inner_alpha", &a.inner_alpha);
        write_matrix(&mut out, "dcri.utterance_alpha", &a.utterance_alpha);
        write_matrix(&mut out, "dcri.schema_alpha", &a.schema_alpha);
        for (l, (scores, alphas)) in a.dcre_scores.iter().zip(&a.dcre_alphas).enumerate() {
            for (h, (e, alpha)) in scores.iter().zip(alphas).enumerate() {
                write_matrix(&mut out, &format!("dcre.{l}.{h}.e"), e);
                write_matrix(&mut out, &format!("dcre.{l}.{h}.alpha"), alpha);
            }
        }
    }
    Ok(out)
}
