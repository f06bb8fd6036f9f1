//! Exact set match scoring: per-question clause matching, question match,
//! interaction match and per-turn accuracy.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::corpus::{parse_sql_clauses, ClauseDecomposition, Interaction};

/// Turns at or beyond this index share one bucket.
pub const LAST_TURN_BUCKET: usize = 5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("{what}: expected {expected}, found {found}")]
    LengthMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
}

/// Whether every clause's element set agrees.
pub fn clause_set_match(pred: &ClauseDecomposition, gold: &ClauseDecomposition) -> bool {
    pred == gold
}

/// Scores a predicted SQL string; unparseable predictions are wrong.
pub fn sql_match(pred: &str, gold: &ClauseDecomposition) -> bool {
    parse_sql_clauses(pred).is_ok_and(|p| clause_set_match(&p, gold))
}

/// Per-turn correctness for predictions grouped by interaction.
pub fn score_predictions(predictions: &[Vec<String>], golds: &[Interaction]) -> Result<Vec<Vec<bool>>, EvalError> {
    if predictions.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            what: "interactions".into(),
            expected: golds.len(),
            found: predictions.len(),
        });
    }
    predictions
        .iter()
        .zip(golds)
        .enumerate()
        .map(|(i, (pred, gold))| {
            if pred.len() != gold.turns.len() {
                return Err(EvalError::LengthMismatch {
                    what: format!("turns of interaction {i}"),
                    expected: gold.turns.len(),
                    found: pred.len(),
                });
            }
            Ok(pred
                .iter()
                .zip(&gold.turns)
                .map(|(p, t)| sql_match(p, &t.gold_clauses))
                .collect())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Count {
    pub correct: usize,
    pub total: usize,
}

impl Count {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    fn add(&mut self, ok: bool) {
        self.correct += ok as usize;
        self.total += 1;
    }
}

pub fn question_match(scores: &[Vec<bool>]) -> Count {
    let mut c = Count::default();
    scores.iter().flatten().for_each(|&ok| c.add(ok));
    c
}

pub fn interaction_match(scores: &[Vec<bool>]) -> Count {
    let mut c = Count::default();
    scores.iter().for_each(|turns| c.add(turns.iter().all(|&ok| ok)));
    c
}

/// Accuracy keyed by 1-based turn index, with `LAST_TURN_BUCKET` covering
/// that turn and every later one.
pub fn per_turn_report(scores: &[Vec<bool>]) -> BTreeMap<usize, Count> {
    let mut out: BTreeMap<usize, Count> = BTreeMap::new();
    for turns in scores {
        for (i, &ok) in turns.iter().enumerate() {
            out.entry((i + 1).min(LAST_TURN_BUCKET)).or_default().add(ok);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalReport {
    pub question_match: Count,
    pub interaction_match: Count,
    pub per_turn: BTreeMap<usize, Count>,
}

impl EvalReport {
    pub fn from_scores(scores: &[Vec<bool>]) -> Self {
        EvalReport {
            question_match: question_match(scores),
            interaction_match: interaction_match(scores),
            per_turn: per_turn_report(scores),
        }
    }

    pub fn evaluate(predictions: &[Vec<String>], golds: &[Interaction]) -> Result<Self, EvalError> {
        Ok(Self::from_scores(&score_predictions(predictions, golds)?))
    }
}

fn turn_label(bucket: usize) -> String {
    if bucket >= LAST_TURN_BUCKET {
        format!("turn_>={LAST_TURN_BUCKET}")
    } else {
        format!("turn_{bucket}")
    }
}

/// One line per metric: name, numerator, denominator, fraction.
impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut line = |name: &str, c: &Count| {
            writeln!(f, "{name}\t{}\t{}\t{:.6}", c.correct, c.total, c.fraction())
        };
        line("question_match", &self.question_match)?;
        line("interaction_match", &self.interaction_match)?;
        for (bucket, c) in &self.per_turn {
            line(&turn_label(*bucket), c)?;
        }
        Ok(())
    }
}
