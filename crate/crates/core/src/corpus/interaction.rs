use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tokenize::tokenize_utterance;
use super::{parse_sql_clauses, ClauseDecomposition, CorpusError, Schema};

#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub utterance: String,
    pub utterance_tokens: Vec<String>,
    pub gold_sql: String,
    pub gold_clauses: ClauseDecomposition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Interaction {
    pub database_id: String,
    pub turns: Vec<Turn>,
}

impl Interaction {
    pub fn num_tokens(&self) -> usize {
        self.turns.iter().map(|t| t.utterance_tokens.len()).sum()
    }
}

/// On-disk shape of one interaction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawInteraction {
    #[serde(alias = "db_id")]
    pub database_id: String,
    #[serde(alias = "interaction")]
    pub turns: Vec<RawTurn>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawTurn {
    pub utterance: String,
    #[serde(alias = "sql")]
    pub query: String,
}

impl Turn {
    pub fn new(utterance: &str, gold_sql: &str) -> Result<Self, super::SqlParseError> {
        Ok(Turn {
            utterance: utterance.to_string(),
            utterance_tokens: tokenize_utterance(utterance),
            gold_sql: gold_sql.to_string(),
            gold_clauses: parse_sql_clauses(gold_sql)?,
        })
    }
}

pub fn parse_interactions(
    text: &str,
    origin: &str,
    schemas: &BTreeMap<String, Schema>,
) -> Result<Vec<Interaction>, CorpusError> {
    let raws: Vec<RawInteraction> = serde_json::from_str(text).map_err(|e| CorpusError::Parse {
        origin: origin.to_string(),
        line: e.line(),
        field: format!("column {}", e.column()),
        message: e.to_string(),
    })?;
    raws.into_iter()
        .enumerate()
        .map(|(i, raw)| convert(i, raw, origin, schemas))
        .collect()
}

fn convert(
    index: usize,
    raw: RawInteraction,
    origin: &str,
    schemas: &BTreeMap<String, Schema>,
) -> Result<Interaction, CorpusError> {
    if !schemas.contains_key(&raw.database_id) {
        return Err(CorpusError::UnknownDatabase {
            interaction: index,
            database_id: raw.database_id,
        });
    }
    if raw.turns.is_empty() {
        return Err(CorpusError::parse(origin, &format!("[{index}].turns"), "interaction has no turns"));
    }
    let mut turns = Vec::with_capacity(raw.turns.len());
    for (t, rt) in raw.turns.iter().enumerate() {
        let turn = Turn::new(&rt.utterance, &rt.query).map_err(|source| CorpusError::SqlParse {
            interaction: index,
            turn: t,
            source,
        })?;
        if turn.utterance_tokens.is_empty() {
            return Err(CorpusError::parse(
                origin,
                &format!("[{index}].turns[{t}].utterance"),
                "utterance has no tokens",
            ));
        }
        turns.push(turn);
    }
    Ok(Interaction {
        database_id: raw.database_id,
        turns,
    })
}

pub fn load_interactions(
    path: &Path,
    schemas: &BTreeMap<String, Schema>,
) -> Result<Vec<Interaction>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_interactions(&text, &path.display().to_string(), schemas)
}

pub fn to_raw(interactions: &[Interaction]) -> Vec<RawInteraction> {
    interactions
        .iter()
        .map(|i| RawInteraction {
            database_id: i.database_id.clone(),
            turns: i
                .turns
                .iter()
                .map(|t| RawTurn {
                    utterance: t.utterance.clone(),
                    query: t.gold_sql.clone(),
                })
                .collect(),
        })
        .collect()
}
