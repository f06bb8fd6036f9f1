//! Datasets, schemas, SQL clause decomposition and vocabularies.

mod clauses;
mod interaction;
mod output;
mod schema;
mod sql_ast;
mod sql_lexer;
mod tokenize;
mod vocab;

use std::collections::BTreeMap;

pub use clauses::{parse_sql_clauses, ClauseDecomposition, ClauseKind};
pub use interaction::{
    load_interactions, parse_interactions, to_raw, Interaction, RawInteraction, RawTurn, Turn,
};
pub use output::{
    keyword_id, num_keywords, render_output_tokens, sql_to_output_tokens, OutputToken,
    EOS_KEYWORD, SQL_KEYWORDS,
};
pub use schema::{format_headers, format_schemas, load_schema, load_schemas, parse_schemas, HeaderKind, Schema, SchemaHeader};
pub use tokenize::{name_tokens, tokenize_utterance};
pub use vocab::{build_vocab, build_vocab_with_schemas, Vocab, CLS, EOS, PAD, SEP, UNK};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message}")]
pub struct SqlParseError {
    pub message: String,
}

impl SqlParseError {
    pub fn new(message: impl Into<String>) -> Self {
        SqlParseError {
            message: message.into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{origin}: line {line}, {field}: {message}")]
    Parse {
        origin: String,
        line: usize,
        field: String,
        message: String,
    },
    #[error("schema {database_id}: foreign key column {column} out of range ({num_columns} columns)")]
    InvalidForeignKey {
        database_id: String,
        column: usize,
        num_columns: usize,
    },
    #[error("interaction {interaction}: unknown database '{database_id}'")]
    UnknownDatabase {
        interaction: usize,
        database_id: String,
    },
    #[error("interaction {interaction}, turn {turn}: {source}")]
    SqlParse {
        interaction: usize,
        turn: usize,
        source: SqlParseError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CorpusError {
    pub(crate) fn parse(origin: &str, field: &str, message: &str) -> Self {
        CorpusError::Parse {
            origin: origin.to_string(),
            line: 0,
            field: field.to_string(),
            message: message.to_string(),
        }
    }
}

pub fn schema_map(schemas: Vec<Schema>) -> BTreeMap<String, Schema> {
    schemas.into_iter().map(|s| (s.database_id.clone(), s)).collect()
}
