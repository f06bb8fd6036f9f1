use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tokenize::name_tokens;
use super::CorpusError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeaderKind {
    TableStar,
    Column,
}

/// One formatted schema item, `[table.column]` or `[table.*]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaHeader {
    pub text: String,
    pub kind: HeaderKind,
    pub table_index: usize,
    pub column_index: Option<usize>,
    /// Words of the whole header (table words, then column words or `*`).
    pub tokens: Vec<String>,
    /// Words of the column name, or of the table name for a star header.
    pub name_tokens: Vec<String>,
}

impl SchemaHeader {
    /// Reference as written in SQL: `table.column`, or `table.*`.
    pub fn sql_reference(&self, schema: &Schema) -> String {
        let table = &schema.tables[self.table_index];
        match self.column_index {
            Some(c) => format!("{table}.{}", schema.columns[c].1),
            None => format!("{table}.*"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub database_id: String,
    /// Table identifiers, lowercase with `_` for spaces.
    pub tables: Vec<String>,
    /// `(table_index, column identifier)`.
    pub columns: Vec<(usize, String)>,
    /// `(column_index, referenced column_index)`.
    pub foreign_keys: Vec<(usize, usize)>,
    /// Star header of each table followed by its columns, table by table.
    pub headers: Vec<SchemaHeader>,
}

pub(crate) fn identifier(name: &str) -> String {
    name.trim()
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join("_")
}

/// Builds headers in deterministic order: for each table in file order its
/// `[table.*]`, then its columns in file order.
pub fn format_headers(tables: &[String], columns: &[(usize, String)]) -> Vec<SchemaHeader> {
    let mut headers = Vec::with_capacity(tables.len() + columns.len());
    for (t, table) in tables.iter().enumerate() {
        let table_words = name_tokens(table);
        let mut tokens = table_words.clone();
        tokens.push("*".to_string());
        headers.push(SchemaHeader {
            text: format!("[{table}.*]"),
            kind: HeaderKind::TableStar,
            table_index: t,
            column_index: None,
            tokens,
            name_tokens: table_words.clone(),
        });
        for (c, (ti, col)) in columns.iter().enumerate() {
            if *ti != t {
                continue;
            }
            let col_words = name_tokens(col);
            let mut tokens = table_words.clone();
            tokens.extend(col_words.iter().cloned());
            headers.push(SchemaHeader {
                text: format!("[{table}.{col}]"),
                kind: HeaderKind::Column,
                table_index: t,
                column_index: Some(c),
                tokens,
                name_tokens: col_words,
            });
        }
    }
    headers
}

impl Schema {
    pub fn new(
        database_id: impl Into<String>,
        tables: Vec<String>,
        columns: Vec<(usize, String)>,
        foreign_keys: Vec<(usize, usize)>,
    ) -> Result<Self, CorpusError> {
        let database_id = database_id.into();
        if tables.is_empty() {
            return Err(CorpusError::parse(&database_id, "table_names", "schema has no tables"));
        }
        let tables: Vec<String> = tables.iter().map(|t| identifier(t)).collect();
        let columns: Vec<(usize, String)> =
            columns.into_iter().map(|(t, c)| (t, identifier(&c))).collect();
        for (i, (t, name)) in columns.iter().enumerate() {
            if *t >= tables.len() {
                return Err(CorpusError::parse(
                    &database_id,
                    &format!("column_names[{i}]"),
                    &format!("table index {t} out of range for column {name}"),
                ));
            }
            if name.is_empty() {
                return Err(CorpusError::parse(&database_id, &format!("column_names[{i}]"), "empty column name"));
            }
        }
        for (a, b) in &foreign_keys {
            for idx in [a, b] {
                if *idx >= columns.len() {
                    return Err(CorpusError::InvalidForeignKey {
                        database_id: database_id.clone(),
                        column: *idx,
                        num_columns: columns.len(),
                    });
                }
            }
        }
        let headers = format_headers(&tables, &columns);
        Ok(Schema {
            database_id,
            tables,
            columns,
            foreign_keys,
            headers,
        })
    }

    pub fn num_headers(&self) -> usize {
        self.headers.len()
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        self.tables.iter().position(|t| t == name)
    }

    pub fn has_column(&self, table: &str, column: &str) -> bool {
        self.table_index(table)
            .is_some_and(|t| self.columns.iter().any(|(ti, c)| *ti == t && c == column))
    }

    /// Header index of `table.column` or `table.*`.
    pub fn header_for_reference(&self, reference: &str) -> Option<usize> {
        let (table, col) = reference.split_once('.')?;
        let t = self.table_index(table)?;
        self.headers.iter().position(|h| {
            h.table_index == t
                && match h.column_index {
                    None => col == "*",
                    Some(c) => self.columns[c].1 == col,
                }
        })
    }

    pub fn star_header(&self, table_index: usize) -> usize {
        self.headers
            .iter()
            .position(|h| h.table_index == table_index && h.kind == HeaderKind::TableStar)
            .expect("every table has a star header")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawSchema {
    #[serde(alias = "database_id")]
    db_id: String,
    table_names: Vec<String>,
    column_names: Vec<(i64, String)>,
    #[serde(default)]
    foreign_keys: Vec<(usize, usize)>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SchemaDocument {
    Many(Vec<RawSchema>),
    One(RawSchema),
}

/// Parses a schema document: one schema object or an array of them.
///
/// Column entries with a negative table index (the benchmark's global `*`)
/// are dropped and foreign-key indices are remapped accordingly.
pub fn parse_schemas(text: &str, origin: &str) -> Result<Vec<Schema>, CorpusError> {
    let doc: SchemaDocument = serde_json::from_str(text).map_err(|e| CorpusError::Parse {
        origin: origin.to_string(),
        line: e.line(),
        field: format!("column {}", e.column()),
        message: e.to_string(),
    })?;
    let raws = match doc {
        SchemaDocument::Many(v) => v,
        SchemaDocument::One(r) => vec![r],
    };
    raws.into_iter().map(convert).collect()
}

fn convert(raw: RawSchema) -> Result<Schema, CorpusError> {
    let mut remap = Vec::with_capacity(raw.column_names.len());
    let mut columns = Vec::new();
    for (t, name) in raw.column_names {
        if t < 0 {
            remap.push(None);
        } else {
            remap.push(Some(columns.len()));
            columns.push((t as usize, name));
        }
    }
    let mut fks = Vec::with_capacity(raw.foreign_keys.len());
    for (a, b) in raw.foreign_keys {
        let map = |i: usize| match remap.get(i) {
            Some(Some(j)) => Ok(*j),
            _ => Err(CorpusError::InvalidForeignKey {
                database_id: raw.db_id.clone(),
                column: i,
                num_columns: remap.len(),
            }),
        };
        fks.push((map(a)?, map(b)?));
    }
    Schema::new(raw.db_id, raw.table_names, columns, fks)
}

/// JSON array of schemas in the shape [`parse_schemas`] reads.
pub fn format_schemas(schemas: &[Schema]) -> String {
    let raws: Vec<RawSchema> = schemas
        .iter()
        .map(|s| RawSchema {
            db_id: s.database_id.clone(),
            table_names: s.tables.clone(),
            column_names: s.columns.iter().map(|(t, c)| (*t as i64, c.clone())).collect(),
            foreign_keys: s.foreign_keys.clone(),
        })
        .collect();
    serde_json::to_string_pretty(&raws).expect("schemas serialize")
}

/// Loads the single schema in `path` (or the first, when the file holds
/// several).
pub fn load_schema(path: &Path) -> Result<Schema, CorpusError> {
    let mut all = load_schemas(path)?;
    if all.is_empty() {
        return Err(CorpusError::parse(&path.display().to_string(), "", "no schema in file"));
    }
    Ok(all.swap_remove(0))
}

pub fn load_schemas(path: &Path) -> Result<Vec<Schema>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_schemas(&text, &path.display().to_string())
}
