//! Dynamic contextualized schema graph: utterance tokens of every turn so far
//! plus schema headers, with typed relations between every pair of nodes.

use std::fmt;

use thiserror::Error;

use crate::corpus::{HeaderKind, Schema};

pub const MAX_NGRAM: usize = 5;
pub const STOPWORDS: [&str; 8] = ["the", "a", "an", "of", "is", "are", "what", "which"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RelationType {
    SameTable,
    ForeignKey,
    ForeignKeyRev,
    ExactMatchColumn,
    ExactMatchTable,
    PartialMatchColumn,
    PartialMatchTable,
    None,
    SelfLoop,
}

impl RelationType {
    pub const ALL: [RelationType; 9] = [
        RelationType::SameTable,
        RelationType::ForeignKey,
        RelationType::ForeignKeyRev,
        RelationType::ExactMatchColumn,
        RelationType::ExactMatchTable,
        RelationType::PartialMatchColumn,
        RelationType::PartialMatchTable,
        RelationType::None,
        RelationType::SelfLoop,
    ];
    pub const COUNT: usize = Self::ALL.len();

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            RelationType::SameTable => "SAME_TABLE",
            RelationType::ForeignKey => "FOREIGN_KEY",
            RelationType::ForeignKeyRev => "FOREIGN_KEY_REV",
            RelationType::ExactMatchColumn => "EXACT_MATCH_COLUMN",
            RelationType::ExactMatchTable => "EXACT_MATCH_TABLE",
            RelationType::PartialMatchColumn => "PARTIAL_MATCH_COLUMN",
            RelationType::PartialMatchTable => "PARTIAL_MATCH_TABLE",
            RelationType::None => "NONE",
            RelationType::SelfLoop => "SELF",
        }
    }
}

impl fmt::Display for RelationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("graph was built for database `{graph}` ({graph_headers} headers) but schema `{schema}` has {schema_headers}")]
    SchemaMismatch {
        graph: String,
        graph_headers: usize,
        schema: String,
        schema_headers: usize,
    },
}

/// Header-by-header relations within one schema.
pub fn build_internal_edges(schema: &Schema) -> Vec<Vec<RelationType>> {
    let m = schema.headers.len();
    let mut rel = vec![vec![RelationType::None; m]; m];
    for (i, a) in schema.headers.iter().enumerate() {
        for (j, b) in schema.headers.iter().enumerate() {
            rel[i][j] = if i == j {
                RelationType::SelfLoop
            } else if a.table_index == b.table_index
                && (a.kind == HeaderKind::Column || b.kind == HeaderKind::Column)
            {
                RelationType::SameTable
            } else {
                RelationType::None
            };
        }
    }
    let header_of_column = |c: usize| {
        schema
            .headers
            .iter()
            .position(|h| h.column_index == Some(c))
            .expect("every column has a header")
    };
    for &(from, to) in &schema.foreign_keys {
        let (a, b) = (header_of_column(from), header_of_column(to));
        if a != b {
            rel[a][b] = RelationType::ForeignKey;
            rel[b][a] = RelationType::ForeignKeyRev;
        }
    }
    rel
}

fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token)
}

fn contains_span(haystack: &[String], needle: &[String]) -> bool {
    needle.len() <= haystack.len() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Token-by-header relations for one turn's tokens.
pub fn build_interactive_edges(tokens: &[String], schema: &Schema) -> Vec<Vec<RelationType>> {
    let mut rel = vec![vec![RelationType::None; schema.headers.len()]; tokens.len()];
    for (h, header) in schema.headers.iter().enumerate() {
        let (exact, partial) = match header.kind {
            HeaderKind::Column => (RelationType::ExactMatchColumn, RelationType::PartialMatchColumn),
            HeaderKind::TableStar => (RelationType::ExactMatchTable, RelationType::PartialMatchTable),
        };
        let name = &header.name_tokens;
        for start in 0..tokens.len() {
            for len in 1..=MAX_NGRAM.min(tokens.len() - start) {
                let gram = &tokens[start..start + len];
                if gram.iter().all(|t| is_stopword(t)) || !contains_span(name, gram) {
                    continue;
                }
                let kind = if gram == name.as_slice() { exact } else { partial };
                for (k, token) in gram.iter().enumerate() {
                    if is_stopword(token) {
                        continue;
                    }
                    let slot = &mut rel[start + k][h];
                    if *slot != exact {
                        *slot = kind;
                    }
                }
            }
        }
    }
    rel
}

/// Nodes are all utterance tokens of turns `0..=i` in order, then all headers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextGraph {
    pub database_id: String,
    tokens: Vec<String>,
    turn_of_token: Vec<usize>,
    num_turns: usize,
    headers: Vec<String>,
    /// Row-major `num_nodes × num_nodes`.
    relations: Vec<RelationType>,
}

impl ContextGraph {
    /// Graph over the schema alone, before any turn.
    pub fn empty(schema: &Schema) -> Self {
        let internal = build_internal_edges(schema);
        ContextGraph {
            database_id: schema.database_id.clone(),
            tokens: Vec::new(),
            turn_of_token: Vec::new(),
            num_turns: 0,
            headers: schema.headers.iter().map(|h| h.text.clone()).collect(),
            relations: internal.into_iter().flatten().collect(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.tokens.len() + self.headers.len()
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn num_headers(&self) -> usize {
        self.headers.len()
    }

    pub fn num_turns(&self) -> usize {
        self.num_turns
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Zero-based turn of each token node.
    pub fn turn_of_token(&self) -> &[usize] {
        &self.turn_of_token
    }

    /// Turn index of node `i`, or `None` for header nodes.
    pub fn turn_of_node(&self, i: usize) -> Option<usize> {
        self.turn_of_token.get(i).copied()
    }

    pub fn node_labels(&self) -> Vec<String> {
        self.tokens.iter().chain(&self.headers).cloned().collect()
    }

    pub fn relation(&self, i: usize, j: usize) -> RelationType {
        self.relations[i * self.num_nodes() + j]
    }

    /// Relation ids, row-major, in node order.
    pub fn relation_matrix(&self) -> Vec<usize> {
        self.relations.iter().map(|r| r.id()).collect()
    }

    /// Header-by-header block.
    pub fn internal_submatrix(&self) -> Vec<RelationType> {
        let t = self.num_tokens();
        let n = self.num_nodes();
        (t..n)
            .flat_map(|i| (t..n).map(move |j| (i, j)))
            .map(|(i, j)| self.relation(i, j))
            .collect()
    }
}

/// Adds one turn's tokens, keeping every existing edge.
pub fn extend_graph(
    graph: &ContextGraph,
    new_tokens: &[String],
    schema: &Schema,
) -> Result<ContextGraph, GraphError> {
    if graph.database_id != schema.database_id || graph.num_headers() != schema.headers.len() {
        return Err(GraphError::SchemaMismatch {
            graph: graph.database_id.clone(),
            graph_headers: graph.num_headers(),
            schema: schema.database_id.clone(),
            schema_headers: schema.headers.len(),
        });
    }
    let old_t = graph.num_tokens();
    let old_n = graph.num_nodes();
    let added = new_tokens.len();
    let t = old_t + added;
    let n = old_n + added;
    let interactive = build_interactive_edges(new_tokens, schema);

    // Maps an old node index to its index in the grown graph.
    let shift = |i: usize| if i < old_t { i } else { i + added };
    let mut relations = vec![RelationType::None; n * n];
    for i in 0..old_n {
        for j in 0..old_n {
            relations[shift(i) * n + shift(j)] = graph.relations[i * old_n + j];
        }
    }
    for (k, row) in interactive.iter().enumerate() {
        let i = old_t + k;
        relations[i * n + i] = RelationType::SelfLoop;
        for (h, &r) in row.iter().enumerate() {
            relations[i * n + t + h] = r;
            relations[(t + h) * n + i] = r;
        }
    }

    let mut tokens = graph.tokens.clone();
    tokens.extend(new_tokens.iter().cloned());
    let mut turn_of_token = graph.turn_of_token.clone();
    turn_of_token.extend(std::iter::repeat_n(graph.num_turns, added));
    Ok(ContextGraph {
        database_id: graph.database_id.clone(),
        tokens,
        turn_of_token,
        num_turns: graph.num_turns + 1,
        headers: graph.headers.clone(),
        relations,
    })
}

/// Builds the graph for all `turns` at once.
pub fn build_graph(turns: &[Vec<String>], schema: &Schema) -> ContextGraph {
    let tokens: Vec<String> = turns.iter().flatten().cloned().collect();
    let turn_of_token: Vec<usize> = turns
        .iter()
        .enumerate()
        .flat_map(|(i, t)| std::iter::repeat_n(i, t.len()))
        .collect();
    let t = tokens.len();
    let m = schema.headers.len();
    let n = t + m;
    let internal = build_internal_edges(schema);
    let mut relations = vec![RelationType::None; n * n];
    let mut offset = 0;
    for turn in turns {
        let interactive = build_interactive_edges(turn, schema);
        for (k, row) in interactive.into_iter().enumerate() {
            for (h, r) in row.into_iter().enumerate() {
                relations[(offset + k) * n + t + h] = r;
                relations[(t + h) * n + offset + k] = r;
            }
        }
        offset += turn.len();
    }
    for i in 0..t {
        relations[i * n + i] = RelationType::SelfLoop;
    }
    for (a, row) in internal.into_iter().enumerate() {
        for (b, r) in row.into_iter().enumerate() {
            relations[(t + a) * n + t + b] = r;
        }
    }
    ContextGraph {
        database_id: schema.database_id.clone(),
        tokens,
        turn_of_token,
        num_turns: turns.len(),
        headers: schema.headers.iter().map(|h| h.text.clone()).collect(),
        relations,
    }
}

/// Line-oriented dump: a `turn` line, a `nodes` line, then one row of
/// relation ids per node.
pub fn format_relation_block(turn: usize, graph: &ContextGraph) -> String {
    let mut out = format!("turn {}\nnodes {}\n", turn + 1, graph.node_labels().join(" "));
    let n = graph.num_nodes();
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| graph.relation(i, j).id().to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}
