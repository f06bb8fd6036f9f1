//! Decoder output space: SQL keywords followed by the headers of the
//! current schema.

use super::sql_ast::{parse_query, resolve, Condition, Operand, Predicate, Query, TableSource};
use super::{Schema, SqlParseError};

/// Keywords the decoder can emit; index 0 is end-of-sequence.
pub const SQL_KEYWORDS: &[&str] = &[
    "<eos>", "select", "from", "where", "group", "by", "order", "having", "limit", "and", "or",
    "not", "in", "like", "between", "join", "on", "asc", "desc", "union", "intersect", "except",
    "distinct", "count", "max", "min", "avg", "sum", "=", "!=", "<", ">", "<=", ">=", "+", "-",
    "/", "(", ")", ",", "*", "value",
];

pub const EOS_KEYWORD: usize = 0;

pub fn keyword_id(word: &str) -> Option<usize> {
    SQL_KEYWORDS.iter().position(|k| *k == word)
}

pub fn num_keywords() -> usize {
    SQL_KEYWORDS.len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OutputToken {
    Keyword(usize),
    Header(usize),
}

impl OutputToken {
    pub const EOS: OutputToken = OutputToken::Keyword(EOS_KEYWORD);

    /// Position in the joint `keywords ++ headers` space.
    pub fn joint_id(self) -> usize {
        match self {
            OutputToken::Keyword(k) => k,
            OutputToken::Header(h) => num_keywords() + h,
        }
    }

    pub fn from_joint_id(id: usize) -> Self {
        if id < num_keywords() {
            OutputToken::Keyword(id)
        } else {
            OutputToken::Header(id - num_keywords())
        }
    }
}

struct Linearizer<'a> {
    schema: &'a Schema,
    out: Vec<OutputToken>,
}

impl Linearizer<'_> {
    fn kw(&mut self, w: &str) {
        self.out
            .push(OutputToken::Keyword(keyword_id(w).unwrap_or_else(|| panic!("keyword {w}"))));
    }

    fn reference(&mut self, r: &str) -> Result<(), SqlParseError> {
        let h = self
            .schema
            .header_for_reference(r)
            .ok_or_else(|| SqlParseError::new(format!("'{r}' is not in schema {}", self.schema.database_id)))?;
        self.out.push(OutputToken::Header(h));
        Ok(())
    }

    fn query(&mut self, q: &Query) -> Result<(), SqlParseError> {
        self.kw("select");
        if q.distinct {
            self.kw("distinct");
        }
        for (i, item) in q.select.iter().enumerate() {
            if i > 0 {
                self.kw(",");
            }
            self.operand(&item.expr)?;
        }
        self.kw("from");
        for (i, src) in q.from.iter().enumerate() {
            if i > 0 {
                self.kw("join");
            }
            match src {
                TableSource::Named { name, .. } => {
                    let t = self
                        .schema
                        .table_index(name)
                        .ok_or_else(|| SqlParseError::new(format!("unknown table '{name}'")))?;
                    self.out.push(OutputToken::Header(self.schema.star_header(t)));
                }
                TableSource::Subquery { query, .. } => {
                    self.kw("(");
                    self.query(query)?;
                    self.kw(")");
                }
            }
        }
        for (i, p) in q.join_on.iter().enumerate() {
            self.kw(if i == 0 { "on" } else { "and" });
            self.predicate(p)?;
        }
        if let Some(c) = &q.where_ {
            self.kw("where");
            self.condition(c)?;
        }
        if !q.group_by.is_empty() {
            self.kw("group");
            self.kw("by");
            for (i, g) in q.group_by.iter().enumerate() {
                if i > 0 {
                    self.kw(",");
                }
                self.operand(g)?;
            }
        }
        if let Some(c) = &q.having {
            self.kw("having");
            self.condition(c)?;
        }
        if !q.order_by.is_empty() {
            self.kw("order");
            self.kw("by");
            for (i, (o, dir)) in q.order_by.iter().enumerate() {
                if i > 0 {
                    self.kw(",");
                }
                self.operand(o)?;
                if dir == "desc" {
                    self.kw("desc");
                }
            }
        }
        if q.limit {
            self.kw("limit");
            self.kw("value");
        }
        if let Some((op, right)) = &q.set_op {
            self.kw(op);
            self.query(right)?;
        }
        Ok(())
    }

    fn condition(&mut self, c: &Condition) -> Result<(), SqlParseError> {
        for (i, p) in c.predicates.iter().enumerate() {
            if i > 0 {
                let conn = c.connectors[i - 1].clone();
                self.kw(&conn);
            }
            self.predicate(p)?;
        }
        Ok(())
    }

    fn predicate(&mut self, p: &Predicate) -> Result<(), SqlParseError> {
        self.operand(&p.left)?;
        for w in p.op.split(' ') {
            self.kw(w);
        }
        self.operand(&p.right)?;
        if let Some(u) = &p.upper {
            self.kw("and");
            self.operand(u)?;
        }
        Ok(())
    }

    fn operand(&mut self, o: &Operand) -> Result<(), SqlParseError> {
        match o {
            Operand::Column(c) => self.reference(c)?,
            Operand::Star => self.kw("*"),
            Operand::Value => self.kw("value"),
            Operand::Aggregate { func, distinct, arg } => {
                self.kw(func);
                self.kw("(");
                if *distinct {
                    self.kw("distinct");
                }
                self.operand(arg)?;
                self.kw(")");
            }
            Operand::Arith(a, op, b) => {
                self.operand(a)?;
                self.kw(op);
                self.operand(b)?;
            }
            Operand::Subquery(q) => {
                self.kw("(");
                self.query(q)?;
                self.kw(")");
            }
        }
        Ok(())
    }
}

/// Converts SQL into decoder targets (without the trailing end token).
pub fn sql_to_output_tokens(sql: &str, schema: &Schema) -> Result<Vec<OutputToken>, SqlParseError> {
    let mut q = parse_query(sql)?;
    resolve(&mut q, Some(schema));
    let mut lin = Linearizer {
        schema,
        out: Vec::new(),
    };
    lin.query(&q)?;
    Ok(lin.out)
}

/// Renders decoder tokens as SQL text. A table's star header right after
/// `from`, `join` or `,` in a from-list renders as the bare table name.
pub fn render_output_tokens(tokens: &[OutputToken], schema: &Schema) -> String {
    let mut words: Vec<String> = Vec::with_capacity(tokens.len());
    let mut in_from = false;
    for tok in tokens {
        match *tok {
            OutputToken::Keyword(k) if k == EOS_KEYWORD => break,
            OutputToken::Keyword(k) => {
                let w = SQL_KEYWORDS[k];
                match w {
                    "from" | "join" => in_from = true,
                    "," | "(" => {}
                    _ => in_from = false,
                }
                words.push(w.to_string());
            }
            OutputToken::Header(h) => {
                let header = &schema.headers[h.min(schema.headers.len().saturating_sub(1))];
                let after_from = in_from
                    && words.last().is_some_and(|w| w == "from" || w == "join" || w == ",");
                if header.column_index.is_none() && after_from {
                    words.push(schema.tables[header.table_index].clone());
                } else {
                    words.push(header.sql_reference(schema));
                }
            }
        }
    }
    words.join(" ")
}
