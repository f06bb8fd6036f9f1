//! SQL subset AST, recursive-descent parser and reference resolution.

use std::collections::BTreeMap;

use super::sql_lexer::{lex, Lexeme};
use super::{Schema, SqlParseError};

pub(crate) const AGGREGATES: &[&str] = &["count", "max", "min", "avg", "sum"];

const RESERVED: &[&str] = &[
    "select", "from", "where", "group", "by", "order", "having", "limit", "and", "or", "not",
    "in", "like", "between", "join", "on", "as", "asc", "desc", "union", "intersect", "except",
    "distinct", "count", "max", "min", "avg", "sum", "is", "null", "exists",
];

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Operand {
    Column(String),
    Star,
    Value,
    Aggregate {
        func: String,
        distinct: bool,
        arg: Box<Operand>,
    },
    Arith(Box<Operand>, &'static str, Box<Operand>),
    Subquery(Box<Query>),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Predicate {
    pub left: Operand,
    pub op: String,
    pub right: Operand,
    pub upper: Option<Operand>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub(crate) struct Condition {
    pub predicates: Vec<Predicate>,
    /// Connector between predicate `k` and `k + 1`.
    pub connectors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum TableSource {
    Named { name: String, alias: Option<String> },
    Subquery { query: Box<Query>, alias: Option<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SelectItem {
    pub expr: Operand,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Query {
    pub distinct: bool,
    pub select: Vec<SelectItem>,
    pub from: Vec<TableSource>,
    pub join_on: Vec<Predicate>,
    pub where_: Option<Condition>,
    pub group_by: Vec<Operand>,
    pub having: Option<Condition>,
    pub order_by: Vec<(Operand, String)>,
    pub limit: bool,
    pub set_op: Option<(String, Box<Query>)>,
}

struct Parser {
    toks: Vec<Lexeme>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Lexeme> {
        self.toks.get(self.pos)
    }

    fn peek_word(&self, w: &str) -> bool {
        self.peek().is_some_and(|t| t.is_word(w))
    }

    fn peek_punct(&self, p: &str) -> bool {
        self.peek().is_some_and(|t| t.is_punct(p))
    }

    fn eat_word(&mut self, w: &str) -> bool {
        if self.peek_word(w) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.peek_punct(p) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_word(&mut self, w: &str) -> Result<(), SqlParseError> {
        if self.eat_word(w) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("expected '{w}'")))
        }
    }

    fn expect_punct(&mut self, p: &str) -> Result<(), SqlParseError> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("expected '{p}'")))
        }
    }

    fn unexpected(&self, what: &str) -> SqlParseError {
        match self.peek() {
            Some(t) => SqlParseError::new(format!("{what}, found '{}'", t.describe())),
            None => SqlParseError::new(format!("{what}, found end of query")),
        }
    }

    fn identifier(&mut self) -> Result<String, SqlParseError> {
        match self.peek() {
            Some(Lexeme::Word(w)) if !is_reserved(w) => {
                let w = w.clone();
                self.pos += 1;
                Ok(w)
            }
            _ => Err(self.unexpected("expected identifier")),
        }
    }

    fn query(&mut self) -> Result<Query, SqlParseError> {
        self.expect_word("select")?;
        let distinct = self.eat_word("distinct");
        let mut select = vec![SelectItem { expr: self.operand()? }];
        while self.eat_punct(",") {
            select.push(SelectItem { expr: self.operand()? });
        }
        self.expect_word("from")?;
        let mut from = vec![self.table_source()?];
        let mut join_on = Vec::new();
        loop {
            if self.eat_word("join") || self.eat_punct(",") {
                from.push(self.table_source()?);
            } else if self.eat_word("on") {
                join_on.push(self.predicate()?);
                while self.eat_word("and") {
                    join_on.push(self.predicate()?);
                }
            } else {
                break;
            }
        }
        let where_ = if self.eat_word("where") {
            Some(self.condition()?)
        } else {
            None
        };
        let mut group_by = Vec::new();
        if self.eat_word("group") {
            self.expect_word("by")?;
            group_by.push(self.operand()?);
            while self.eat_punct(",") {
                group_by.push(self.operand()?);
            }
        }
        let having = if self.eat_word("having") {
            Some(self.condition()?)
        } else {
            None
        };
        let mut order_by = Vec::new();
        if self.eat_word("order") {
            self.expect_word("by")?;
            loop {
                let expr = self.operand()?;
                let dir = if self.eat_word("desc") {
                    "desc"
                } else {
                    self.eat_word("asc");
                    "asc"
                };
                order_by.push((expr, dir.to_string()));
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        let limit = if self.eat_word("limit") {
            match self.peek() {
                Some(Lexeme::Number(_)) | Some(Lexeme::Str(_)) => {
                    self.pos += 1;
                }
                Some(t) if t.is_word("value") => self.pos += 1,
                _ => return Err(self.unexpected("expected limit value")),
            }
            true
        } else {
            false
        };
        let set_op = ["union", "intersect", "except"]
            .into_iter()
            .find(|op| self.peek_word(op))
            .map(|op| op.to_string());
        let set_op = match set_op {
            Some(op) => {
                self.pos += 1;
                Some((op, Box::new(self.query()?)))
            }
            None => None,
        };
        Ok(Query {
            distinct,
            select,
            from,
            join_on,
            where_,
            group_by,
            having,
            order_by,
            limit,
            set_op,
        })
    }

    fn table_source(&mut self) -> Result<TableSource, SqlParseError> {
        if self.eat_punct("(") {
            let query = self.query()?;
            self.expect_punct(")")?;
            let alias = self.alias()?;
            return Ok(TableSource::Subquery {
                query: Box::new(query),
                alias,
            });
        }
        let name = self.identifier()?;
        let alias = self.alias()?;
        Ok(TableSource::Named { name, alias })
    }

    fn alias(&mut self) -> Result<Option<String>, SqlParseError> {
        if self.eat_word("as") {
            return self.identifier().map(Some);
        }
        match self.peek() {
            Some(Lexeme::Word(w)) if !is_reserved(w) && !w.contains('.') => {
                let w = w.clone();
                self.pos += 1;
                Ok(Some(w))
            }
            _ => Ok(None),
        }
    }

    fn condition(&mut self) -> Result<Condition, SqlParseError> {
        let mut cond = Condition {
            predicates: vec![self.predicate()?],
            connectors: Vec::new(),
        };
        loop {
            let conn = if self.eat_word("and") {
                "and"
            } else if self.eat_word("or") {
                "or"
            } else {
                break;
            };
            cond.connectors.push(conn.to_string());
            cond.predicates.push(self.predicate()?);
        }
        Ok(cond)
    }

    fn predicate(&mut self) -> Result<Predicate, SqlParseError> {
        // parenthesized predicate groups are flattened
        let left = self.operand()?;
        let negated = self.eat_word("not");
        let op = match self.peek() {
            Some(Lexeme::Punct(p)) if ["=", "!=", "<>", "<", ">", "<=", ">="].contains(p) => {
                let p = if *p == "<>" { "!=" } else { *p };
                self.pos += 1;
                p.to_string()
            }
            Some(t) if t.is_word("in") || t.is_word("like") || t.is_word("between") => {
                let w = t.describe().to_ascii_lowercase();
                self.pos += 1;
                w
            }
            _ => return Err(self.unexpected("expected comparison operator")),
        };
        if negated && !(op == "in" || op == "like" || op == "between") {
            return Err(SqlParseError::new(format!("'not' cannot precede '{op}'")));
        }
        let right = self.operand()?;
        let upper = if op == "between" {
            self.expect_word("and")?;
            Some(self.operand()?)
        } else {
            None
        };
        let op = if negated { format!("not {op}") } else { op };
        Ok(Predicate {
            left,
            op,
            right,
            upper,
        })
    }

    fn operand(&mut self) -> Result<Operand, SqlParseError> {
        let mut left = self.atom()?;
        loop {
            let op = ["+", "-", "/", "*"].into_iter().find(|p| self.peek_punct(p));
            match op {
                Some(op) => {
                    self.pos += 1;
                    let right = self.atom()?;
                    left = Operand::Arith(Box::new(left), op, Box::new(right));
                }
                None => return Ok(left),
            }
        }
    }

    fn atom(&mut self) -> Result<Operand, SqlParseError> {
        let Some(tok) = self.peek().cloned() else {
            return Err(self.unexpected("expected operand"));
        };
        match tok {
            Lexeme::Number(_) | Lexeme::Str(_) => {
                self.pos += 1;
                Ok(Operand::Value)
            }
            Lexeme::Punct("-") => {
                self.pos += 1;
                match self.peek() {
                    Some(Lexeme::Number(_)) => {
                        self.pos += 1;
                        Ok(Operand::Value)
                    }
                    _ => Err(self.unexpected("expected number after '-'")),
                }
            }
            Lexeme::Punct("*") => {
                self.pos += 1;
                Ok(Operand::Star)
            }
            Lexeme::Punct("(") => {
                self.pos += 1;
                if self.peek_word("select") {
                    let q = self.query()?;
                    self.expect_punct(")")?;
                    Ok(Operand::Subquery(Box::new(q)))
                } else {
                    let inner = self.operand()?;
                    self.expect_punct(")")?;
                    Ok(inner)
                }
            }
            Lexeme::Word(w) => {
                let lower = w.to_ascii_lowercase();
                if AGGREGATES.contains(&lower.as_str()) {
                    self.pos += 1;
                    self.expect_punct("(")?;
                    let distinct = self.eat_word("distinct");
                    let arg = self.operand()?;
                    self.expect_punct(")")?;
                    return Ok(Operand::Aggregate {
                        func: lower,
                        distinct,
                        arg: Box::new(arg),
                    });
                }
                if lower == "value" {
                    self.pos += 1;
                    return Ok(Operand::Value);
                }
                if is_reserved(&w) {
                    return Err(self.unexpected("expected operand"));
                }
                self.pos += 1;
                Ok(Operand::Column(w))
            }
            Lexeme::Punct(_) => Err(self.unexpected("expected operand")),
        }
    }
}

fn is_reserved(w: &str) -> bool {
    RESERVED.iter().any(|r| r.eq_ignore_ascii_case(w))
}

/// Parses the supported SQL subset into an order-preserving AST.
pub(crate) fn parse_query(sql: &str) -> Result<Query, SqlParseError> {
    let toks = lex(sql)?;
    let mut depth = 0i64;
    for t in &toks {
        if t.is_punct("(") {
            depth += 1;
        } else if t.is_punct(")") {
            depth -= 1;
            if depth < 0 {
                return Err(SqlParseError::new("unbalanced parentheses"));
            }
        }
    }
    if depth != 0 {
        return Err(SqlParseError::new("unbalanced parentheses"));
    }
    let mut p = Parser { toks, pos: 0 };
    let q = p.query()?;
    while p.eat_punct(";") {}
    if p.pos != p.toks.len() {
        return Err(p.unexpected("unexpected trailing token"));
    }
    Ok(q)
}

/// Rewrites column references to lowercase `table.column` form.
///
/// Aliases resolve to their table names; unqualified columns take the
/// table that declares them (via `schema`) or, failing that, the sole
/// table of the enclosing `FROM`.
pub(crate) fn resolve(query: &mut Query, schema: Option<&Schema>) {
    resolve_scoped(query, schema, &BTreeMap::new());
}

fn resolve_scoped(query: &mut Query, schema: Option<&Schema>, outer: &BTreeMap<String, String>) {
    let mut aliases = outer.clone();
    let mut local_tables = Vec::new();
    for src in &mut query.from {
        match src {
            TableSource::Named { name, alias } => {
                let lname = name.to_ascii_lowercase();
                *name = lname.clone();
                aliases.insert(lname.clone(), lname.clone());
                if let Some(a) = alias.take() {
                    aliases.insert(a.to_ascii_lowercase(), lname.clone());
                }
                local_tables.push(lname);
            }
            TableSource::Subquery { query, alias } => {
                resolve_scoped(query, schema, outer);
                *alias = None;
            }
        }
    }
    let scope = Scope {
        aliases: &aliases,
        local_tables: &local_tables,
        schema,
    };
    for item in &mut query.select {
        scope.operand(&mut item.expr);
    }
    for p in &mut query.join_on {
        scope.predicate(p);
    }
    if let Some(c) = &mut query.where_ {
        c.predicates.iter_mut().for_each(|p| scope.predicate(p));
    }
    query.group_by.iter_mut().for_each(|o| scope.operand(o));
    if let Some(c) = &mut query.having {
        c.predicates.iter_mut().for_each(|p| scope.predicate(p));
    }
    query.order_by.iter_mut().for_each(|(o, _)| scope.operand(o));
    if let Some((_, q)) = &mut query.set_op {
        resolve_scoped(q, schema, outer);
    }
}

struct Scope<'a> {
    aliases: &'a BTreeMap<String, String>,
    local_tables: &'a [String],
    schema: Option<&'a Schema>,
}

impl Scope<'_> {
    fn predicate(&self, p: &mut Predicate) {
        self.operand(&mut p.left);
        self.operand(&mut p.right);
        if let Some(u) = &mut p.upper {
            self.operand(u);
        }
    }

    fn operand(&self, o: &mut Operand) {
        match o {
            Operand::Column(c) => *c = self.column(c),
            Operand::Aggregate { arg, .. } => self.operand(arg),
            Operand::Arith(a, _, b) => {
                self.operand(a);
                self.operand(b);
            }
            Operand::Subquery(q) => resolve_scoped(q, self.schema, self.aliases),
            Operand::Star | Operand::Value => {}
        }
    }

    fn column(&self, raw: &str) -> String {
        let lower = raw.to_ascii_lowercase();
        if let Some((prefix, col)) = lower.split_once('.') {
            let table = self.aliases.get(prefix).cloned().unwrap_or_else(|| prefix.to_string());
            return format!("{table}.{col}");
        }
        if let Some(schema) = self.schema {
            for t in self.local_tables {
                if schema.has_column(t, &lower) {
                    return format!("{t}.{lower}");
                }
            }
        }
        if self.local_tables.len() == 1 {
            return format!("{}.{lower}", self.local_tables[0]);
        }
        lower
    }
}
