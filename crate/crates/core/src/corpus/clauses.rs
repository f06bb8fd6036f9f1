use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::sql_ast::{parse_query, resolve, Condition, Operand, Predicate, Query, TableSource};
use super::SqlParseError;

/// Clause keys of a decomposed query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClauseKind {
    Select,
    From,
    Where,
    GroupBy,
    Having,
    OrderBy,
    Limit,
    SetOp,
}

impl ClauseKind {
    pub const ALL: [ClauseKind; 8] = [
        ClauseKind::Select,
        ClauseKind::From,
        ClauseKind::Where,
        ClauseKind::GroupBy,
        ClauseKind::Having,
        ClauseKind::OrderBy,
        ClauseKind::Limit,
        ClauseKind::SetOp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClauseKind::Select => "SELECT",
            ClauseKind::From => "FROM",
            ClauseKind::Where => "WHERE",
            ClauseKind::GroupBy => "GROUP_BY",
            ClauseKind::Having => "HAVING",
            ClauseKind::OrderBy => "ORDER_BY",
            ClauseKind::Limit => "LIMIT",
            ClauseKind::SetOp => "SET_OP",
        }
    }
}

const DISTINCT_MARK: &str = "distinct";
const ON_PREFIX: &str = "on ";

/// A query broken into per-clause element sets.
///
/// Elements are normalized SQL fragments: lowercase, literals replaced by
/// `value`, columns as `table.column`, nested queries as their own
/// canonical text in parentheses. WHERE/HAVING sets also carry the
/// connector words (`and`, `or`) that occur between predicates.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClauseDecomposition {
    clause_sets: BTreeMap<ClauseKind, BTreeSet<String>>,
}

impl Default for ClauseDecomposition {
    fn default() -> Self {
        ClauseDecomposition {
            clause_sets: ClauseKind::ALL.iter().map(|k| (*k, BTreeSet::new())).collect(),
        }
    }
}

impl ClauseDecomposition {
    pub fn clause(&self, kind: ClauseKind) -> &BTreeSet<String> {
        &self.clause_sets[&kind]
    }

    pub fn clause_sets(&self) -> &BTreeMap<ClauseKind, BTreeSet<String>> {
        &self.clause_sets
    }

    fn insert(&mut self, kind: ClauseKind, element: String) {
        self.clause_sets.get_mut(&kind).expect("all kinds present").insert(element);
    }

    pub fn nonempty_clauses(&self) -> usize {
        self.clause_sets.values().filter(|s| !s.is_empty()).count()
    }

    /// Re-serializes into SQL that parses back to an equal decomposition.
    pub fn to_canonical_sql(&self) -> String {
        let mut out = String::from("select ");
        let select = self.clause(ClauseKind::Select);
        if select.contains(DISTINCT_MARK) {
            out.push_str("distinct ");
        }
        let items: Vec<&str> = select
            .iter()
            .filter(|e| e.as_str() != DISTINCT_MARK)
            .map(String::as_str)
            .collect();
        out.push_str(&items.join(" , "));

        let from = self.clause(ClauseKind::From);
        let tables: Vec<&str> = from
            .iter()
            .filter(|e| !e.starts_with(ON_PREFIX))
            .map(String::as_str)
            .collect();
        let ons: Vec<&str> = from
            .iter()
            .filter_map(|e| e.strip_prefix(ON_PREFIX))
            .collect();
        out.push_str(" from ");
        out.push_str(&tables.join(" join "));
        if !ons.is_empty() {
            out.push_str(" on ");
            out.push_str(&ons.join(" and "));
        }
        if let Some(w) = canonical_condition(self.clause(ClauseKind::Where)) {
            out.push_str(" where ");
            out.push_str(&w);
        }
        let group = self.clause(ClauseKind::GroupBy);
        if !group.is_empty() {
            out.push_str(" group by ");
            out.push_str(&group.iter().cloned().collect::<Vec<_>>().join(" , "));
        }
        if let Some(h) = canonical_condition(self.clause(ClauseKind::Having)) {
            out.push_str(" having ");
            out.push_str(&h);
        }
        let order = self.clause(ClauseKind::OrderBy);
        if !order.is_empty() {
            out.push_str(" order by ");
            out.push_str(&order.iter().cloned().collect::<Vec<_>>().join(" , "));
        }
        if !self.clause(ClauseKind::Limit).is_empty() {
            out.push_str(" limit value");
        }
        // at most one set operation per level
        if let Some(op) = self.clause(ClauseKind::SetOp).iter().next() {
            let (word, rest) = op.split_once(' ').expect("set op element has a body");
            let body = rest
                .strip_prefix("( ")
                .and_then(|r| r.strip_suffix(" )"))
                .expect("set op body is parenthesized");
            out.push(' ');
            out.push_str(word);
            out.push(' ');
            out.push_str(body);
        }
        out
    }
}

fn canonical_condition(set: &BTreeSet<String>) -> Option<String> {
    let has_and = set.contains("and");
    let has_or = set.contains("or");
    let preds: Vec<&str> = set
        .iter()
        .filter(|e| e.as_str() != "and" && e.as_str() != "or")
        .map(String::as_str)
        .collect();
    let first = *preds.first()?;
    Some(match (has_and, has_or) {
        (false, false) => first.to_string(),
        (true, false) if preds.len() == 1 => format!("{first} and {first}"),
        (false, true) if preds.len() == 1 => format!("{first} or {first}"),
        (true, false) => preds.join(" and "),
        (false, true) => preds.join(" or "),
        (true, true) => format!("{first} or {first} and {}", preds.join(" and ")),
    })
}

impl fmt::Display for ClauseDecomposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_canonical_sql())
    }
}

/// Decomposes `sql` into normalized per-clause element sets.
pub fn parse_sql_clauses(sql: &str) -> Result<ClauseDecomposition, SqlParseError> {
    let mut q = parse_query(sql)?;
    resolve(&mut q, None);
    Ok(decompose(&q))
}

pub(crate) fn decompose(q: &Query) -> ClauseDecomposition {
    let mut d = ClauseDecomposition::default();
    if q.distinct {
        d.insert(ClauseKind::Select, DISTINCT_MARK.to_string());
    }
    for item in &q.select {
        d.insert(ClauseKind::Select, operand_text(&item.expr));
    }
    for src in &q.from {
        let text = match src {
            TableSource::Named { name, .. } => name.clone(),
            TableSource::Subquery { query, .. } => subquery_text(query),
        };
        d.insert(ClauseKind::From, text);
    }
    for p in &q.join_on {
        d.insert(ClauseKind::From, format!("{ON_PREFIX}{}", predicate_text(p)));
    }
    if let Some(c) = &q.where_ {
        insert_condition(&mut d, ClauseKind::Where, c);
    }
    for g in &q.group_by {
        d.insert(ClauseKind::GroupBy, operand_text(g));
    }
    if let Some(c) = &q.having {
        insert_condition(&mut d, ClauseKind::Having, c);
    }
    for (o, dir) in &q.order_by {
        d.insert(ClauseKind::OrderBy, format!("{} {dir}", operand_text(o)));
    }
    if q.limit {
        d.insert(ClauseKind::Limit, "value".to_string());
    }
    if let Some((op, right)) = &q.set_op {
        d.insert(ClauseKind::SetOp, format!("{op} {}", subquery_text(right)));
    }
    d
}

fn insert_condition(d: &mut ClauseDecomposition, kind: ClauseKind, c: &Condition) {
    for p in &c.predicates {
        d.insert(kind, predicate_text(p));
    }
    for conn in &c.connectors {
        d.insert(kind, conn.clone());
    }
}

fn subquery_text(q: &Query) -> String {
    format!("( {} )", decompose(q).to_canonical_sql())
}

pub(crate) fn operand_text(o: &Operand) -> String {
    match o {
        Operand::Column(c) => c.clone(),
        Operand::Star => "*".to_string(),
        Operand::Value => "value".to_string(),
        Operand::Aggregate {
            func,
            distinct,
            arg,
        } => {
            let d = if *distinct { "distinct " } else { "" };
            format!("{func} ( {d}{} )", operand_text(arg))
        }
        Operand::Arith(a, op, b) => format!("{} {op} {}", operand_text(a), operand_text(b)),
        Operand::Subquery(q) => subquery_text(q),
    }
}

fn predicate_text(p: &Predicate) -> String {
    let mut left = operand_text(&p.left);
    let mut right = operand_text(&p.right);
    if p.op == "=" && matches!(p.left, Operand::Column(_)) && matches!(p.right, Operand::Column(_)) && right < left {
        std::mem::swap(&mut left, &mut right);
    }
    match &p.upper {
        Some(u) => format!("{left} {} {right} and {}", p.op, operand_text(u)),
        None => format!("{left} {} {right}", p.op),
    }
}
