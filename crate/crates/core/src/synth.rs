//! Seeded synthetic schemas and interactions for tests and smoke runs.

use rand::seq::SliceRandom;
use rand::Rng as _;

use ctxparse_autodiff::Rng;

use std::path::{Path, PathBuf};

use crate::corpus::{format_schemas, to_raw, Interaction, Schema, Turn};
use crate::reranker::CandidateGroup;

/// One table the templates talk about: a text column and a numeric one.
#[derive(Debug, Clone)]
struct Entity {
    table: &'static str,
    text: &'static str,
    numbers: [&'static str; 2],
}

struct Template {
    database_id: &'static str,
    entities: Vec<Entity>,
}

fn templates() -> Vec<Template> {
    vec![
        Template {
            database_id: "concert_singer",
            entities: vec![
                Entity { table: "singer", text: "name", numbers: ["age", "net_worth"] },
                Entity { table: "concert", text: "concert_name", numbers: ["year", "capacity"] },
            ],
        },
        Template {
            database_id: "pets",
            entities: vec![
                Entity { table: "student", text: "major", numbers: ["grade", "height"] },
                Entity { table: "pet", text: "pet_type", numbers: ["weight", "pet_age"] },
            ],
        },
        Template {
            database_id: "flights",
            entities: vec![
                Entity { table: "airline", text: "airline_name", numbers: ["fleet_size", "founded"] },
                Entity { table: "flight", text: "destination", numbers: ["distance", "price"] },
            ],
        },
    ]
}

fn schema_of(t: &Template) -> Schema {
    let mut tables = Vec::new();
    let mut columns = Vec::new();
    let mut id_columns = Vec::new();
    for (i, e) in t.entities.iter().enumerate() {
        tables.push(e.table.to_string());
        id_columns.push(columns.len());
        columns.push((i, format!("{}_id", e.table)));
        columns.push((i, e.text.to_string()));
        columns.extend(e.numbers.iter().map(|n| (i, n.to_string())));
    }
    // the second table points at the first
    columns.push((1, format!("{}_id", t.entities[0].table)));
    let fk = vec![(columns.len() - 1, id_columns[0])];
    Schema::new(t.database_id, tables, columns, fk).expect("template schemas are well formed")
}

/// The three template schemas, each with two tables joined by a foreign key.
pub fn template_schemas() -> Vec<Schema> {
    templates().iter().map(schema_of).collect()
}

fn words(identifier: &str) -> String {
    identifier.replace('_', " ")
}

/// Query state accumulated across the turns of one interaction.
#[derive(Debug, Clone)]
struct QueryState {
    table: &'static str,
    select: Vec<String>,
    filter: Option<(String, &'static str, u32)>,
    order: Option<(String, &'static str)>,
    count: bool,
}

impl QueryState {
    fn new(table: &'static str, column: &str) -> Self {
        QueryState {
            table,
            select: vec![format!("{table}.{column}")],
            filter: None,
            order: None,
            count: false,
        }
    }

    fn sql(&self) -> String {
        let select = if self.count {
            "count(*)".to_string()
        } else {
            self.select.join(", ")
        };
        let mut sql = format!("SELECT {select} FROM {}", self.table);
        if let Some((col, op, v)) = &self.filter {
            sql.push_str(&format!(" WHERE {col} {op} {v}"));
        }
        if let (Some((col, dir)), false) = (&self.order, self.count) {
            sql.push_str(&format!(" ORDER BY {col} {dir}"));
        }
        sql
    }
}

fn turn(utterance: &str, sql: &str) -> Turn {
    Turn::new(utterance, sql).expect("synthetic SQL parses")
}

fn opening(rng: &mut Rng, e: &Entity) -> (String, QueryState) {
    let utterance = match rng.gen_range(0..3) {
        0 => format!("show the {} of every {}", words(e.text), words(e.table)),
        1 => format!("list each {} {}", words(e.table), words(e.text)),
        _ => format!("what is the {} of all {} records", words(e.text), words(e.table)),
    };
    (utterance, QueryState::new(e.table, e.text))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FollowUp {
    Filter,
    AddColumn,
    Order,
    Count,
}

fn follow_up(rng: &mut Rng, kind: FollowUp, e: &Entity, state: &mut QueryState) -> String {
    let number = e.numbers[rng.gen_range(0..2)];
    let col = format!("{}.{number}", e.table);
    match kind {
        FollowUp::Filter => {
            let v = rng.gen_range(10..90);
            if rng.gen_bool(0.5) {
                state.filter = Some((col, ">", v));
                format!("which of them have {} above {v}", words(number))
            } else {
                state.filter = Some((col, "<", v));
                format!("only those with {} below {v}", words(number))
            }
        }
        FollowUp::AddColumn => {
            state.select.push(col);
            format!("also show their {}", words(number))
        }
        FollowUp::Order => {
            if rng.gen_bool(0.5) {
                state.order = Some((col, "ASC"));
                format!("sort them by {}", words(number))
            } else {
                state.order = Some((col, "DESC"));
                format!("sort them by {} from highest to lowest", words(number))
            }
        }
        FollowUp::Count => {
            state.count = true;
            "how many of them are there".to_string()
        }
    }
}

/// Interactions of 2–4 turns whose follow-ups refer back with "them",
/// "their", "those", spread over the three template schemas.
pub fn coreference_corpus(rng: &mut Rng, count: usize) -> (Vec<Schema>, Vec<Interaction>) {
    let temps = templates();
    let schemas = template_schemas();
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let t = &temps[k % temps.len()];
        let e = t.entities.choose(rng).expect("templates have entities");
        let n_turns = rng.gen_range(2..=4);
        let (utt, mut state) = opening(rng, e);
        let mut turns = vec![turn(&utt, &state.sql())];
        let mut pool = [FollowUp::Filter, FollowUp::AddColumn, FollowUp::Order];
        pool.shuffle(rng);
        for i in 1..n_turns {
            let kind = if i == n_turns - 1 && rng.gen_bool(0.3) {
                FollowUp::Count
            } else {
                pool[(i - 1) % pool.len()]
            };
            let utt = follow_up(rng, kind, e, &mut state);
            turns.push(turn(&utt, &state.sql()));
        }
        out.push(Interaction {
            database_id: t.database_id.to_string(),
            turns,
        });
    }
    (schemas, out)
}

/// Schema whose tables share column names, so that a follow-up such as
/// "which of them are older than 30" is only resolved by the latest
/// table mention.
pub fn performer_schema() -> Schema {
    let tables = ["singer", "musician", "dancer"];
    let mut columns = Vec::new();
    for (i, t) in tables.iter().enumerate() {
        columns.push((i, format!("{t}_id")));
        for c in ["name", "age", "rating"] {
            columns.push((i, c.to_string()));
        }
    }
    Schema::new("performers", tables.iter().map(|t| t.to_string()).collect(), columns, Vec::new())
        .expect("performer schema is well formed")
}

/// Interactions in which later turns overrule earlier ones: the topic
/// switches to another table, and corrections replace the filter column
/// of the previous turn. Follow-ups never name their table, so it has to
/// come from the most recent switch, not from older mentions.
pub fn intent_switch_corpus(rng: &mut Rng, count: usize) -> (Schema, Vec<Interaction>) {
    let schema = performer_schema();
    let tables = ["singer", "musician", "dancer"];
    let columns = ["age", "rating"];
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let n_turns = rng.gen_range(4..=6);
        let mut turns = Vec::with_capacity(n_turns);
        let mut table = *tables.choose(rng).expect("nonempty");
        let mut filter: Option<(&str, u32)> = None;
        turns.push(turn(&format!("show the name of every {table}"), &format!("SELECT {table}.name FROM {table}")));
        for i in 1..n_turns {
            // odd turns follow up, even turns mostly switch; turn 2 always
            // does, so every interaction changes topic at least once
            let switch = i == 2 || (i % 2 == 0 && (filter.is_none() || rng.gen_bool(0.6)));
            let utterance = if switch {
                let others: Vec<&str> = tables.iter().copied().filter(|t| *t != table).collect();
                table = others.choose(rng).expect("three tables");
                filter = None;
                format!("now show the name of every {table}")
            } else if let Some((col, _)) = filter.filter(|_| i % 2 == 0 || rng.gen_bool(0.5)) {
                let other = if col == "age" { "rating" } else { "age" };
                let v = rng.gen_range(10..90);
                filter = Some((other, v));
                format!("no , {other} above {v} instead")
            } else {
                let col = *columns.choose(rng).expect("nonempty");
                let v = rng.gen_range(10..90);
                filter = Some((col, v));
                format!("which of them have {col} above {v}")
            };
            let sql = match filter {
                Some((col, v)) => format!("SELECT {table}.name FROM {table} WHERE {table}.{col} > {v}"),
                None => format!("SELECT {table}.name FROM {table}"),
            };
            turns.push(turn(&utterance, &sql));
        }
        out.push(Interaction {
            database_id: schema.database_id.clone(),
            turns,
        });
    }
    (schema, out)
}

const WORDS: &[&str] = &[
    "name", "age", "city", "price", "student", "teacher", "course", "date", "id", "title", "year", "song",
    "country", "type", "of", "the", "with", "show", "all", "most", "first", "last", "number", "level",
];

/// A random schema of 1–3 tables built from a small word pool, so that
/// utterances drawn from the same pool produce exact and partial matches.
pub fn random_schema(rng: &mut Rng, database_id: &str) -> Schema {
    let n_tables = rng.gen_range(1..=3);
    let mut tables = Vec::with_capacity(n_tables);
    while tables.len() < n_tables {
        let name = random_name(rng);
        if !tables.contains(&name) {
            tables.push(name);
        }
    }
    let mut columns = Vec::new();
    for t in 0..n_tables {
        let n_cols = rng.gen_range(1..=3);
        for _ in 0..n_cols {
            columns.push((t, random_name(rng)));
        }
    }
    let mut fks = Vec::new();
    if columns.len() > 1 && rng.gen_bool(0.5) {
        let a = rng.gen_range(0..columns.len());
        let b = rng.gen_range(0..columns.len());
        if a != b {
            fks.push((a, b));
        }
    }
    Schema::new(database_id, tables, columns, fks).expect("random schema is well formed")
}

fn random_name(rng: &mut Rng) -> String {
    let n = rng.gen_range(1..=2);
    (0..n).map(|_| *WORDS.choose(rng).expect("nonempty")).collect::<Vec<_>>().join("_")
}

/// Token sequences of 1–`max_turns` turns drawn from the schema word pool.
pub fn random_turn_tokens(rng: &mut Rng, max_turns: usize, max_len: usize) -> Vec<Vec<String>> {
    let n = rng.gen_range(1..=max_turns.max(1));
    (0..n)
        .map(|_| {
            let len = rng.gen_range(1..=max_len.max(1));
            (0..len).map(|_| WORDS.choose(rng).expect("nonempty").to_string()).collect()
        })
        .collect()
}

/// The smallest parser input: one table with two columns (three headers)
/// and a two-turn interaction.
pub fn micro_example() -> (Schema, Interaction) {
    let schema = Schema::new("micro", vec!["pet".into()], vec![(0, "name".into()), (0, "age".into())], Vec::new())
        .expect("micro schema is well formed");
    let interaction = Interaction {
        database_id: "micro".into(),
        turns: vec![
            turn("pet names", "SELECT pet.name FROM pet"),
            turn("older ones", "SELECT pet.name FROM pet WHERE pet.age > 3"),
        ],
    };
    (schema, interaction)
}

/// Corruptions of a gold query; every one changes its clause sets.
pub fn corruptions(gold: &str) -> Vec<String> {
    let edits: [fn(&str) -> Option<String>; 5] = [
        |s| (!s.contains("LIMIT")).then(|| format!("{s} LIMIT 1")),
        |s| s.strip_prefix("SELECT ").map(|r| format!("SELECT DISTINCT {r}")),
        |s| {
            if s.contains(" > ") {
                Some(s.replace(" > ", " < "))
            } else if s.contains(" < ") {
                Some(s.replace(" < ", " > "))
            } else {
                None
            }
        },
        |s| s.split_once(" WHERE ").map(|(head, _)| head.to_string()),
        |s| {
            if s.contains(" ASC") {
                Some(s.replace(" ASC", " DESC"))
            } else if s.contains(" DESC") {
                Some(s.replace(" DESC", " ASC"))
            } else {
                None
            }
        },
    ];
    let mut out: Vec<String> = Vec::new();
    for mask in 1u32..(1 << edits.len()) {
        let mut s = Some(gold.to_string());
        for (k, edit) in edits.iter().enumerate() {
            if mask & (1 << k) != 0 {
                s = s.and_then(|q| edit(&q));
            }
        }
        if let Some(q) = s {
            if !out.contains(&q) && !crate::evaluator::sql_match(&q, &crate::corpus::parse_sql_clauses(gold).expect("gold parses")) {
                out.push(q);
            }
        }
    }
    out
}

/// Beam candidate groups over a coreference corpus: gold at rank 2 for 40%
/// of turns, first for 30%, at a random rank for 10% and missing for the
/// rest; the other slots hold corrupted queries. Task features are uniform
/// noise.
pub fn synthetic_candidate_groups(
    rng: &mut Rng,
    interactions: usize,
    beam_size: usize,
    task_width: usize,
) -> (Vec<Interaction>, Vec<CandidateGroup>) {
    let (_, data) = coreference_corpus(rng, interactions);
    let mut groups = Vec::new();
    for (i, interaction) in data.iter().enumerate() {
        for (t, turn) in interaction.turns.iter().enumerate() {
            let mut negatives = corruptions(&turn.gold_sql);
            negatives.shuffle(rng);
            let r: f64 = rng.gen();
            let gold_rank = if r < 0.4 {
                Some(2.min(beam_size - 1))
            } else if r < 0.7 {
                Some(0)
            } else if r < 0.8 {
                Some(rng.gen_range(0..beam_size))
            } else {
                None
            };
            let mut candidates: Vec<String> = negatives.into_iter().take(beam_size - usize::from(gold_rank.is_some())).collect();
            if let Some(k) = gold_rank {
                candidates.insert(k.min(candidates.len()), turn.gold_sql.clone());
            }
            groups.push(CandidateGroup {
                interaction: i,
                turn: t,
                prefix: interaction.turns[..=t].iter().map(|x| x.utterance_tokens.clone()).collect(),
                features: (0..task_width).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                candidates,
                gold: turn.gold_clauses.clone(),
            });
        }
    }
    (data, groups)
}

/// Writes `schemas.json` and `<name>.json` under `dir` in the on-disk
/// corpus format; returns the two paths.
pub fn write_corpus(
    dir: &Path,
    name: &str,
    schemas: &[Schema],
    interactions: &[Interaction],
) -> std::io::Result<(PathBuf, PathBuf)> {
    let schema_path = dir.join("schemas.json");
    let data_path = dir.join(format!("{name}.json"));
    std::fs::write(&schema_path, format_schemas(schemas))?;
    let raw = serde_json::to_string_pretty(&to_raw(interactions)).expect("interactions serialize");
    std::fs::write(&data_path, raw)?;
    Ok((schema_path, data_path))
}
