use std::collections::BTreeMap;

use ctxparse_core::corpus::*;
use proptest::prelude::*;

fn teacher_schema_json() -> &'static str {
    r#"[{"db_id": "school", "table_names": ["teacher", "school"],
         "column_names": [[-1, "*"], [0, "age"], [0, "name"], [0, "school id"], [1, "id"], [1, "city"]],
         "foreign_keys": [[3, 4]]}]"#
}

#[test]
fn single_table_fixture_formats_headers() {
    let s = parse_schemas(
        r#"{"db_id": "t", "table_names": ["teacher"], "column_names": [[0, "age"], [0, "name"]]}"#,
        "inline",
    )
    .unwrap();
    let texts: Vec<_> = s[0].headers.iter().map(|h| h.text.as_str()).collect();
    assert_eq!(texts, ["[teacher.*]", "[teacher.age]", "[teacher.name]"]);
    assert_eq!(s[0].headers[0].kind, HeaderKind::TableStar);
    assert_eq!(s[0].headers[0].column_index, None);
    assert_eq!(s[0].headers[1].column_index, Some(0));
}

#[test]
fn zero_tables_is_a_parse_error() {
    let err = parse_schemas(r#"{"db_id": "t", "table_names": [], "column_names": []}"#, "inline").unwrap_err();
    assert!(matches!(err, CorpusError::Parse { .. }), "{err}");
}

#[test]
fn malformed_json_reports_line() {
    let err = parse_schemas("[\n{\"db_id\": }", "bad.json").unwrap_err();
    match err {
        CorpusError::Parse { line, origin, .. } => {
            assert_eq!(line, 2);
            assert_eq!(origin, "bad.json");
        }
        other => panic!("{other}"),
    }
}

#[test]
fn foreign_key_out_of_range_is_rejected() {
    let err = parse_schemas(
        r#"{"db_id": "t", "table_names": ["a"], "column_names": [[0, "x"]], "foreign_keys": [[0, 7]]}"#,
        "inline",
    )
    .unwrap_err();
    assert!(matches!(err, CorpusError::InvalidForeignKey { column: 7, .. }));
}

#[test]
fn global_star_column_is_dropped_and_keys_remapped() {
    let s = &parse_schemas(teacher_schema_json(), "inline").unwrap()[0];
    assert_eq!(s.columns.len(), 5);
    assert_eq!(s.columns[2], (0, "school_id".to_string()));
    assert_eq!(s.foreign_keys, vec![(2, 3)]);
    assert_eq!(s.num_headers(), s.tables.len() + s.columns.len());
    let h = s.header_for_reference("teacher.school_id").unwrap();
    assert_eq!(s.headers[h].name_tokens, vec!["school", "id"]);
}

#[test]
fn load_schema_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tables.json");
    std::fs::write(&path, teacher_schema_json()).unwrap();
    let s = load_schema(&path).unwrap();
    assert_eq!(s.database_id, "school");
    assert!(load_schema(&dir.path().join("missing.json")).is_err());
}

fn schemas() -> BTreeMap<String, Schema> {
    schema_map(parse_schemas(teacher_schema_json(), "inline").unwrap())
}

#[test]
fn interactions_preserve_counts_and_order() {
    let text = r#"[
      {"database_id": "school", "turns": [
        {"utterance": "list teachers", "query": "SELECT name FROM teacher"},
        {"utterance": "older than 30", "query": "SELECT name FROM teacher WHERE age > 30"},
        {"utterance": "how many", "query": "SELECT count(*) FROM teacher WHERE age > 30"}]},
      {"database_id": "school", "interaction": [
        {"utterance": "cities", "query": "SELECT city FROM school"},
        {"utterance": "distinct ones", "query": "SELECT DISTINCT city FROM school"},
        {"utterance": "sorted", "query": "SELECT DISTINCT city FROM school ORDER BY city"}]}
    ]"#;
    let out = parse_interactions(text, "inline", &schemas()).unwrap();
    assert_eq!(out.len(), 2);
    assert!(out.iter().all(|i| i.turns.len() == 3));
    assert_eq!(out[0].turns[1].utterance_tokens, vec!["older", "than", "30"]);
    assert!(out[0].turns[1].gold_clauses.clause(ClauseKind::Where).contains("teacher.age > value"));
}

#[test]
fn unknown_database_and_bad_sql_are_reported() {
    let unknown = r#"[{"database_id": "nope", "turns": [{"utterance": "x", "query": "SELECT a FROM b"}]}]"#;
    assert!(matches!(
        parse_interactions(unknown, "inline", &schemas()),
        Err(CorpusError::UnknownDatabase { .. })
    ));
    let bad = r#"[{"database_id": "school", "turns": [
        {"utterance": "ok", "query": "SELECT name FROM teacher"},
        {"utterance": "bad", "query": "SELEC x"}]}]"#;
    match parse_interactions(bad, "inline", &schemas()) {
        Err(CorpusError::SqlParse { turn, interaction, .. }) => {
            assert_eq!((interaction, turn), (0, 1));
        }
        other => panic!("{other:?}"),
    }
}

fn set(items: &[&str]) -> std::collections::BTreeSet<String> {
    items.iter().map(|s| s.to_string()).collect()
}

#[test]
fn simple_select_decomposes() {
    let d = parse_sql_clauses("SELECT name , age FROM t").unwrap();
    assert_eq!(d.clause(ClauseKind::Select), &set(&["t.name", "t.age"]));
    assert_eq!(d.clause(ClauseKind::From), &set(&["t"]));
    assert_eq!(d.nonempty_clauses(), 2);
}

#[test]
fn four_clause_query_decomposes() {
    let d = parse_sql_clauses("SELECT a FROM t WHERE x = 1 ORDER BY a").unwrap();
    assert_eq!(d.nonempty_clauses(), 4);
    assert_eq!(d.clause(ClauseKind::Where), &set(&["t.x = value"]));
    assert_eq!(d.clause(ClauseKind::OrderBy), &set(&["t.a asc"]));
}

#[test]
fn malformed_sql_is_rejected() {
    for bad in [
        "SELEC x",
        "SELECT a FROM t WHERE ( x = 1",
        "SELECT a FROM t )",
        "SELECT a FROM t FOO b",
        "SELECT FROM t",
        "SELECT a FROM t WHERE a ~ 3",
        "",
    ] {
        assert!(parse_sql_clauses(bad).is_err(), "{bad}");
    }
}

/// Twenty gold queries with decompositions worked out by hand.
#[test]
fn hand_checked_reference_decompositions() {
    type Case = (&'static str, &'static [(ClauseKind, &'static [&'static str])]);
    use ClauseKind::*;
    let cases: Vec<Case> = vec![
        ("SELECT name FROM teacher", &[(Select, &["teacher.name"]), (From, &["teacher"])]),
        ("select count(*) from teacher", &[(Select, &["count ( * )"]), (From, &["teacher"])]),
        ("SELECT DISTINCT city FROM school", &[(Select, &["distinct", "school.city"]), (From, &["school"])]),
        ("SELECT name FROM teacher WHERE age > 30 AND name = 'Bob'",
            &[(Select, &["teacher.name"]), (From, &["teacher"]), (Where, &["teacher.age > value", "teacher.name = value", "and"])]),
        ("SELECT name FROM teacher WHERE age < 20 OR age > 60",
            &[(Select, &["teacher.name"]), (From, &["teacher"]), (Where, &["teacher.age < value", "teacher.age > value", "or"])]),
        ("SELECT T1.name FROM teacher AS T1 JOIN school AS T2 ON T1.school_id = T2.id",
            &[(Select, &["teacher.name"]), (From, &["teacher", "school", "on school.id = teacher.school_id"])]),
        ("SELECT city , count(*) FROM school GROUP BY city",
            &[(Select, &["school.city", "count ( * )"]), (From, &["school"]), (GroupBy, &["school.city"])]),
        ("SELECT city FROM school GROUP BY city HAVING count(*) >= 2",
            &[(Select, &["school.city"]), (From, &["school"]), (GroupBy, &["school.city"]), (Having, &["count ( * ) >= value"])]),
        ("SELECT name FROM teacher ORDER BY age DESC LIMIT 3",
            &[(Select, &["teacher.name"]), (From, &["teacher"]), (OrderBy, &["teacher.age desc"]), (Limit, &["value"])]),
        ("SELECT name FROM teacher ORDER BY age ASC , name",
            &[(Select, &["teacher.name"]), (From, &["teacher"]), (OrderBy, &["teacher.age asc", "teacher.name asc"])]),
        ("SELECT max(age) , min(age) , avg(age) FROM teacher",
            &[(Select, &["max ( teacher.age )", "min ( teacher.age )", "avg ( teacher.age )"]), (From, &["teacher"])]),
        ("SELECT count(DISTINCT city) FROM school",
            &[(Select, &["count ( distinct school.city )"]), (From, &["school"])]),
        ("SELECT name FROM teacher WHERE age BETWEEN 30 AND 40",
            &[(Select, &["teacher.name"]), (From, &["teacher"]), (Where, &["teacher.age between value and value"])]),
        ("SELECT name FROM teacher WHERE name LIKE '%a%'",
            &[(Select, &["teacher.name"]), (From, &["teacher"]), (Where, &["teacher.name like value"])]),
        ("SELECT name FROM teacher WHERE school_id NOT IN (SELECT id FROM school)",
            &[(Select, &["teacher.name"]), (From, &["teacher"]), (Where, &["teacher.school_id not in ( select school.id from school )"])]),
        ("SELECT p FROM c WHERE p < ( SELECT max ( p ) FROM c )",
            &[(Select, &["c.p"]), (From, &["c"]), (Where, &["c.p < ( select max ( c.p ) from c )"])]),
        ("SELECT name FROM teacher UNION SELECT city FROM school",
            &[(Select, &["teacher.name"]), (From, &["teacher"]), (SetOp, &["union ( select school.city from school )"])]),
        ("SELECT name FROM teacher EXCEPT SELECT name FROM teacher WHERE age > 40",
            &[(Select, &["teacher.name"]), (From, &["teacher"]), (SetOp, &["except ( select teacher.name from teacher where teacher.age > value )"])]),
        ("SELECT a - b FROM t WHERE a = \"x\" ;",
            &[(Select, &["t.a - t.b"]), (From, &["t"]), (Where, &["t.a = value"])]),
        ("SELECT count(*) FROM (SELECT city FROM school GROUP BY city)",
            &[(Select, &["count ( * )"]), (From, &["( select school.city from school group by school.city )"])]),
    ];
    assert_eq!(cases.len(), 20);
    for (sql, expected) in cases {
        let d = parse_sql_clauses(sql).unwrap_or_else(|e| panic!("{sql}: {e}"));
        for kind in ClauseKind::ALL {
            let want = expected
                .iter()
                .find(|(k, _)| *k == kind)
                .map(|(_, v)| set(v))
                .unwrap_or_default();
            assert_eq!(d.clause(kind), &want, "{sql} / {}", kind.name());
        }
    }
}

#[test]
fn clause_order_and_case_do_not_matter() {
    let a = parse_sql_clauses("SELECT name, age FROM t WHERE x = 1 AND y = 2").unwrap();
    let b = parse_sql_clauses("select AGE , NAME from T where y = 9 and x = 'q'").unwrap();
    assert_eq!(a, b);
}

#[test]
fn output_tokens_round_trip_through_rendering() {
    let s = &schemas()["school"];
    for sql in [
        "SELECT name FROM teacher WHERE age > 30",
        "SELECT T1.name FROM teacher AS T1 JOIN school AS T2 ON T1.school_id = T2.id WHERE T2.city = 'x'",
        "SELECT city , count(*) FROM school GROUP BY city ORDER BY count(*) DESC LIMIT 1",
        "SELECT name FROM teacher WHERE school_id IN (SELECT id FROM school WHERE city = 'y')",
        "SELECT count(*) FROM teacher",
    ] {
        let toks = sql_to_output_tokens(sql, s).unwrap();
        assert!(!toks.contains(&OutputToken::EOS));
        let rendered = render_output_tokens(&toks, s);
        assert_eq!(
            parse_sql_clauses(&rendered).unwrap(),
            parse_sql_clauses(sql).unwrap(),
            "{sql} -> {rendered}"
        );
    }
    assert!(sql_to_output_tokens("SELECT salary FROM teacher", s).is_err());
}

#[test]
fn vocab_applies_min_count_and_round_trips() {
    let turn = |u: &str| Turn::new(u, "SELECT a FROM t").unwrap();
    let inter = Interaction {
        database_id: "x".into(),
        turns: vec![turn("a a a a a b")],
    };
    let v = build_vocab(std::slice::from_ref(&inter), 2);
    assert_eq!(v.id("b"), v.unk_id());
    assert!(v.id("a") >= Vocab::num_reserved());
    assert_eq!(v.get("select"), Some(v.id("select")));
    assert!(v.id("select") < Vocab::num_reserved());

    let empty = Interaction {
        database_id: "x".into(),
        turns: vec![],
    };
    let r = build_vocab(&[empty], 1);
    assert_eq!(r.len(), Vocab::num_reserved());

    let back = Vocab::from_text(&v.to_text()).unwrap();
    assert_eq!(back, v);
    assert!(Vocab::from_text("a\t0\nb\t0\n").is_err());
}

fn column() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["t.a", "t.b", "u.c", "name", "t.d"]).prop_map(str::to_string)
}

fn operand() -> impl Strategy<Value = String> {
    prop_oneof![
        column(),
        column().prop_map(|c| format!("max ( {c} )")),
        Just("count ( * )".to_string()),
        (1u32..100).prop_map(|n| n.to_string()),
        Just("'txt'".to_string()),
    ]
}

fn predicate() -> impl Strategy<Value = String> {
    (column(), prop::sample::select(vec!["=", "<", ">=", "!=", "like"]), operand())
        .prop_map(|(c, op, o)| format!("{c} {op} {o}"))
}

fn query() -> impl Strategy<Value = String> {
    (
        prop::collection::vec(operand(), 1..4),
        prop::bool::ANY,
        prop::collection::vec(predicate(), 0..4),
        prop::collection::vec(prop::bool::ANY, 3),
        prop::option::of(column()),
        prop::option::of((column(), prop::bool::ANY)),
        prop::bool::ANY,
    )
        .prop_map(|(sel, join, preds, conns, group, order, limit)| {
            let mut s = format!("SELECT {} FROM t", sel.join(" , "));
            if join {
                s.push_str(" JOIN u ON t.a = u.c");
            }
            for (i, p) in preds.iter().enumerate() {
                if i == 0 {
                    s.push_str(" WHERE ");
                } else {
                    s.push_str(if conns[i - 1] { " AND " } else { " OR " });
                }
                s.push_str(p);
            }
            if let Some(g) = group {
                s.push_str(&format!(" GROUP BY {g}"));
            }
            if let Some((o, desc)) = order {
                s.push_str(&format!(" ORDER BY {o}{}", if desc { " DESC" } else { "" }));
            }
            if limit {
                s.push_str(" LIMIT 5");
            }
            s
        })
}

proptest! {
    #[test]
    fn canonical_serialization_is_idempotent(sql in query(), nested in query()) {
        let with_sub = format!("{sql} UNION {nested}");
        for q in [sql, with_sub] {
            let d = parse_sql_clauses(&q).unwrap();
            let again = parse_sql_clauses(&d.to_canonical_sql()).unwrap();
            prop_assert_eq!(&again, &d);
            prop_assert_eq!(again.to_canonical_sql(), d.to_canonical_sql());
        }
    }
}
