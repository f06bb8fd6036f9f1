/// `(prediction, gold, expected match)`, labeled by hand.
pub const EVALUATOR_CASES: &[(&str, &str, bool)] = &[
    ("SELECT name , age FROM t", "SELECT age , name FROM t", true),
    ("SELECT name FROM t", "SELECT name FROM t", true),
    ("SELECT name FROM t WHERE age > 3", "SELECT name FROM t WHERE age < 3", false),
    ("select NAME from T", "SELECT name FROM t", true),
    ("SELECT name FROM t WHERE age > 3", "SELECT name FROM t WHERE age > 99", true),
    ("SELECT name FROM t WHERE a = 1 AND b = 2", "SELECT name FROM t WHERE b = 2 AND a = 1", true),
    ("SELECT name FROM t WHERE a = 1 AND b = 2", "SELECT name FROM t WHERE a = 1 OR b = 2", false),
    ("SELECT name FROM t", "SELECT name FROM t WHERE a = 1", false),
    ("SELECT name FROM t ORDER BY age", "SELECT name FROM t ORDER BY age ASC", true),
    ("SELECT name FROM t ORDER BY age DESC", "SELECT name FROM t ORDER BY age", false),
    ("SELECT name FROM t ORDER BY age DESC LIMIT 1", "SELECT name FROM t ORDER BY age DESC LIMIT 5", true),
    ("SELECT name FROM t ORDER BY age DESC", "SELECT name FROM t ORDER BY age DESC LIMIT 1", false),
    ("SELECT count(*) FROM t", "SELECT count(*) FROM t", true),
    ("SELECT count(*) FROM t", "SELECT count(name) FROM t", false),
    ("SELECT DISTINCT name FROM t", "SELECT name FROM t", false),
    ("SELECT a , count(*) FROM t GROUP BY a", "SELECT count(*) , a FROM t GROUP BY a", true),
    ("SELECT a FROM t GROUP BY a HAVING count(*) > 2", "SELECT a FROM t GROUP BY a", false),
    (
        "SELECT T1.name FROM t AS T1 JOIN u AS T2 ON T1.id = T2.tid",
        "SELECT t.name FROM u JOIN t ON u.tid = t.id",
        true,
    ),
    ("SELECT t.name FROM t JOIN u ON t.id = u.tid", "SELECT t.name FROM t", false),
    (
        "SELECT name FROM t WHERE id IN ( SELECT tid FROM u )",
        "SELECT name FROM t WHERE id IN (SELECT tid FROM u)",
        true,
    ),
    (
        "SELECT name FROM t WHERE id IN ( SELECT tid FROM u )",
        "SELECT name FROM t WHERE id NOT IN ( SELECT tid FROM u )",
        false,
    ),
    (
        "SELECT p FROM c WHERE p < ( SELECT max ( p ) FROM c )",
        "SELECT p FROM c WHERE p < (SELECT max(p) FROM c)",
        true,
    ),
    (
        "SELECT p FROM c WHERE p < ( SELECT max ( p ) FROM c )",
        "SELECT p FROM c WHERE p < ( SELECT min ( p ) FROM c )",
        false,
    ),
    ("SELECT a FROM t UNION SELECT b FROM u", "SELECT a FROM t UNION SELECT b FROM u", true),
    ("SELECT a FROM t UNION SELECT b FROM u", "SELECT a FROM t INTERSECT SELECT b FROM u", false),
    ("SELECT a FROM t", "SELECT a FROM t EXCEPT SELECT a FROM t WHERE b = 1", false),
    ("SELEC name FROM t", "SELECT name FROM t", false),
    ("SELECT name FROM t WHERE ( a = 1", "SELECT name FROM t WHERE a = 1", false),
    ("SELECT name FROM t WHERE a BETWEEN 1 AND 5", "SELECT name FROM t WHERE a BETWEEN 2 AND 9", true),
    ("SELECT max(age) , min(age) FROM t", "SELECT min(age) , max(age) FROM t", true),
];
