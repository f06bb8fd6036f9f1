//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Run with `cargo test --release --test acceptance`.

mod common;

use std::rc::Rc;
use std::time::{Duration, Instant};

use common::fixtures::{enumerate, micro_gradient_check, transformer_weights, Toy};
use common::{bilinear_attention, max_abs_diff, to_mat, transformer_layer};
use ctxparse_autodiff::{seeded_rng, Adam, ParamStore, Rng, Tape, Tensor, Var};
use ctxparse_core::config::RunConfig;
use ctxparse_core::context_rep::{co_attention, dattn, dcre_layer, Alignment, DcreLayerParams, DcriParams};
use ctxparse_core::corpus::{build_vocab_with_schemas, parse_sql_clauses, schema_map};
use ctxparse_core::decay::{schedule_decay, DecayConfig, DecayVector, Schedule, DEFAULT_FLOOR};
use ctxparse_core::decoder::beam_search;
use ctxparse_core::evaluator::{sql_match, EvalReport};
use ctxparse_core::model::{prepare, ModelConfig, Parser};
use ctxparse_core::pipeline::{evaluate, train};
use ctxparse_core::reranker::{
    downsample_balance, hit_rate, oracle_scores, reranker_vocab, top1_accuracy, Reranker,
};
use ctxparse_core::schema_graph::{build_graph, extend_graph, ContextGraph, RelationType};
use ctxparse_core::synth::{
    coreference_corpus, intent_switch_corpus, random_schema, random_turn_tokens, synthetic_candidate_groups,
    write_corpus,
};
use rand::Rng as _;

const GRADIENT_TOLERANCE: f64 = 1e-4;
const GRADIENT_BUDGET: Duration = Duration::from_secs(60);
const EQUIVALENCE_TOLERANCE: f64 = 1e-12;
const DECAY_TOLERANCE: f64 = 1e-12;
const RANDOM_PATTERNS: usize = 1000;
const BEAM_CASES: usize = 100;
const OVERFIT_QM: f64 = 0.9;
const OVERFIT_IM: f64 = 0.7;
const OVERFIT_EPOCHS: usize = 120;
const OVERFIT_LR: f64 = 2e-3;
const OVERFIT_BUDGET: Duration = Duration::from_secs(15 * 60);
const ABLATION_SEEDS: u64 = 5;
const ABLATION_INTERACTIONS: usize = 20;
const ABLATION_EPOCHS: usize = 60;
const ABLATION_LR: f64 = 1e-3;
const ABLATION_STRICT_WINS: usize = 3;
const RERANK_SEEDS: u64 = 5;
const RERANK_EPOCHS: usize = 10;
const GRAPH_CASES: usize = 500;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random(tape: &mut Tape, rng: &mut Rng, rows: usize, cols: usize) -> Var {
    let values = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    tape.constant(Tensor::from_vec(rows, cols, values).unwrap())
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let report = micro_gradient_check();
    let elapsed = start.elapsed();
    let worst = report.worst().unwrap();
    outcome(
        report.max_relative_error < GRADIENT_TOLERANCE && elapsed < GRADIENT_BUDGET,
        format!(
            "max relative error {:.3e} at {} over {} tensors in {:.1}s (tolerance {GRADIENT_TOLERANCE:e}, budget {}s)",
            report.max_relative_error,
            worst.name,
            report.params.len(),
            elapsed.as_secs_f64(),
            GRADIENT_BUDGET.as_secs()
        ),
    )
}

fn unit_decay_equivalence() -> Outcome {
    let mut rng = seeded_rng(21);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let d = 2 * rng.gen_range(1..=4);
        let (n_u, n_s) = (rng.gen_range(1..=7), rng.gen_range(1..=5));
        let mut store = ParamStore::new();
        let w = store.add_uniform("w", d, d, 0.5, &mut rng);
        let dcri = DcriParams::new(&mut store, d, &mut rng);
        let layer = DcreLayerParams::new(&mut store, "l", d, 2, &mut rng).unwrap();
        store.value_mut(layer.rel_k).values_mut().fill(0.0);
        store.value_mut(layer.rel_v).values_mut().fill(0.0);
        let mut tape = Tape::new(&store);
        let h_u = random(&mut tape, &mut rng, n_u, d);
        let h_s = random(&mut tape, &mut rng, n_s, d);
        let key_ones = tape.constant(Tensor::column_vector(vec![1.0; n_s]));
        let (out, _) = dattn(&mut tape, w, h_u, h_s, Some(key_ones)).unwrap();
        let ones = tape.constant(Tensor::column_vector(vec![1.0; n_u]));
        let mat = |tape: &Tape, v| to_mat(tape.value(v));
        let plain = bilinear_attention(&mat(&tape, h_u), &to_mat(store.value(w)), &mat(&tape, h_s));
        worst = worst.max(max_abs_diff(&mat(&tape, out), &plain));

        let m = DecayVector {
            m_iu: ones,
            num_tokens: n_u,
            num_headers: n_s,
        };
        for alignment in [Alignment::KeyAligned, Alignment::AsPrintedSwapped] {
            let (r_iu, r_is, _, _) = co_attention(&mut tape, &dcri, h_u, h_s, &m, alignment).unwrap();
            let u2s = to_mat(store.value(dcri.utterance_to_schema));
            let s2u = to_mat(store.value(dcri.schema_to_utterance));
            let want_iu = bilinear_attention(&mat(&tape, h_u), &u2s, &mat(&tape, h_s));
            let want_is = bilinear_attention(&mat(&tape, h_s), &s2u, &mat(&tape, h_u));
            worst = worst.max(max_abs_diff(&mat(&tape, r_iu), &want_iu));
            worst = worst.max(max_abs_diff(&mat(&tape, r_is), &want_is));
        }

        let n = n_u + n_s;
        let relations: Vec<usize> = (0..n * n).map(|_| rng.gen_range(0..RelationType::COUNT)).collect();
        let x = random(&mut tape, &mut rng, n, d);
        let unit = tape.constant(Tensor::column_vector(vec![1.0; n]));
        let layer_out = dcre_layer(&mut tape, &layer, x, &Rc::new(relations), unit).unwrap();
        let expected = transformer_layer(&mat(&tape, x), &transformer_weights(&store, &layer));
        worst = worst.max(max_abs_diff(&mat(&tape, layer_out.r_e), &expected));
    }
    outcome(
        worst < EQUIVALENCE_TOLERANCE,
        format!("max abs difference {worst:.3e} over 20 random shapes (tolerance {EQUIVALENCE_TOLERANCE:e})"),
    )
}

fn decay_table() -> Outcome {
    let rows: [(Schedule, Vec<f64>); 3] = [
        (Schedule::Linear { k: 1.0, c: 0.1 }, vec![1.0, 0.9, 0.8, 0.8, 0.8, 0.8]),
        (Schedule::Exponential { k: 0.9 }, vec![1.0, 0.9, 0.81]),
        (Schedule::InverseSigmoid { k: 1.0 }, vec![0.8]),
    ];
    let mut worst = 0.0f64;
    let mut measured = Vec::new();
    for (schedule, want) in &rows {
        let got: Vec<f64> = (0..want.len())
            .map(|t| schedule_decay(schedule, t, DEFAULT_FLOOR).unwrap())
            .collect();
        for (g, w) in got.iter().zip(want) {
            worst = worst.max((g - w).abs());
        }
        measured.push(format!("{got:?}"));
    }
    outcome(
        worst < DECAY_TOLERANCE,
        format!("{} (max abs difference {worst:.1e})", measured.join(" ")),
    )
}

fn evaluator_suite() -> Outcome {
    let golden_ok = common::golden::EVALUATOR_CASES
        .iter()
        .filter(|(pred, gold, expected)| sql_match(pred, &parse_sql_clauses(gold).unwrap()) == *expected)
        .count();
    let mut rng = seeded_rng(41);
    let (mut equal, mut equal_bad, mut variable, mut variable_bad) = (0, 0, 0, 0);
    for i in 0..RANDOM_PATTERNS {
        let n = rng.gen_range(1..=8);
        let fixed = rng.gen_range(1..=7);
        let same_length = i % 2 == 0;
        let scores: Vec<Vec<bool>> = (0..n)
            .map(|_| {
                let len = if same_length { fixed } else { rng.gen_range(1..=7) };
                (0..len).map(|_| rng.gen_bool(0.6)).collect()
            })
            .collect();
        let r = EvalReport::from_scores(&scores);
        let bad = r.interaction_match.fraction() > r.question_match.fraction();
        if same_length {
            equal += 1;
            equal_bad += usize::from(bad);
        } else {
            variable += 1;
            variable_bad += usize::from(bad);
        }
    }
    let golden_total = common::golden::EVALUATOR_CASES.len();
    outcome(
        golden_ok == golden_total && equal_bad + variable_bad == 0,
        format!(
            "golden {golden_ok}/{golden_total}; IM>QM on {equal_bad}/{equal} equal-length and {variable_bad}/{variable} variable-length patterns"
        ),
    )
}

fn beam_oracle() -> Outcome {
    let mut rng = seeded_rng(51);
    let mut agree = 0;
    for case in 0..BEAM_CASES {
        let vocab = rng.gen_range(2..=5);
        let max_len = rng.gen_range(1..=4);
        let mut toy = Toy::new(vocab, 1000 + case as u64);
        let all = enumerate(&mut toy, max_len);
        let best = all.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        let beams = beam_search(&mut toy, all.len(), max_len);
        if beams[0].tokens == best.0 && (beams[0].score - best.1).abs() < 1e-12 {
            agree += 1;
        }
    }
    outcome(agree == BEAM_CASES, format!("{agree}/{BEAM_CASES} argmax sequences recovered"))
}

fn overfit() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (schemas, data) = coreference_corpus(&mut seeded_rng(7), 20);
    let lengths: Vec<usize> = data.iter().map(|i| i.turns.len()).collect();
    let (s, t) = write_corpus(dir.path(), "train", &schemas, &data).unwrap();
    let mut cfg = RunConfig::new(s, t);
    cfg.checkpoint = dir.path().join("model.ckpt");
    cfg.predictions = dir.path().join("pred.sql");
    cfg.log = dir.path().join("train.log");
    cfg.model.embed_dim = 16;
    cfg.model.hidden = 16;
    cfg.model.gate_hidden = 16;
    cfg.model.heads = 2;
    cfg.lr = OVERFIT_LR;
    cfg.epochs = OVERFIT_EPOCHS;
    let start = Instant::now();
    train(&cfg).unwrap();
    let report = evaluate(&cfg).unwrap();
    let elapsed = start.elapsed();
    let (qm, im) = (report.question_match.fraction(), report.interaction_match.fraction());
    let shape_ok = data.len() == 20
        && schemas.len() == 3
        && lengths.iter().all(|l| (2..=4).contains(l))
        && data.iter().map(|i| &i.database_id).collect::<std::collections::BTreeSet<_>>().len() == 3;
    outcome(
        shape_ok && qm >= OVERFIT_QM && im >= OVERFIT_IM && elapsed < OVERFIT_BUDGET,
        format!(
            "QM {qm:.3} IM {im:.3} after {OVERFIT_EPOCHS} epochs in {:.0}s (need QM>={OVERFIT_QM} IM>={OVERFIT_IM} within {}s)",
            elapsed.as_secs_f64(),
            OVERFIT_BUDGET.as_secs()
        ),
    )
}

fn decay_ablation() -> Outcome {
    let (schema, data) = intent_switch_corpus(&mut seeded_rng(11), ABLATION_INTERACTIONS);
    let vocab = build_vocab_with_schemas(&data, &[&schema], 1);
    let schemas = schema_map(vec![schema.clone()]);
    let prepared = prepare(&data, &schemas).unwrap();
    let train_im = |decay: DecayConfig, seed: u64| {
        let cfg = ModelConfig {
            embed_dim: 16,
            hidden: 16,
            heads: 2,
            gate_hidden: 16,
            decay,
            editing: false,
            ..Default::default()
        };
        let mut parser = Parser::new(cfg, vocab.clone(), None, seed).unwrap();
        let mut opt = Adam::new(&parser.store, ABLATION_LR);
        for _ in 0..ABLATION_EPOCHS {
            for ex in &prepared {
                parser.train_step(&mut opt, ex).unwrap();
            }
        }
        let preds: Vec<Vec<String>> = prepared
            .iter()
            .map(|ex| parser.predict(ex, 1, 40).unwrap().into_iter().map(|p| p.sql).collect())
            .collect();
        EvalReport::evaluate(&preds, &data).unwrap().interaction_match.fraction()
    };
    let (mut worse, mut wins) = (0, 0);
    let mut pairs = Vec::new();
    for seed in 0..ABLATION_SEEDS {
        let off = train_im(DecayConfig::off(), seed);
        let on = train_im(DecayConfig::default(), seed);
        worse += usize::from(on < off);
        wins += usize::from(on > off);
        pairs.push(format!("{off:.2}/{on:.2}"));
    }
    outcome(
        worse == 0 && wins >= ABLATION_STRICT_WINS,
        format!(
            "train IM off/decay per seed [{}]: worse on {worse}, strictly better on {wins}/{ABLATION_SEEDS} (need 0 and >={ABLATION_STRICT_WINS})",
            pairs.join(" ")
        ),
    )
}

fn reranker() -> Outcome {
    let mut exact_oracle = 0;
    let mut bounded = 0;
    let mut rows = Vec::new();
    for seed in 0..RERANK_SEEDS {
        let mut rng = seeded_rng(100 + seed);
        let (train_interactions, train_groups) = synthetic_candidate_groups(&mut rng, 30, 5, 8);
        let (_, test_groups) = synthetic_candidate_groups(&mut rng, 30, 5, 8);
        let candidates: Vec<String> = train_groups.iter().flat_map(|g| g.candidates.clone()).collect();
        let samples: Vec<_> = train_groups.iter().flat_map(|g| g.samples()).collect();
        let balanced = downsample_balance(&samples, seed);
        let mut model = Reranker::new(reranker_vocab(&train_interactions, &candidates), 8, 16, 16, seed);
        model.train(&balanced, RERANK_EPOCHS, 1e-3, seed).unwrap();
        let base = top1_accuracy(&test_groups, |g| Ok(vec![0.0; g.candidates.len()])).unwrap();
        let oracle = top1_accuracy(&test_groups, |g| Ok(oracle_scores(&g.candidates, &g.gold))).unwrap();
        let trained = top1_accuracy(&test_groups, |g| g.scores(&model)).unwrap();
        let hit = hit_rate(&test_groups);
        exact_oracle += usize::from(oracle == hit);
        bounded += usize::from(base <= trained && trained <= oracle);
        rows.push(format!("{base:.3}/{trained:.3}/{oracle:.3}/{hit:.3}"));
    }
    let n = RERANK_SEEDS as usize;
    outcome(
        exact_oracle == n && bounded == n,
        format!(
            "base/trained/oracle/hit per seed [{}]: oracle exact {exact_oracle}/{n}, bounded {bounded}/{n}",
            rows.join(" ")
        ),
    )
}

fn graph_growth() -> Outcome {
    let mut rng = seeded_rng(61);
    let mut agree = 0;
    for case in 0..GRAPH_CASES {
        let schema = random_schema(&mut rng, &format!("db{case}"));
        let turns = random_turn_tokens(&mut rng, 5, 8);
        let mut g = ContextGraph::empty(&schema);
        let internal = g.internal_submatrix();
        let mut ok = true;
        for i in 0..turns.len() {
            g = extend_graph(&g, &turns[i], &schema).unwrap();
            ok &= g == build_graph(&turns[..=i], &schema) && g.internal_submatrix() == internal;
        }
        agree += usize::from(ok);
    }
    outcome(agree == GRAPH_CASES, format!("{agree}/{GRAPH_CASES} interactions agree"))
}

fn determinism() -> Outcome {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let (schemas, data) = coreference_corpus(&mut seeded_rng(3), 6);
        let (s, t) = write_corpus(dir.path(), "train", &schemas, &data).unwrap();
        let mut cfg = RunConfig::new(s, t);
        cfg.checkpoint = dir.path().join("model.ckpt");
        cfg.predictions = dir.path().join("pred.sql");
        cfg.log = dir.path().join("train.log");
        cfg.model.embed_dim = 8;
        cfg.model.hidden = 4;
        cfg.model.gate_hidden = 8;
        cfg.model.heads = 2;
        cfg.epochs = 3;
        cfg.beam_size = 3;
        cfg.max_len = 20;
        cfg.seed = 5;
        train(&cfg).unwrap();
        evaluate(&cfg).unwrap();
        std::fs::read(&cfg.predictions).unwrap()
    };
    let (a, b) = (run(), run());
    outcome(a == b, format!("{} and {} bytes, identical: {}", a.len(), b.len(), a == b))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient check on the micro model", gradient_check),
        ("unit decay and zero relations reduce to vanilla attention", unit_decay_equivalence),
        ("fixed decay schedules", decay_table),
        ("evaluator golden suite and IM<=QM on random patterns", evaluator_suite),
        ("beam search recovers the argmax on small vocabularies", beam_oracle),
        ("overfit a small three-schema corpus", overfit),
        ("utterance decay ablation on intent switches", decay_ablation),
        ("reranker bounded by beam order and oracle", reranker),
        ("incremental graph equals one-shot construction", graph_growth),
        ("same seed gives identical predictions", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        failed += usize::from(!o.pass);
        println!(
            "{} {:>2} {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
