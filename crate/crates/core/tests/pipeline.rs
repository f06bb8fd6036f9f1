use std::path::Path;

use ctxparse_autodiff::{seeded_rng, Tape};
use ctxparse_core::config::RunConfig;
use ctxparse_core::corpus::{Interaction, Schema};
use ctxparse_core::model::InteractionEncoder;
use ctxparse_core::pipeline::{
    evaluate, export_attention, format_predictions, link, load_parser, parse_predictions, train, PipelineError,
};
use ctxparse_core::synth::{coreference_corpus, micro_example, write_corpus};

fn small(cfg: &mut RunConfig) {
    cfg.model.embed_dim = 8;
    cfg.model.hidden = 4;
    cfg.model.gate_hidden = 8;
    cfg.model.heads = 2;
    cfg.epochs = 1;
    cfg.beam_size = 3;
    cfg.max_len = 20;
}

fn config_for(dir: &Path, schemas: &[Schema], data: &[Interaction]) -> RunConfig {
    let (s, t) = write_corpus(dir, "train", schemas, data).unwrap();
    let mut cfg = RunConfig::new(s, t);
    cfg.checkpoint = dir.join("model.ckpt");
    cfg.predictions = dir.join("pred.sql");
    cfg.log = dir.join("train.log");
    small(&mut cfg);
    cfg
}

fn synthetic(dir: &Path, n: usize) -> RunConfig {
    let (schemas, data) = coreference_corpus(&mut seeded_rng(3), n);
    config_for(dir, &schemas, &data)
}

#[test]
fn one_epoch_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synthetic(dir.path(), 5);
    let records = train(&cfg).unwrap();
    assert_eq!(records.len(), 1);
    assert!(records[0].loss.is_finite());
    assert!(cfg.checkpoint.exists());
    assert_eq!(records[0].dev_question_match, None);
}

#[test]
fn same_seed_gives_the_same_final_loss() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut ca = synthetic(a.path(), 5);
    let mut cb = synthetic(b.path(), 5);
    ca.epochs = 2;
    cb.epochs = 2;
    assert_eq!(train(&ca).unwrap(), train(&cb).unwrap());
    cb.seed = 1;
    assert_ne!(train(&ca).unwrap().last().unwrap().loss, train(&cb).unwrap().last().unwrap().loss);
}

#[test]
fn dev_question_match_is_logged() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = synthetic(dir.path(), 4);
    cfg.data.dev = Some(cfg.data.train.clone());
    cfg.epochs = 2;
    let records = train(&cfg).unwrap();
    assert!(records.iter().all(|r| r.dev_question_match.is_some_and(|q| (0.0..=1.0).contains(&q))));
    let log = std::fs::read_to_string(&cfg.log).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(log.lines().all(|l| l.contains("dev_question_match")));
}

#[test]
fn gold_passthrough_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = synthetic(dir.path(), 6);
    cfg.gold_passthrough = true;
    let report = evaluate(&cfg).unwrap();
    assert_eq!(report.question_match.fraction(), 1.0);
    assert_eq!(report.interaction_match.fraction(), 1.0);
    assert_eq!(report.interaction_match.total, 6);
}

#[test]
fn untrained_model_report_counts_every_turn() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = synthetic(dir.path(), 6);
    cfg.epochs = 0;
    train(&cfg).unwrap();
    let report = evaluate(&cfg).unwrap();
    let (_, data) = coreference_corpus(&mut seeded_rng(3), 6);
    let turns: usize = data.iter().map(|i| i.turns.len()).sum();
    assert_eq!(report.question_match.total, turns);
    assert_eq!(report.interaction_match.total, 6);
    assert_eq!(report.per_turn.values().map(|c| c.total).sum::<usize>(), turns);
    let written = parse_predictions(&std::fs::read_to_string(&cfg.predictions).unwrap());
    assert_eq!(written.iter().map(Vec::len).collect::<Vec<_>>(), data.iter().map(|i| i.turns.len()).collect::<Vec<_>>());
    let report_text = std::fs::read_to_string(dir.path().join("pred.sql.report")).unwrap();
    assert_eq!(report_text, report.to_string());
}

#[test]
fn prediction_files_round_trip() {
    let preds = vec![
        vec!["SELECT a FROM t".to_string(), "SELECT b FROM t".to_string()],
        vec![String::new()],
    ];
    let text = format_predictions(&preds);
    assert_eq!(text, "SELECT a FROM t\nSELECT b FROM t\n\n-\n\n");
    assert_eq!(parse_predictions(&text), vec![preds[0].clone(), vec!["-".to_string()]]);
}

#[test]
fn checkpoint_width_mismatch_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = synthetic(dir.path(), 3);
    cfg.epochs = 0;
    train(&cfg).unwrap();
    cfg.model.hidden = 6;
    let err = evaluate(&cfg).unwrap_err();
    assert!(matches!(err, PipelineError::Checkpoint { .. }), "{err}");
    assert_eq!(err.exit_code(), 3);
}

fn matrix_shapes(text: &str, name: &str) -> Vec<(usize, usize)> {
    text.lines()
        .filter_map(|l| l.strip_prefix(&format!("matrix {name} ")))
        .map(|rest| {
            let v: Vec<usize> = rest.split(' ').map(|x| x.parse().unwrap()).collect();
            (v[0], v[1])
        })
        .collect()
}

#[test]
fn attention_export_has_one_block_per_turn() {
    let dir = tempfile::tempdir().unwrap();
    let (schema, interaction) = micro_example();
    let mut cfg = config_for(dir.path(), std::slice::from_ref(&schema), std::slice::from_ref(&interaction));
    cfg.epochs = 0;
    train(&cfg).unwrap();
    let text = export_attention(&cfg, 0).unwrap();
    // 2 tokens and 3 headers, then 4 tokens and 3 headers
    assert_eq!(matrix_shapes(&text, "dcre.0.0.alpha"), vec![(5, 5), (7, 7)]);
    assert_eq!(matrix_shapes(&text, "dcre.0.1.e"), vec![(5, 5), (7, 7)]);
    assert_eq!(matrix_shapes(&text, "dcri.inner_alpha").len(), 2);

    // printed decay weights are the model's
    let parser = load_parser(&cfg, &cfg.checkpoint).unwrap();
    let mut tape = Tape::new(&parser.store);
    let mut enc = InteractionEncoder::new(&parser.net, 0, &interaction, &schema).unwrap();
    let printed: Vec<Vec<f64>> = text
        .lines()
        .filter_map(|l| l.strip_prefix("decay "))
        .map(|l| l.split(' ').map(|x| x.parse().unwrap()).collect())
        .collect();
    for row in printed {
        let turn = enc.next_turn(&mut tape).unwrap();
        assert_eq!(row, turn.decay.values(&tape));
    }
    assert!(matches!(export_attention(&cfg, 1), Err(PipelineError::UnknownInteraction { index: 1, count: 1 })));
}

#[test]
fn link_blocks_grow_and_keep_earlier_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (schema, interaction) = micro_example();
    let cfg = config_for(dir.path(), &[schema], &[interaction]);
    let text = link(&cfg, 0).unwrap();
    let blocks: Vec<Vec<&str>> = text
        .split("turn ")
        .skip(1)
        .map(|b| b.lines().skip(2).collect())
        .collect();
    assert_eq!(blocks.len(), 2);
    assert_eq!(blocks[0].len(), 5);
    assert_eq!(blocks[1].len(), 7);
    // schema rows and the first turn's tokens keep their relations to old nodes
    let old_tokens = 2;
    for (r, row) in blocks[0].iter().enumerate() {
        let old: Vec<&str> = row.split(' ').collect();
        let new: Vec<&str> = blocks[1][if r < old_tokens { r } else { r + 2 }].split(' ').collect();
        let kept: Vec<&str> = new[..old_tokens].iter().chain(&new[old_tokens + 2..]).copied().collect();
        assert_eq!(kept, old);
    }
}
