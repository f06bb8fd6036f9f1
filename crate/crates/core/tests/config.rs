use std::path::Path;

use ctxparse_core::config::{ConfigError, RunConfig};
use ctxparse_core::context_rep::Alignment;
use ctxparse_core::decay::{DecayKind, DecayLevel, Schedule};

const MINIMAL: &str = "data.schemas = s.json\ndata.train = t.json\n";

fn parse(text: &str) -> Result<RunConfig, ConfigError> {
    RunConfig::parse(text, "test.cfg", Path::new("/runs/a"))
}

#[test]
fn defaults_are_the_documented_ones() {
    let cfg = parse(MINIMAL).unwrap();
    assert_eq!(cfg.lr, 1e-3);
    assert_eq!(cfg.model.hidden, 300);
    assert_eq!(cfg.model.embed_dim, 300);
    assert_eq!(cfg.model.heads, 4);
    assert_eq!(cfg.model.dcre_layers, 1);
    assert_eq!(cfg.model.alignment, Alignment::KeyAligned);
    assert!(cfg.model.editing);
    assert_eq!(cfg.beam_size, 10);
    assert_eq!(cfg.max_len, 60);
    assert_eq!(cfg.clip, 5.0);
    assert_eq!(cfg.model.decay.floor, 0.8);
    assert_eq!(cfg.model.decay.level, DecayLevel::Utterance);
    assert_eq!(cfg.rerank.lr, 1e-3);
    assert_eq!(cfg.rerank.mine_start_epoch, None);
    assert!(!cfg.rerank.enabled);
    assert!(!cfg.gold_passthrough);
}

#[test]
fn relative_paths_resolve_against_the_config_directory() {
    let cfg = parse("data.schemas = s.json\ndata.train = /abs/t.json\ndata.dev = sub/d.json\n").unwrap();
    assert_eq!(cfg.data.schemas, Path::new("/runs/a/s.json"));
    assert_eq!(cfg.data.train, Path::new("/abs/t.json"));
    assert_eq!(cfg.eval_split(), Path::new("/runs/a/sub/d.json"));
    assert_eq!(cfg.checkpoint, Path::new("/runs/a/model.ckpt"));
}

#[test]
fn flat_decay_keys_apply_to_both_levels_until_overridden() {
    let text = format!(
        "{MINIMAL}decay.level = both\ndecay.kind = gate\ndecay.utterance.kind = schedule\n\
         decay.utterance.c = 0.2\ndecay.utterance.schedule = linear\ndecay.token.schedule = exponential\n\
         decay.token.k = 0.7\n"
    );
    let d = parse(&text).unwrap().model.decay;
    assert_eq!(d.level, DecayLevel::Both);
    assert_eq!(d.token.kind, DecayKind::Gate);
    assert_eq!(d.utterance.kind, DecayKind::Schedule);
    assert_eq!(d.utterance.schedule, Schedule::Linear { k: 1.0, c: 0.2 });
    assert_eq!(d.token.schedule, Schedule::Exponential { k: 0.7 });
}

#[test]
fn round_trips_through_save_and_load() {
    let text = format!(
        "{MINIMAL}data.embeddings = e.txt\nmodel.hidden = 16\ndcre.heads = 2\ndecay.level = token\n\
         decay.token.schedule = inverse_sigmoid\ndecay.token.k = 2.5\noptim.lr = 0.005\nseed = 42\n\
         rerank.mine_start_epoch = 7\nrerank.enabled = true\nmodel.alignment = as_printed_swapped\n"
    );
    let cfg = parse(&text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("saved.cfg");
    cfg.save(&path).unwrap();
    assert_eq!(RunConfig::load(&path).unwrap(), cfg);
    let defaults = RunConfig::new("/x/s.json", "/x/t.json");
    assert_eq!(RunConfig::parse(&defaults.to_text(), "defaults", Path::new("")).unwrap(), defaults);
}

#[test]
fn malformed_configs_are_rejected() {
    assert!(matches!(parse("data.train = t.json\n"), Err(ConfigError::Missing("data.schemas"))));
    assert!(matches!(parse(&format!("{MINIMAL}optim.momentum = 1\n")), Err(ConfigError::UnknownKey(k)) if k == "optim.momentum"));
    assert!(matches!(parse(&format!("{MINIMAL}optim.lr = fast\n")), Err(ConfigError::BadValue { .. })));
    assert!(matches!(parse(&format!("{MINIMAL}decay.level = sometimes\n")), Err(ConfigError::BadValue { .. })));
    assert!(matches!(parse(&format!("{MINIMAL}decay.c = 0.3\n")), Err(ConfigError::BadValue { .. })));
    assert!(matches!(parse(&format!("{MINIMAL}just words\n")), Err(ConfigError::Syntax { line: 3, .. })));
    assert!(matches!(parse(&format!("{MINIMAL}seed = 1\nseed = 2\n")), Err(ConfigError::Syntax { line: 4, .. })));
    assert!(matches!(parse(&format!("{MINIMAL}model.hidden = 3\n")), Err(ConfigError::Invalid(_))));
    assert!(matches!(parse(&format!("{MINIMAL}decay.floor = 0\n")), Err(ConfigError::Invalid(_))));
}

#[test]
fn comments_and_blank_lines_are_ignored() {
    let cfg = parse(&format!("# run\n\n{MINIMAL}seed = 3  # trailing\n")).unwrap();
    assert_eq!(cfg.seed, 3);
}
