use ctxparse_autodiff::{seeded_rng, ParamStore, Tape, Tensor};
use ctxparse_core::decay::*;

#[test]
fn schedule_examples() {
    let lin = Schedule::Linear { k: 1.0, c: 0.1 };
    assert_eq!(lin.raw(3), 1.0 - 0.1 * 3.0);
    assert_eq!(schedule_decay(&lin, 3, 0.8).unwrap(), 0.8);
    assert_eq!(schedule_decay(&Schedule::Exponential { k: 0.9 }, 0, 0.8).unwrap(), 1.0);
    let inv = Schedule::InverseSigmoid { k: 1.0 };
    assert_eq!(inv.raw(0), 0.5);
    assert_eq!(schedule_decay(&inv, 0, 0.8).unwrap(), 0.8);
}

#[test]
fn invalid_schedules_are_rejected() {
    for s in [
        Schedule::Exponential { k: 1.0 },
        Schedule::Exponential { k: 1.5 },
        Schedule::InverseSigmoid { k: 0.5 },
        Schedule::Linear { k: 1.0, c: -0.1 },
    ] {
        assert!(matches!(schedule_decay(&s, 1, 0.8), Err(DecayError::InvalidSchedule(_))), "{s:?}");
    }
}

#[test]
fn schedules_are_bounded_and_non_increasing() {
    for s in [
        Schedule::Linear { k: 1.0, c: 0.03 },
        Schedule::Linear { k: 1.2, c: 0.0 },
        Schedule::Exponential { k: 0.95 },
        Schedule::InverseSigmoid { k: 1.0 },
        Schedule::InverseSigmoid { k: 7.0 },
    ] {
        let w: Vec<f64> = (0..40).map(|t| schedule_decay(&s, t, 0.8).unwrap()).collect();
        assert!(w.iter().all(|&x| (0.8..=1.0).contains(&x)), "{s:?}");
        assert!(w.windows(2).all(|p| p[1] <= p[0]), "{s:?}");
    }
}

#[test]
fn zero_gate_parameters_give_one_half() {
    let mut store = ParamStore::new();
    let mut rng = seeded_rng(0);
    let gate = GateParams::new(&mut store, "g", 4, 3, &mut rng);
    for id in store.ids() {
        store.value_mut(id).values_mut().fill(0.0);
    }
    let mut tape = Tape::new(&store);
    let h = tape.constant(Tensor::from_rows(&[vec![1.0, -2.0, 3.0, 0.5], vec![9.0, 9.0, 9.0, 9.0]]).unwrap());
    let w = gate_token_decay(&mut tape, h, &gate).unwrap();
    assert_eq!(tape.value(w).values(), &[0.5, 0.5]);
}

#[test]
fn utterance_gate_matches_direct_evaluation() {
    let mut store = ParamStore::new();
    let mut rng = seeded_rng(3);
    let gate = GateParams::new(&mut store, "g", 4, 4, &mut rng);
    let states = vec![vec![0.3, -0.2, 0.9, 0.1], vec![-0.5, 0.4, 0.0, 0.7]];
    let mut tape = Tape::new(&store);
    let h = tape.constant(Tensor::from_rows(&states).unwrap());
    let w = gate_utterance_decay(&mut tape, h, &gate).unwrap();
    let u = store.value(gate.u.weight);
    let v = store.value(gate.v.weight);
    for (r, s) in states.iter().enumerate() {
        let hidden: Vec<f64> = (0..4)
            .map(|j| (0..4).map(|i| s[i] * u.get(i, j)).sum::<f64>().max(0.0))
            .collect();
        let score: f64 = (0..4).map(|j| hidden[j] * v.get(j, 0)).sum();
        let expected = 1.0 / (1.0 + (-score).exp());
        assert!((tape.value(w).get(r, 0) - expected).abs() < 1e-15);
    }
    assert_ne!(tape.value(w).get(0, 0), tape.value(w).get(1, 0));
}

struct Fixture {
    turn_of_token: Vec<usize>,
    positions: Vec<usize>,
    current_start: usize,
}

/// Tokens per turn laid out after a leading `[CLS]`.
fn fixture(lengths: &[usize]) -> Fixture {
    let mut turn_of_token = Vec::new();
    let mut positions = Vec::new();
    let mut pos = 1;
    let mut current_start = 1;
    for (t, &n) in lengths.iter().enumerate() {
        current_start = pos;
        for _ in 0..n {
            turn_of_token.push(t);
            positions.push(pos);
            pos += 1;
        }
    }
    Fixture {
        turn_of_token,
        positions,
        current_start,
    }
}

fn assemble(config: &DecayConfig, lengths: &[usize]) -> Vec<f64> {
    let store = ParamStore::new();
    let f = fixture(lengths);
    let layout = DecayLayout {
        turn_of_token: &f.turn_of_token,
        positions: &f.positions,
        current_turn: lengths.len() - 1,
        current_start: f.current_start,
        num_headers: 2,
    };
    let mut tape = Tape::new(&store);
    let token_states = tape.zeros(f.turn_of_token.len(), 3);
    let interaction_states = tape.zeros(lengths.len(), 3);
    let gates = GateInputs {
        token_states,
        interaction_states,
        token_gate: None,
        utterance_gate: None,
    };
    let m = assemble_decay(&mut tape, config, &layout, &gates).unwrap();
    m.values(&tape)
}

fn linear_utterance(c: f64) -> DecayConfig {
    DecayConfig {
        level: DecayLevel::Utterance,
        utterance: LevelConfig {
            kind: DecayKind::Schedule,
            schedule: Schedule::Linear { k: 1.0, c },
        },
        ..Default::default()
    }
}

#[test]
fn single_turn_is_never_decayed() {
    for level in [DecayLevel::Token, DecayLevel::Utterance, DecayLevel::Both, DecayLevel::Off] {
        let cfg = DecayConfig {
            level,
            token: LevelConfig {
                kind: DecayKind::Schedule,
                schedule: Schedule::Linear { k: 1.0, c: 0.05 },
            },
            ..linear_utterance(0.05)
        };
        assert!(assemble(&cfg, &[3]).iter().all(|&w| w == 1.0));
    }
}

#[test]
fn utterance_linear_over_three_turns() {
    let w = assemble(&linear_utterance(0.05), &[1, 2, 1]);
    let expected = [1.0 - 0.05 * 2.0, 0.95, 0.95, 1.0, 1.0, 1.0];
    assert_eq!(w, expected);
}

#[test]
fn token_distance_counts_positions() {
    let cfg = DecayConfig {
        level: DecayLevel::Token,
        token: LevelConfig {
            kind: DecayKind::Schedule,
            schedule: Schedule::Exponential { k: 0.95 },
        },
        ..Default::default()
    };
    let w = assemble(&cfg, &[2, 1]);
    assert_eq!(w, vec![0.95f64.powf(2.0), 0.95, 1.0, 1.0, 1.0]);
}

#[test]
fn both_with_lambda_one_equals_token_only() {
    let token = LevelConfig {
        kind: DecayKind::Schedule,
        schedule: Schedule::Linear { k: 1.0, c: 0.02 },
    };
    let both = DecayConfig {
        level: DecayLevel::Both,
        lambda: 1.0,
        token,
        ..linear_utterance(0.1)
    };
    let token_only = DecayConfig {
        level: DecayLevel::Token,
        ..both
    };
    assert_eq!(assemble(&both, &[3, 2, 2]), assemble(&token_only, &[3, 2, 2]));
}

#[test]
fn lambda_outside_unit_interval_is_a_config_error() {
    let cfg = DecayConfig {
        lambda: 1.5,
        ..Default::default()
    };
    assert!(matches!(cfg.validate(), Err(DecayError::Config(_))));
}

#[test]
fn gate_weights_are_floored_and_current_turn_exempt() {
    let mut store = ParamStore::new();
    let mut rng = seeded_rng(5);
    let gate = GateParams::new(&mut store, "ug", 3, 2, &mut rng);
    let cfg = DecayConfig {
        level: DecayLevel::Utterance,
        utterance: LevelConfig {
            kind: DecayKind::Gate,
            schedule: Schedule::Linear { k: 1.0, c: 0.1 },
        },
        ..Default::default()
    };
    let f = fixture(&[2, 2]);
    let layout = DecayLayout {
        turn_of_token: &f.turn_of_token,
        positions: &f.positions,
        current_turn: 1,
        current_start: f.current_start,
        num_headers: 1,
    };
    let mut tape = Tape::new(&store);
    let gates = GateInputs {
        token_states: tape.zeros(4, 3),
        interaction_states: tape.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.0, 0.0, 1.0]]).unwrap()),
        token_gate: None,
        utterance_gate: Some(&gate),
    };
    let w = assemble_decay(&mut tape, &cfg, &layout, &gates).unwrap().values(&tape);
    // Small random weights keep the gate near 0.5, so the floor applies.
    assert_eq!(w, vec![0.8, 0.8, 1.0, 1.0, 1.0]);
}
