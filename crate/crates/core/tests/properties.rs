use std::collections::{HashMap, HashSet};

use cfgtune_core::qlearning::{replay, TraceEvent};
use cfgtune_core::valuegen::lattice;
use cfgtune_core::Strategy;
use cfgtune_core::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn synth(options: usize, influential: usize, seed: u64) -> (Schema, SyntheticEnv) {
    let (schema, spec) = generate_synthetic(&SynthGenParams {
        options,
        influential,
        seed,
        ..SynthGenParams::default()
    });
    let env = SyntheticEnv::new(spec, &schema).unwrap();
    (schema, env)
}

#[test]
fn state_ids_do_not_collide_on_random_configurations() {
    let (schema, _) = synth(20, 5, 11);
    let lattices: Vec<Vec<Value>> = schema
        .options()
        .iter()
        .map(|o| lattice(o).values().to_vec())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut seen: HashMap<StateId, Vec<i64>> = HashMap::new();
    let mut distinct = HashSet::new();
    for _ in 0..100_000 {
        let values: Vec<Value> = lattices
            .iter()
            .map(|l| l[rng.random_range(0..l.len())])
            .collect();
        let config = schema.configuration_from_values(values).unwrap();
        let ints = config.ints();
        let id = state_id(&config);
        if let Some(prev) = seen.insert(id, ints.clone()) {
            assert_eq!(prev, ints, "two configurations share {id}");
        }
        distinct.insert(ints);
    }
    assert_eq!(seen.len(), distinct.len());
    assert!(distinct.len() > 99_000);
}

const REPAIR_SCHEMA: &str = r#"{
  "options": [
    {"name": "A", "kind": "numerical", "min": 1, "recommended_max": 16, "default": 2},
    {"name": "B", "kind": "numerical", "min": 1, "recommended_max": 16, "default": 2},
    {"name": "C", "kind": "numerical", "min": 1, "recommended_max": 64, "default": 8},
    {"name": "D", "kind": "binary", "default": "OFF"}
  ],
  "constraints": ["A * B < C", "D + A <= 8"]
}"#;

/// Every combination reachable by keeping each free option or moving it to a
/// lattice value, scored by the documented preference order.
fn oracle(schema: &Schema, config: &Configuration, pinned: usize) -> Option<Vec<i64>> {
    let cur = config.ints();
    let domains: Vec<Vec<i64>> = schema
        .options()
        .iter()
        .enumerate()
        .map(|(i, o)| {
            if i == pinned {
                vec![cur[i]]
            } else {
                let mut d: Vec<i64> = lattice(o).values().iter().map(|v| v.as_i64()).collect();
                d.push(cur[i]);
                d.sort();
                d.dedup();
                d
            }
        })
        .collect();
    let mut all: Vec<Vec<i64>> = vec![vec![]];
    for d in &domains {
        all = all
            .into_iter()
            .flat_map(|p| {
                d.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(*v);
                    q
                })
            })
            .collect();
    }
    let key = |c: &Vec<i64>| {
        let changed: Vec<usize> = (0..c.len()).filter(|&i| c[i] != cur[i]).collect();
        let decreases = changed.iter().any(|&i| c[i] < cur[i]);
        let dist: f64 = changed
            .iter()
            .map(|&i| {
                if schema.options()[i].kind() == OptionKind::Binary {
                    1.0
                } else {
                    ((c[i] as f64).log2() - (cur[i] as f64).log2()).abs()
                }
            })
            .sum();
        let vals: Vec<i64> = changed.iter().map(|&i| c[i]).collect();
        (changed.len(), decreases, dist, changed, vals)
    };
    all.into_iter()
        .filter(|c| schema.constraints().iter().all(|k| k.holds(c).unwrap()))
        .min_by(|x, y| {
            let (a, b) = (key(x), key(y));
            (a.0, a.1)
                .cmp(&(b.0, b.1))
                .then_with(|| {
                    if (a.2 - b.2).abs() <= 1e-9 {
                        std::cmp::Ordering::Equal
                    } else {
                        a.2.total_cmp(&b.2)
                    }
                })
                .then_with(|| a.3.cmp(&b.3))
                .then_with(|| a.4.cmp(&b.4))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn repair_matches_exhaustive_oracle(
        a in 0usize..5, b in 0usize..5, c in 0usize..7, d in any::<bool>(), pinned in 0usize..4
    ) {
        let schema = parse_schema(REPAIR_SCHEMA).unwrap();
        let gen = ValueGenerator::new(&schema, IncreasePolicy::DoubleThenCeil);
        let config = schema
            .configuration_from_ints(&[1 << a, 1 << b, 1 << c, d as i64])
            .unwrap();
        let name = schema.names()[pinned].clone();
        let got = cfgtune_core::constraint::repair(&schema, &config, Some(&name), gen.lattice_values());
        match oracle(&schema, &config, pinned) {
            Some(expected) => prop_assert_eq!(got.unwrap().ints(), expected),
            None => prop_assert!(got.is_err()),
        }
    }
}

#[test]
fn trace_replay_rebuilds_the_table() {
    for seed in 0..4 {
        let (schema, env) = synth(10, 3, seed);
        let out = run_strategy(
            &schema,
            &env,
            &RunConfig {
                seed,
                trace: true,
                learner: LearnerParams {
                    episodes: Some(25),
                    steps_per_episode: 30,
                    ..LearnerParams::default()
                },
                ..RunConfig::default()
            },
        )
        .unwrap();
        let trace = out.trace.unwrap();
        let doc = out.qtable.unwrap();
        let (table, _) = doc.load(&schema).unwrap();
        assert_eq!(replay(&trace).to_sorted(), table.to_sorted(), "seed {seed}");
    }
}

fn updates_before_first_fold(events: &[TraceEvent]) -> Vec<TraceEvent> {
    events
        .iter()
        .take_while(|e| !matches!(e, TraceEvent::Fold { .. }))
        .cloned()
        .collect()
}

#[test]
fn merging_changes_nothing_before_the_first_merge() {
    let mut compared = 0;
    for seed in 0..6 {
        let (schema, env) = synth(12, 4, seed);
        let run = |strategy| {
            run_strategy(
                &schema,
                &env,
                &RunConfig {
                    strategy,
                    seed,
                    trace: true,
                    learner: LearnerParams {
                        episodes: Some(30),
                        steps_per_episode: 20,
                        ..LearnerParams::default()
                    },
                    ..RunConfig::default()
                },
            )
            .unwrap()
        };
        let merged = run(Strategy::Confrl).trace.unwrap().events;
        let plain = run(Strategy::ConfrlA).trace.unwrap().events;
        assert!(plain.iter().all(|e| !matches!(e, TraceEvent::Fold { .. })));
        let prefix = updates_before_first_fold(&merged);
        assert!(!prefix.is_empty());
        assert_eq!(prefix[..], plain[..prefix.len()], "seed {seed}");
        compared += prefix.len();
    }
    assert!(compared > 0);
}

#[test]
fn random_baseline_keeps_no_table() {
    let (schema, env) = synth(10, 3, 2);
    let out = run_strategy(
        &schema,
        &env,
        &RunConfig {
            strategy: Strategy::MRnd,
            trace: true,
            learner: LearnerParams {
                episodes: Some(20),
                ..LearnerParams::default()
            },
            ..RunConfig::default()
        },
    )
    .unwrap();
    assert!(out.qtable.is_none());
    assert!(out.trace.is_none());
    assert!(out.report.stage_one.is_none());
    assert!(out.report.episodes.iter().all(|e| e.merged_states == 0));
}

#[test]
fn counters_never_decrease() {
    let (schema, env) = synth(15, 4, 8);
    for strategy in Strategy::ALL {
        let out = run_strategy(
            &schema,
            &env,
            &RunConfig {
                strategy,
                seed: 8,
                learner: LearnerParams {
                    episodes: Some(40),
                    ..LearnerParams::default()
                },
                ..RunConfig::default()
            },
        )
        .unwrap();
        for w in out.report.episodes.windows(2) {
            assert!(w[1].evaluations >= w[0].evaluations, "{strategy}");
            assert!(w[1].raw_states >= w[0].raw_states, "{strategy}");
            assert!(w[1].best_measurement >= w[0].best_measurement, "{strategy}");
        }
    }
}

#[test]
fn confrl_a_never_has_fewer_states() {
    for seed in 0..4 {
        let (schema, env) = synth(12, 4, seed);
        let last = |strategy| {
            run_strategy(
                &schema,
                &env,
                &RunConfig {
                    strategy,
                    seed,
                    learner: LearnerParams {
                        episodes: Some(40),
                        steps_per_episode: 20,
                        ..LearnerParams::default()
                    },
                    ..RunConfig::default()
                },
            )
            .unwrap()
            .report
            .episodes
            .last()
            .cloned()
            .unwrap()
        };
        assert!(
            last(Strategy::ConfrlA).distinct_states >= last(Strategy::Confrl).distinct_states,
            "seed {seed}"
        );
    }
}
