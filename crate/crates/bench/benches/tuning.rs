use std::hint::black_box;

use cfgtune_core::runner::stage_one;
use cfgtune_core::*;
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn synth() -> (Schema, SyntheticEnv) {
    let (schema, spec) = generate_synthetic(&SynthGenParams::default());
    let env = SyntheticEnv::new(spec, &schema).unwrap();
    (schema, env)
}

fn covering_array(c: &mut Criterion) {
    let (schema, _) = synth();
    c.bench_function("covering array, 20 options, t=3", |b| {
        b.iter(|| build_covering_array(black_box(&schema), &SamplerParams::default()).unwrap())
    });
}

fn ranking(c: &mut Criterion) {
    let (schema, env) = synth();
    let stage = stage_one(
        &schema,
        &env,
        &SamplerParams::default(),
        &RankerParams::default(),
    )
    .unwrap();
    c.bench_function("k-means ranking", |b| {
        b.iter(|| {
            rank_dataset(black_box(&schema), &stage.dataset, &RankerParams::default()).unwrap()
        })
    });
}

fn state_hashing(c: &mut Criterion) {
    let (schema, _) = synth();
    let config = default_configuration(&schema);
    c.bench_function("state id", |b| b.iter(|| state_id(black_box(&config))));
}

fn episodes(c: &mut Criterion) {
    let (schema, env) = synth();
    let params = LearnerParams {
        episodes: Some(20),
        steps_per_episode: 50,
        ..LearnerParams::default()
    };
    c.bench_function("20 learner episodes of 50 steps", |b| {
        b.iter_batched(
            || {
                Learner::new(
                    &schema,
                    default_configuration(&schema),
                    params.clone(),
                    LearnerOptions::default(),
                )
                .unwrap()
            },
            |mut learner| {
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                learner.run(&env, &mut rng, |_| {}).unwrap()
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, covering_array, ranking, state_hashing, episodes);
criterion_main!(benches);
