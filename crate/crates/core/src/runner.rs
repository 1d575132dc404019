//! Experiment orchestration: strategies, the two-stage pipeline, convergence
//! detection and report comparison.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraint::{check, find_completion, repair, EvalError, RepairError};
use crate::env::{EnvError, Environment};
use crate::model::{
    default_configuration, state_id, Configuration, OptionKind, Schema, SchemaError, Value,
};
use crate::qlearning::{
    EpisodeRecord, Learner, LearnerOptions, LearnerParams, QTableDocument, TraceDocument,
    TuneError, ValueMode,
};
use crate::ranker::{map_score, rank_dataset, PerfDataset, RankError, RankedOptions, RankerParams};
use crate::sampler::{build_covering_array, SampleError, SamplePlan, SamplerParams};
use crate::statespace::StateRegistry;
use crate::valuegen::{IncreasePolicy, ValueGenerator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Ranking-weighted exploration, adaptive values, state merging.
    Confrl,
    /// As `Confrl` without state merging.
    ConfrlA,
    /// As `Confrl` with random in-range values instead of the lattice walk.
    ConfrlD,
    /// Random option, random value, no learning.
    MRnd,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Confrl,
        Strategy::ConfrlA,
        Strategy::ConfrlD,
        Strategy::MRnd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Confrl => "confrl",
            Strategy::ConfrlA => "confrl_a",
            Strategy::ConfrlD => "confrl_d",
            Strategy::MRnd => "m_rnd",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| {
                format!("unknown strategy `{s}` (expected confrl, confrl_a, confrl_d or m_rnd)")
            })
    }
}

/// Where every episode starts.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    /// Declared defaults, repaired if they violate a constraint.
    Default,
    /// Random lattice values satisfying the constraints.
    Random,
    /// A caller-supplied feasible configuration.
    Config(Configuration),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("sampling: {0}")]
    Sample(#[from] SampleError),
    #[error("ranking: {0}")]
    Rank(#[from] RankError),
    #[error("stage I measurement: {0}")]
    Env(#[from] EnvError),
    #[error(transparent)]
    Tune(#[from] TuneError),
    #[error("constraint evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("initial configuration: {0}")]
    Initial(String),
}

impl RunError {
    /// True when the failure came from running the environment rather than
    /// from bad input.
    pub fn is_environment_failure(&self) -> bool {
        match self {
            RunError::Env(e) => !matches!(e, EnvError::Spec(_)),
            RunError::Tune(TuneError::Env { source, .. }) => !matches!(source, EnvError::Spec(_)),
            RunError::Tune(TuneError::Reward(_)) => true,
            _ => false,
        }
    }
}

/// Everything a run needs besides the schema and environment.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub strategy: Strategy,
    pub seed: u64,
    pub learner: LearnerParams,
    pub increase_policy: IncreasePolicy,
    pub initial: InitialState,
    pub sampler: SamplerParams,
    pub ranker: RankerParams,
    pub key_decimals: u32,
    /// Relevant options for MAP scoring of the ranking.
    pub ground_truth: Option<Vec<String>>,
    /// Target performance for convergence detection.
    pub goal: Option<f64>,
    /// Digest of the environment document, copied into the report.
    pub env_digest: String,
    pub trace: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Confrl,
            seed: 0,
            learner: LearnerParams::default(),
            increase_policy: IncreasePolicy::default(),
            initial: InitialState::Default,
            sampler: SamplerParams::default(),
            ranker: RankerParams::default(),
            key_decimals: 0,
            ground_truth: None,
            goal: None,
            env_digest: String::new(),
            trace: false,
        }
    }
}

pub const CONVERGENCE_FRACTION: f64 = 0.9;
pub const FINAL_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOneSummary {
    pub rows: usize,
    pub evaluations: usize,
    pub ranking: RankedOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub strategy: Strategy,
    pub seed: u64,
    pub schema_digest: String,
    pub env_digest: String,
    pub stage_one: Option<StageOneSummary>,
    pub map: Option<f64>,
    pub episodes: Vec<EpisodeRecord>,
    pub goal: Option<f64>,
    pub convergence_episode: Option<u64>,
    pub final_window_mean: Option<f64>,
    pub best_measurement: Option<f64>,
    pub best_configuration: Option<BTreeMap<String, Value>>,
}

impl RunReport {
    /// Report with wall-clock fields zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> RunReport {
        let mut r = self.clone();
        for e in &mut r.episodes {
            e.elapsed_secs = 0.0;
        }
        r
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub qtable: Option<QTableDocument>,
    pub trace: Option<TraceDocument>,
    pub registry: StateRegistry,
}

/// Independent seed for one pipeline stage.
pub fn derive_seed(seed: u64, stage: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage);
    rng.random()
}

const STAGE_SAMPLER: u64 = 1;
const STAGE_RANKER: u64 = 2;
const STAGE_INITIAL: u64 = 3;
const STAGE_LEARNER: u64 = 4;

/// First episode from which every mean measurement stays at or above
/// `CONVERGENCE_FRACTION * goal`.
pub fn convergence_episode(episodes: &[EpisodeRecord], goal: f64) -> Option<u64> {
    let threshold = CONVERGENCE_FRACTION * goal;
    let mut start = None;
    for e in episodes {
        if e.mean_measurement >= threshold {
            start.get_or_insert(e.episode);
        } else {
            start = None;
        }
    }
    start
}

/// Mean of the last `FINAL_WINDOW` episode means.
pub fn final_window_mean(episodes: &[EpisodeRecord]) -> Option<f64> {
    if episodes.is_empty() {
        return None;
    }
    let window = &episodes[episodes.len().saturating_sub(FINAL_WINDOW)..];
    Some(window.iter().map(|e| e.mean_measurement).sum::<f64>() / window.len() as f64)
}

/// Output of sampling, measuring and ranking.
#[derive(Debug, Clone)]
pub struct StageOne {
    pub plan: SamplePlan,
    pub dataset: PerfDataset,
    pub ranking: RankedOptions,
}

/// Builds the covering array (strength capped at the option count), measures
/// every row (concurrently when the environment allows) and ranks options.
pub fn stage_one<E: Environment + ?Sized>(
    schema: &Schema,
    env: &E,
    sampler: &SamplerParams,
    ranker: &RankerParams,
) -> Result<StageOne, RunError> {
    let params = SamplerParams {
        strength: sampler.strength.min(schema.len()),
        ..sampler.clone()
    };
    let plan = build_covering_array(schema, &params)?;
    let measurements: Vec<f64> = if env.capabilities().parallel_evaluation {
        plan.rows
            .par_iter()
            .map(|c| env.evaluate(c))
            .collect::<Result<_, _>>()?
    } else {
        plan.rows
            .iter()
            .map(|c| env.evaluate(c))
            .collect::<Result<_, _>>()?
    };
    let dataset = PerfDataset {
        records: plan.rows.iter().cloned().zip(measurements).collect(),
    };
    let ranking = rank_dataset(schema, &dataset, ranker)?;
    Ok(StageOne {
        plan,
        dataset,
        ranking,
    })
}

/// Resolves an initial-state mode into a feasible configuration.
pub fn initial_configuration(
    schema: &Schema,
    mode: &InitialState,
    seed: u64,
) -> Result<Configuration, RunError> {
    let generator = ValueGenerator::new(schema, IncreasePolicy::default());
    match mode {
        InitialState::Default => {
            let config = default_configuration(schema);
            if check(&config, schema.constraints())?.is_empty() {
                return Ok(config);
            }
            match repair(schema, &config, None, generator.lattice_values()) {
                Ok(c) => Ok(c),
                Err(RepairError::Infeasible) => Err(RunError::Initial(
                    "defaults violate the constraints and cannot be repaired".into(),
                )),
                Err(e) => Err(RunError::Initial(e.to_string())),
            }
        }
        InitialState::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let domains: Vec<Vec<i64>> = generator
                .lattice_values()
                .iter()
                .map(|l| l.iter().map(|v| v.as_i64()).collect())
                .collect();
            let partial = vec![None; schema.len()];
            let ints = find_completion(&partial, &domains, schema.constraints(), Some(&mut rng))?
                .ok_or_else(|| {
                RunError::Initial("no lattice point satisfies the constraints".into())
            })?;
            Ok(schema.configuration_from_ints(&ints)?)
        }
        InitialState::Config(c) => {
            let violated = check(c, schema.constraints())?;
            if let Some(first) = violated.first() {
                return Err(RunError::Initial(format!("violates `{first}`")));
            }
            Ok(c.clone())
        }
    }
}

/// Runs one strategy end to end. Deterministic per seed on environments
/// whose measurements are a function of the configuration.
pub fn run_strategy<E: Environment + ?Sized>(
    schema: &Schema,
    env: &E,
    config: &RunConfig,
) -> Result<RunOutcome, RunError> {
    config.learner.validate()?;
    let initial = initial_configuration(
        schema,
        &config.initial,
        derive_seed(config.seed, STAGE_INITIAL),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STAGE_LEARNER));

    let (episodes, registry, qtable, trace, stage, map) = match config.strategy {
        Strategy::MRnd => {
            let (episodes, registry) = run_random(schema, env, &initial, config, &mut rng)?;
            (episodes, registry, None, None, None, None)
        }
        strategy => {
            let sampler = SamplerParams {
                seed: derive_seed(config.seed, STAGE_SAMPLER),
                ..config.sampler.clone()
            };
            let ranker = RankerParams {
                seed: derive_seed(config.seed, STAGE_RANKER),
                ..config.ranker.clone()
            };
            let stage = stage_one(schema, env, &sampler, &ranker)?;
            let map = match &config.ground_truth {
                Some(truth) => Some(map_score(&stage.ranking.influential, truth)?),
                None => None,
            };
            let mut weighted = schema.clone();
            stage.ranking.apply_weights(&mut weighted);
            let options = LearnerOptions {
                merging: strategy != Strategy::ConfrlA,
                value_mode: if strategy == Strategy::ConfrlD {
                    ValueMode::Random
                } else {
                    ValueMode::Adaptive
                },
                increase_policy: config.increase_policy,
                key_decimals: config.key_decimals,
                trace: config.trace,
            };
            let mut learner = Learner::new(&weighted, initial, config.learner.clone(), options)?;
            let episodes = learner.run(env, &mut rng, |_| {})?;
            let summary = StageOneSummary {
                rows: stage.plan.rows.len(),
                evaluations: stage.plan.rows.len(),
                ranking: stage.ranking,
            };
            let trace = config.trace.then(|| learner.trace());
            let doc = learner.document();
            (
                episodes,
                learner.registry().clone(),
                Some(doc),
                trace,
                Some(summary),
                map,
            )
        }
    };

    let best = registry
        .visit_order()
        .iter()
        .filter_map(|s| registry.cached(*s).map(|m| (*s, m)))
        .fold(
            None::<(crate::model::StateId, f64)>,
            |acc, (s, m)| match acc {
                Some((_, bm)) if bm >= m => acc,
                _ => Some((s, m)),
            },
        );
    let best_configuration = best.and_then(|(s, _)| {
        registry
            .configuration(s)
            .map(|c| c.iter().map(|(n, v)| (n.to_string(), v)).collect())
    });

    let report = RunReport {
        strategy: config.strategy,
        seed: config.seed,
        schema_digest: schema.digest(),
        env_digest: config.env_digest.clone(),
        stage_one: stage,
        map,
        convergence_episode: config.goal.and_then(|g| convergence_episode(&episodes, g)),
        final_window_mean: final_window_mean(&episodes),
        goal: config.goal,
        best_measurement: best.map(|(_, m)| m),
        best_configuration,
        episodes,
    };
    Ok(RunOutcome {
        report,
        qtable,
        trace,
        registry,
    })
}

/// The pure-random baseline: each step sets a uniformly chosen option to a
/// uniformly drawn in-range value, repairing constraints if needed.
fn run_random<E: Environment + ?Sized>(
    schema: &Schema,
    env: &E,
    initial: &Configuration,
    config: &RunConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<EpisodeRecord>, StateRegistry), RunError> {
    let params = &config.learner;
    let generator = ValueGenerator::new(schema, config.increase_policy);
    let mut registry = StateRegistry::new(config.key_decimals);
    let started = Instant::now();
    let mut records = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let env_err = |episode: u64, step: u32| {
        move |source: EnvError| TuneError::Env {
            episode,
            step,
            source,
        }
    };
    loop {
        let done = records.len() as u64;
        if params.episodes.is_some_and(|e| done >= e)
            || params
                .seconds
                .is_some_and(|s| started.elapsed().as_secs_f64() >= s)
        {
            break;
        }
        let episode = done + 1;
        let mut current = initial.clone();
        let m0 = registry
            .get_or_measure(state_id(&current), &current, env)
            .map_err(env_err(episode, 0))?;
        best = best.max(m0);
        let mut sum = 0.0;
        for step in 1..=params.steps_per_episode {
            let option = rng.random_range(0..schema.len());
            let spec = &schema.options()[option];
            let value = match spec.kind() {
                OptionKind::Binary => {
                    if rng.random_bool(0.5) {
                        Value::On
                    } else {
                        Value::Off
                    }
                }
                OptionKind::Numerical => Value::Int(rng.random_range(
                    spec.min().expect("numerical")..=spec.effective_max().expect("numerical"),
                )),
            };
            let (next, _) = generator
                .assign(schema, &current, option, value)
                .map_err(TuneError::from)?;
            let m = registry
                .get_or_measure(state_id(&next), &next, env)
                .map_err(env_err(episode, step))?;
            sum += m;
            best = best.max(m);
            current = next;
        }
        records.push(EpisodeRecord {
            episode,
            elapsed_secs: started.elapsed().as_secs_f64(),
            epsilon: 1.0,
            mean_measurement: sum / f64::from(params.steps_per_episode),
            best_measurement: best,
            distinct_states: registry.canonical_states(),
            raw_states: registry.total_states(),
            merged_states: 0,
            evaluations: registry.evaluations(),
        });
    }
    Ok((records, registry))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompareError {
    #[error("at least one report is required")]
    Empty,
    #[error("report {index} was produced on environment {found}, expected {expected}")]
    DigestMismatch {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("baseline strategy {0} has no reports")]
    MissingBaseline(Strategy),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: Strategy,
    pub runs: usize,
    pub mean_final: f64,
    /// Mean convergence episode over the runs that converged.
    pub mean_convergence_episode: Option<f64>,
    pub converged_runs: usize,
    pub mean_distinct_states: f64,
    pub mean_merged_states: f64,
    pub mean_evaluations: f64,
    /// Percentage change of `mean_final` versus the baseline.
    pub delta_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: Strategy,
    pub rows: Vec<ComparisonRow>,
}

/// Aggregates reports per strategy and expresses each against `baseline`
/// (the first report's strategy when `None`).
pub fn compare(
    reports: &[RunReport],
    baseline: Option<Strategy>,
) -> Result<Comparison, CompareError> {
    let first = reports.first().ok_or(CompareError::Empty)?;
    for (index, r) in reports.iter().enumerate() {
        let (expected, found) = (
            format!("{}/{}", first.schema_digest, first.env_digest),
            format!("{}/{}", r.schema_digest, r.env_digest),
        );
        if expected != found {
            return Err(CompareError::DigestMismatch {
                index,
                expected,
                found,
            });
        }
    }
    let baseline = baseline.unwrap_or(first.strategy);
    let mut groups: BTreeMap<Strategy, Vec<&RunReport>> = BTreeMap::new();
    for r in reports {
        groups.entry(r.strategy).or_default().push(r);
    }
    let mean = |xs: &mut dyn Iterator<Item = f64>| {
        let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    };
    let mut rows: Vec<ComparisonRow> = groups
        .iter()
        .map(|(strategy, rs)| {
            let converged: Vec<f64> = rs
                .iter()
                .filter_map(|r| r.convergence_episode.map(|e| e as f64))
                .collect();
            let last = |r: &&RunReport| r.episodes.last().cloned();
            ComparisonRow {
                strategy: *strategy,
                runs: rs.len(),
                mean_final: mean(&mut rs.iter().filter_map(|r| r.final_window_mean)),
                mean_convergence_episode: (!converged.is_empty())
                    .then(|| converged.iter().sum::<f64>() / converged.len() as f64),
                converged_runs: converged.len(),
                mean_distinct_states: mean(
                    &mut rs.iter().filter_map(last).map(|e| e.distinct_states as f64),
                ),
                mean_merged_states: mean(
                    &mut rs.iter().filter_map(last).map(|e| e.merged_states as f64),
                ),
                mean_evaluations: mean(
                    &mut rs.iter().filter_map(last).map(|e| e.evaluations as f64),
                ),
                delta_pct: 0.0,
            }
        })
        .collect();
    let base = rows
        .iter()
        .find(|r| r.strategy == baseline)
        .map(|r| r.mean_final)
        .ok_or(CompareError::MissingBaseline(baseline))?;
    for r in &mut rows {
        r.delta_pct = if base == 0.0 {
            0.0
        } else {
            (r.mean_final - base) / base * 100.0
        };
    }
    Ok(Comparison { baseline, rows })
}
