//! Automatic tuning of software configuration options for throughput.
//!
//! Tuning runs in two stages. Stage I samples the option space with a
//! t-way covering array, measures each sample and ranks options by how far
//! apart their values sit in the best and worst performance clusters. Stage
//! II runs tabular Q-learning in which each action moves one option up or
//! down a power-of-two value lattice, constraints are repaired with minimal
//! changes, and states with equal measurements are merged.
//!
//! ```
//! use cfgtune_core::{parse_schema, IncreasePolicy, ValueGenerator, Direction, Value};
//!
//! let schema = parse_schema(r#"{"options": [
//!     {"name": "Workers", "kind": "numerical", "min": 1, "recommended_max": 64, "default": 12}
//! ]}"#).unwrap();
//! let gen = ValueGenerator::new(&schema, IncreasePolicy::DoubleThenCeil);
//! assert_eq!(gen.next_value(0, Value::Int(12), Direction::Up), Value::Int(32));
//! ```

pub mod constraint;
pub mod env;
pub mod model;
pub mod qlearning;
pub mod ranker;
pub mod runner;
pub mod sampler;
pub mod statespace;
pub mod valuegen;

pub use constraint::{parse_constraint, ConstraintExpr, ParseError, RepairError};
pub use env::{
    generate_synthetic, synth_optimum, AnyEnv, Capabilities, EnvError, EnvSpec, Environment,
    SynthGenParams, SyntheticEnv, SyntheticEnvSpec,
};
pub use model::{
    default_configuration, parse_schema, render_schema, state_id, Configuration, OptionKind,
    OptionSpec, Schema, SchemaError, StateId, Value,
};
pub use qlearning::{
    decay_epsilon, q_update, reward, select_action, EpisodeRecord, Learner, LearnerOptions,
    LearnerParams, QTable, QTableDocument, TraceDocument, TuneError, ValueMode,
};
pub use ranker::{map_score, rank_dataset, PerfDataset, RankedOptions, RankerParams};
pub use runner::{
    compare, run_strategy, Comparison, InitialState, RunConfig, RunError, RunOutcome, RunReport,
    Strategy,
};
pub use sampler::{build_covering_array, SamplePlan, SamplerParams};
pub use statespace::StateRegistry;
pub use valuegen::{Action, Direction, IncreasePolicy, ValueGenerator, ValueLattice};
