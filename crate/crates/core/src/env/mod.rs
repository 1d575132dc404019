//! Measurement sources. An [`Environment`] turns a configuration into a
//! throughput reading.

mod external;
mod synthetic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Configuration, Schema};

pub use external::{ExternalEnv, ExternalEnvSpec, LifecycleCommand};
pub use synthetic::{
    generate_synthetic, synth_optimum, Condition, ConditionOp, InfluentialTerm, InteractionTerm,
    SynthGenParams, SyntheticEnv, SyntheticEnvSpec, ThresholdDirection,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    /// Whether distinct configurations may be evaluated concurrently.
    pub parallel_evaluation: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("invalid environment spec: {0}")]
    Spec(String),
    #[error("cannot render configuration file: {0}")]
    Render(String),
    #[error("{phase} command failed: {message}")]
    Lifecycle { phase: String, message: String },
    #[error("{phase} command timed out after {seconds}s")]
    Timeout { phase: String, seconds: f64 },
    #[error("benchmark output did not match the throughput pattern: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("exhaustive search space of {size} configurations exceeds the limit of {limit}")]
    SearchTooLarge { size: u128, limit: u128 },
}

pub trait Environment: Sync {
    fn capabilities(&self) -> Capabilities;

    /// Measures throughput (units/sec, never negative) for a feasible configuration.
    fn evaluate(&self, config: &Configuration) -> Result<f64, EnvError>;
}

/// Environment document: either kind, tagged by `"kind"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvSpec {
    Synthetic(SyntheticEnvSpec),
    External(ExternalEnvSpec),
}

impl EnvSpec {
    pub fn parse(text: &str) -> Result<Self, EnvError> {
        serde_json::from_str(text)
            .map_err(|e| EnvError::Spec(format!("line {}, column {}: {e}", e.line(), e.column())))
    }

    pub fn render(&self) -> String {
        serde_json::to_string_pretty(self).expect("environment documents always serialize")
    }

    /// Builds a ready-to-use environment bound to `schema`.
    pub fn instantiate(&self, schema: &Schema) -> Result<AnyEnv, EnvError> {
        Ok(match self {
            EnvSpec::Synthetic(s) => AnyEnv::Synthetic(SyntheticEnv::new(s.clone(), schema)?),
            EnvSpec::External(s) => AnyEnv::External(ExternalEnv::new(s.clone(), schema)?),
        })
    }

    /// Short stable digest identifying this environment document.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = Sha256::digest(self.render().as_bytes());
        bytes[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Runtime-selected environment.
pub enum AnyEnv {
    Synthetic(SyntheticEnv),
    External(ExternalEnv),
}

impl Environment for AnyEnv {
    fn capabilities(&self) -> Capabilities {
        match self {
            AnyEnv::Synthetic(e) => e.capabilities(),
            AnyEnv::External(e) => e.capabilities(),
        }
    }

    fn evaluate(&self, config: &Configuration) -> Result<f64, EnvError> {
        match self {
            AnyEnv::Synthetic(e) => e.evaluate(config),
            AnyEnv::External(e) => e.evaluate(config),
        }
    }
}
