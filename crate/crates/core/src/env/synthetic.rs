//! Seeded synthetic configurable system with threshold-shaped performance
//! effects and an exactly computable optimum.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Capabilities, EnvError, Environment};
use crate::constraint::{check, parse_constraint};
use crate::model::{state_id, Configuration, OptionKind, OptionSpec, Schema, Value};
use crate::valuegen::lattice;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdDirection {
    /// Applies when the option value is >= the threshold.
    Above,
    /// Applies when the option value is <= the threshold.
    Below,
}

/// Step contribution of one option crossing a threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfluentialTerm {
    pub name: String,
    pub threshold: Value,
    pub contribution: f64,
    pub direction: ThresholdDirection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConditionOp {
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "==")]
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub name: String,
    pub op: ConditionOp,
    pub value: Value,
}

/// Delta applied when both conditions hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionTerm {
    pub a: Condition,
    pub b: Condition,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticEnvSpec {
    pub seed: u64,
    pub base: f64,
    #[serde(default)]
    pub influential: Vec<InfluentialTerm>,
    #[serde(default)]
    pub interactions: Vec<InteractionTerm>,
    #[serde(default)]
    pub noise_sigma: f64,
}

impl SyntheticEnvSpec {
    /// Option names referenced by any term, deduplicated, first-mention order.
    pub fn referenced_options(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        let names = self.influential.iter().map(|t| t.name.as_str()).chain(
            self.interactions
                .iter()
                .flat_map(|i| [i.a.name.as_str(), i.b.name.as_str()]),
        );
        for n in names {
            if !out.contains(&n) {
                out.push(n);
            }
        }
        out
    }

    /// Options carrying a threshold term, in first-mention order.
    pub fn influential_options(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for t in &self.influential {
            if !out.contains(&t.name.as_str()) {
                out.push(&t.name);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct BoundTerm {
    slot: usize,
    threshold: i64,
    contribution: f64,
    direction: ThresholdDirection,
}

#[derive(Debug, Clone, Copy)]
struct BoundCondition {
    slot: usize,
    op: ConditionOp,
    value: i64,
}

impl BoundCondition {
    fn holds(&self, values: &[Value]) -> bool {
        let v = values[self.slot].as_i64();
        match self.op {
            ConditionOp::Ge => v >= self.value,
            ConditionOp::Le => v <= self.value,
            ConditionOp::Eq => v == self.value,
        }
    }
}

/// A [`SyntheticEnvSpec`] bound to a schema.
#[derive(Debug)]
pub struct SyntheticEnv {
    spec: SyntheticEnvSpec,
    terms: Vec<BoundTerm>,
    interactions: Vec<(BoundCondition, BoundCondition, f64)>,
    occurrences: Mutex<HashMap<u64, u64>>,
}

impl SyntheticEnv {
    pub fn new(spec: SyntheticEnvSpec, schema: &Schema) -> Result<Self, EnvError> {
        let slot_of = |name: &str| {
            schema
                .index_of(name)
                .ok_or_else(|| EnvError::Spec(format!("unknown option `{name}`")))
        };
        let check_value = |slot: usize, v: Value| -> Result<(), EnvError> {
            let opt = &schema.options()[slot];
            let ok = match opt.kind() {
                OptionKind::Binary => v.is_binary(),
                OptionKind::Numerical => matches!(v, Value::Int(_)),
            };
            if ok {
                Ok(())
            } else {
                Err(EnvError::Spec(format!(
                    "value {v} has the wrong kind for option `{}`",
                    opt.name()
                )))
            }
        };
        let mut terms = Vec::with_capacity(spec.influential.len());
        for t in &spec.influential {
            let slot = slot_of(&t.name)?;
            check_value(slot, t.threshold)?;
            if !lattice(&schema.options()[slot]).contains(t.threshold) {
                return Err(EnvError::Spec(format!(
                    "threshold {} of `{}` is not a lattice value",
                    t.threshold, t.name
                )));
            }
            terms.push(BoundTerm {
                slot,
                threshold: t.threshold.as_i64(),
                contribution: t.contribution,
                direction: t.direction,
            });
        }
        let mut interactions = Vec::with_capacity(spec.interactions.len());
        for i in &spec.interactions {
            let bind = |c: &Condition| -> Result<BoundCondition, EnvError> {
                let slot = slot_of(&c.name)?;
                check_value(slot, c.value)?;
                Ok(BoundCondition {
                    slot,
                    op: c.op,
                    value: c.value.as_i64(),
                })
            };
            interactions.push((bind(&i.a)?, bind(&i.b)?, i.delta));
        }
        let negatives: f64 = spec
            .influential
            .iter()
            .map(|t| t.contribution.min(0.0))
            .chain(spec.interactions.iter().map(|i| i.delta.min(0.0)))
            .sum();
        if !(spec.base.is_finite() && spec.base + negatives >= 0.0) {
            return Err(EnvError::Spec(format!(
                "base {} plus worst-case negative contributions {negatives} is negative",
                spec.base
            )));
        }
        if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
            return Err(EnvError::Spec("noise_sigma must be finite and >= 0".into()));
        }
        Ok(Self {
            spec,
            terms,
            interactions,
            occurrences: Mutex::new(HashMap::new()),
        })
    }

    pub fn spec(&self) -> &SyntheticEnvSpec {
        &self.spec
    }

    /// Measurement without noise: a pure function of the configuration.
    pub fn noiseless(&self, config: &Configuration) -> f64 {
        let values = config.values();
        let mut total = self.spec.base;
        for t in &self.terms {
            let v = values[t.slot].as_i64();
            let active = match t.direction {
                ThresholdDirection::Above => v >= t.threshold,
                ThresholdDirection::Below => v <= t.threshold,
            };
            if active {
                total += t.contribution;
            }
        }
        for (a, b, delta) in &self.interactions {
            if a.holds(values) && b.holds(values) {
                total += delta;
            }
        }
        total
    }
}

impl Environment for SyntheticEnv {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            parallel_evaluation: true,
        }
    }

    fn evaluate(&self, config: &Configuration) -> Result<f64, EnvError> {
        let clean = self.noiseless(config);
        if self.spec.noise_sigma == 0.0 {
            return Ok(clean);
        }
        // Noise is keyed by (seed, state, nth evaluation of that state) so it
        // does not depend on the order other states are evaluated in.
        let id = state_id(config).0;
        let nth = {
            let mut occ = self.occurrences.lock().expect("noise counter poisoned");
            let slot = occ.entry(id).or_insert(0);
            *slot += 1;
            *slot
        };
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.spec.seed ^ id.rotate_left(17) ^ nth.wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let noise = Normal::new(0.0, self.spec.noise_sigma)
            .expect("sigma validated")
            .sample(&mut rng);
        Ok((clean + noise).max(0.0))
    }
}

/// Upper bound on the exhaustive optimum search.
pub const OPTIMUM_SEARCH_LIMIT: u128 = 10_000_000;

/// Exact optimum: exhaustive search over the lattices of every option the
/// spec references (others at their defaults), skipping infeasible points.
/// Returns the best noiseless measurement and a configuration attaining it.
pub fn synth_optimum(
    env: &SyntheticEnv,
    schema: &Schema,
) -> Result<(f64, Configuration), EnvError> {
    let mut slots: Vec<usize> = env
        .spec
        .referenced_options()
        .iter()
        .map(|n| schema.index_of(n).expect("bound at construction"))
        .collect();
    slots.sort_unstable();
    let lattices: Vec<Vec<Value>> = slots
        .iter()
        .map(|&s| lattice(&schema.options()[s]).values().to_vec())
        .collect();
    let size = lattices
        .iter()
        .try_fold(1u128, |acc, l| acc.checked_mul(l.len() as u128))
        .unwrap_or(u128::MAX);
    if size > OPTIMUM_SEARCH_LIMIT {
        return Err(EnvError::SearchTooLarge {
            size,
            limit: OPTIMUM_SEARCH_LIMIT,
        });
    }
    let base = crate::model::default_configuration(schema);
    let mut values = base.values().to_vec();
    let mut best: Option<(f64, Vec<Value>)> = None;
    let mut digits = vec![0usize; slots.len()];
    loop {
        for (k, &s) in slots.iter().enumerate() {
            values[s] = lattices[k][digits[k]];
        }
        let config = schema
            .configuration_from_values(values.clone())
            .expect("lattice values are in range");
        let feasible = check(&config, schema.constraints())
            .map(|v| v.is_empty())
            .unwrap_or(false);
        if feasible {
            let m = env.noiseless(&config);
            if best.as_ref().is_none_or(|(b, _)| m > *b) {
                best = Some((m, values.clone()));
            }
        }
        // Odometer increment, last slot fastest.
        let mut k = slots.len();
        loop {
            if k == 0 {
                let (m, vals) = best.ok_or_else(|| {
                    EnvError::Spec("no feasible configuration in the search space".into())
                })?;
                let config = schema
                    .configuration_from_values(vals)
                    .expect("lattice values are in range");
                return Ok((m, config));
            }
            k -= 1;
            digits[k] += 1;
            if digits[k] < lattices[k].len() {
                break;
            }
            digits[k] = 0;
        }
    }
}

/// Knobs for [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthGenParams {
    pub options: usize,
    pub influential: usize,
    pub binary_fraction: f64,
    pub base: f64,
    pub seed: u64,
}

impl Default for SynthGenParams {
    fn default() -> Self {
        Self {
            options: 20,
            influential: 5,
            binary_fraction: 0.3,
            base: 100.0,
            seed: 0,
        }
    }
}

const RECOMMENDED_MAXIMA: [i64; 8] = [16, 50, 64, 100, 128, 200, 256, 512];

/// Generates a random schema and a synthetic environment for it.
///
/// Every planted influential option starts on the unfavourable side of a
/// positive threshold one to three lattice steps from its default. Some also
/// carry a slowdown term further along the same direction, and one pair of
/// influential options gets a positive interaction. When at least two
/// non-influential numerical options exist, one linear constraint links them.
pub fn generate_synthetic(params: &SynthGenParams) -> (Schema, SyntheticEnvSpec) {
    assert!(
        params.influential <= params.options,
        "more influential options than options"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut options = Vec::with_capacity(params.options);
    for i in 0..params.options {
        let name = format!("Opt{i:02}");
        let spec = if rng.random_bool(params.binary_fraction.clamp(0.0, 1.0)) {
            let default = if rng.random_bool(0.5) {
                Value::On
            } else {
                Value::Off
            };
            OptionSpec::binary(name, default).expect("generated names are valid")
        } else {
            let rec = RECOMMENDED_MAXIMA[rng.random_range(0..RECOMMENDED_MAXIMA.len())];
            let lo = (rec / 16).max(1);
            let default = rng.random_range(lo..=rec / 2);
            OptionSpec::numerical(name, 1, rec, default).expect("generated ranges are valid")
        };
        options.push(spec);
    }

    let chosen: Vec<usize> = {
        let mut v = sample(&mut rng, params.options, params.influential).into_vec();
        v.sort_unstable();
        v
    };
    let mut influential = Vec::new();
    let mut favourable: Vec<Condition> = Vec::new();
    for &slot in &chosen {
        let opt = &options[slot];
        let lat = lattice(opt);
        let contribution = rng.random_range(20..=60) as f64;
        match opt.kind() {
            OptionKind::Binary => {
                let (threshold, direction) = if opt.default_value() == Value::Off {
                    (Value::On, ThresholdDirection::Above)
                } else {
                    (Value::Off, ThresholdDirection::Below)
                };
                influential.push(InfluentialTerm {
                    name: opt.name().to_string(),
                    threshold,
                    contribution,
                    direction,
                });
                favourable.push(Condition {
                    name: opt.name().to_string(),
                    op: ConditionOp::Eq,
                    value: threshold,
                });
            }
            OptionKind::Numerical => {
                let d = opt.default_value().as_i64();
                let ints: Vec<i64> = lat.values().iter().map(|v| v.as_i64()).collect();
                let first_above = ints.iter().position(|&v| v > d);
                let last_below = ints.iter().rposition(|&v| v < d);
                let go_up = match (first_above, last_below) {
                    (Some(_), Some(_)) => rng.random_bool(0.5),
                    (Some(_), None) => true,
                    _ => false,
                };
                let steps = rng.random_range(0..3usize);
                let (idx, direction, op) = if go_up {
                    let idx = (first_above.expect("room above") + steps).min(ints.len() - 1);
                    (idx, ThresholdDirection::Above, ConditionOp::Ge)
                } else {
                    let idx = last_below.expect("room below").saturating_sub(steps);
                    (idx, ThresholdDirection::Below, ConditionOp::Le)
                };
                influential.push(InfluentialTerm {
                    name: opt.name().to_string(),
                    threshold: Value::Int(ints[idx]),
                    contribution,
                    direction,
                });
                favourable.push(Condition {
                    name: opt.name().to_string(),
                    op,
                    value: Value::Int(ints[idx]),
                });
                // Overshooting far past the threshold triggers a slowdown.
                let bug_idx = match direction {
                    ThresholdDirection::Above => idx.checked_add(3).filter(|&i| i < ints.len()),
                    ThresholdDirection::Below => idx.checked_sub(3),
                };
                if let Some(b) = bug_idx {
                    if rng.random_bool(0.5) {
                        influential.push(InfluentialTerm {
                            name: opt.name().to_string(),
                            threshold: Value::Int(ints[b]),
                            contribution: -(rng.random_range(15..=40) as f64),
                            direction,
                        });
                    }
                }
            }
        }
    }
    let mut interactions = Vec::new();
    if favourable.len() >= 2 {
        let pair = sample(&mut rng, favourable.len(), 2).into_vec();
        interactions.push(InteractionTerm {
            a: favourable[pair[0].min(pair[1])].clone(),
            b: favourable[pair[0].max(pair[1])].clone(),
            delta: rng.random_range(10..=30) as f64,
        });
    }

    let plain: Vec<usize> = (0..params.options)
        .filter(|i| !chosen.contains(i) && options[*i].kind() == OptionKind::Numerical)
        .collect();
    let mut constraints = Vec::new();
    if plain.len() >= 2 {
        let pick = sample(&mut rng, plain.len(), 2).into_vec();
        let (a, b) = (plain[pick[0]], plain[pick[1]]);
        let bound = 4 * options[b].default_value().as_i64();
        let a_spec = &options[a];
        if a_spec.default_value().as_i64() > bound {
            let rec = a_spec.recommended_max().expect("numerical");
            options[a] = OptionSpec::numerical(a_spec.name(), 1, rec, bound.min(rec))
                .expect("clamped default is in range");
        }
        let text = format!("{} <= {} * 4", options[a].name(), options[b].name());
        constraints.push(parse_constraint(&text).expect("generated constraint parses"));
    }
    let schema = Schema::new(options, constraints).expect("generated schema is valid");
    let spec = SyntheticEnvSpec {
        seed: params.seed,
        base: params.base,
        influential,
        interactions,
        noise_sigma: 0.0,
    };
    (schema, spec)
}
