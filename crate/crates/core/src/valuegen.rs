//! Adaptive value generation: power-of-two value lattices and the
//! increase/decrease actions that move options along them.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraint::{check, repair_at, EvalError, RepairError};
use crate::model::{Configuration, OptionKind, OptionSpec, Schema, Value};

/// How an increase action picks the next lattice value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IncreasePolicy {
    /// Smallest lattice value >= twice the current value (12 -> 32).
    #[default]
    DoubleThenCeil,
    /// Smallest lattice value strictly greater than the current value (3 -> 4).
    NextPow2,
}

impl FromStr for IncreasePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "double-then-ceil" => Ok(Self::DoubleThenCeil),
            "next-pow2" => Ok(Self::NextPow2),
            other => Err(format!(
                "unknown increase policy `{other}` (expected double-then-ceil or next-pow2)"
            )),
        }
    }
}

impl fmt::Display for IncreasePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::DoubleThenCeil => "double-then-ceil",
            Self::NextPow2 => "next-pow2",
        })
    }
}

/// Ordered discrete values an option may take during learning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValueLattice {
    option: String,
    values: Vec<Value>,
}

impl ValueLattice {
    pub fn option(&self) -> &str {
        &self.option
    }

    pub fn values(&self) -> &[Value] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> Value {
        self.values[0]
    }

    pub fn max(&self) -> Value {
        *self.values.last().expect("lattices are never empty")
    }

    pub fn contains(&self, v: Value) -> bool {
        self.values.binary_search(&v).is_ok()
    }
}

/// Powers of two within `[min, 2 * recommended_max]`; `{OFF, ON}` for binary options.
pub fn lattice(spec: &OptionSpec) -> ValueLattice {
    let values = match spec.kind() {
        OptionKind::Binary => vec![Value::Off, Value::On],
        OptionKind::Numerical => {
            let min = spec.min().expect("numerical options carry a min");
            let max = spec.effective_max().expect("numerical options carry a max");
            let mut p: i64 = 1;
            while p < min {
                p *= 2;
            }
            let mut values = Vec::new();
            while p <= max {
                values.push(Value::Int(p));
                match p.checked_mul(2) {
                    Some(next) => p = next,
                    None => break,
                }
            }
            values
        }
    };
    ValueLattice {
        option: spec.name().to_string(),
        values,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Increase a numerical option or set a binary option ON.
    Up,
    /// Decrease a numerical option or set a binary option OFF.
    Down,
}

/// 1-based action index. Option `i` (1-based) owns actions `2i-1` (up) and `2i` (down).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Action(u32);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionError {
    #[error("action index {index} outside 1..={max}")]
    InvalidIndex { index: u32, max: u32 },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl Action {
    pub fn new(index: u32, option_count: usize) -> Result<Self, ActionError> {
        let max = (2 * option_count) as u32;
        if index == 0 || index > max {
            return Err(ActionError::InvalidIndex { index, max });
        }
        Ok(Self(index))
    }

    /// Action for the 0-based option ordinal and direction.
    pub fn for_option(option: usize, direction: Direction) -> Self {
        let base = 2 * option as u32 + 1;
        match direction {
            Direction::Up => Self(base),
            Direction::Down => Self(base + 1),
        }
    }

    pub fn index(self) -> u32 {
        self.0
    }

    /// 0-based slot in a Q-row.
    pub fn slot(self) -> usize {
        (self.0 - 1) as usize
    }

    pub fn from_slot(slot: usize) -> Self {
        Self(slot as u32 + 1)
    }

    /// 0-based option ordinal.
    pub fn option(self) -> usize {
        ((self.0 - 1) / 2) as usize
    }

    pub fn direction(self) -> Direction {
        if self.0 % 2 == 1 {
            Direction::Up
        } else {
            Direction::Down
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "A{}", self.0)
    }
}

/// Lattices for every option of a schema plus the increase policy in force.
#[derive(Debug, Clone)]
pub struct ValueGenerator {
    lattices: Vec<ValueLattice>,
    raw: Vec<Vec<Value>>,
    policies: Vec<IncreasePolicy>,
}

impl ValueGenerator {
    /// `policy` applies to every option without its own override.
    pub fn new(schema: &Schema, policy: IncreasePolicy) -> Self {
        let lattices: Vec<ValueLattice> = schema.options().iter().map(lattice).collect();
        let raw = lattices.iter().map(|l| l.values.clone()).collect();
        let policies = schema
            .options()
            .iter()
            .map(|o| o.increase_policy().unwrap_or(policy))
            .collect();
        Self {
            lattices,
            raw,
            policies,
        }
    }

    pub fn lattices(&self) -> &[ValueLattice] {
        &self.lattices
    }

    /// Lattice values per option, schema order.
    pub fn lattice_values(&self) -> &[Vec<Value>] {
        &self.raw
    }

    /// Target of an adaptive move, before any constraint handling.
    pub fn next_value(&self, option: usize, current: Value, direction: Direction) -> Value {
        let lat = &self.lattices[option].values;
        if current.is_binary() {
            return match direction {
                Direction::Up => Value::On,
                Direction::Down => Value::Off,
            };
        }
        let cur = current.as_i64();
        let ints = lat.iter().map(|v| v.as_i64());
        let target = match direction {
            Direction::Up => {
                let found = match self.policies[option] {
                    IncreasePolicy::DoubleThenCeil => {
                        ints.clone().find(|&v| v >= cur.saturating_mul(2))
                    }
                    IncreasePolicy::NextPow2 => ints.clone().find(|&v| v > cur),
                };
                found.unwrap_or_else(|| lat.last().expect("non-empty").as_i64())
            }
            Direction::Down => ints
                .clone()
                .rev()
                .find(|&v| v.saturating_mul(2) <= cur)
                .unwrap_or_else(|| lat[0].as_i64()),
        };
        // Saturation never moves a value against the requested direction.
        let target = match direction {
            Direction::Up if target < cur => cur,
            Direction::Down if target > cur => cur,
            _ => target,
        };
        Value::Int(target)
    }

    /// Applies an action with the adaptive policy. Returns the new configuration
    /// and whether anything changed; a move that cannot be made feasible is a no-op.
    pub fn apply_action(
        &self,
        schema: &Schema,
        config: &Configuration,
        action: Action,
    ) -> Result<(Configuration, bool), ActionError> {
        let action = Action::new(action.index(), schema.len())?;
        let option = action.option();
        let target = self.next_value(option, config.value(option), action.direction());
        self.assign(schema, config, option, target)
    }

    /// Applies an action by drawing a uniformly random in-range value in the
    /// requested direction instead of walking the lattice.
    pub fn apply_random<R: Rng + ?Sized>(
        &self,
        schema: &Schema,
        config: &Configuration,
        action: Action,
        rng: &mut R,
    ) -> Result<(Configuration, bool), ActionError> {
        let action = Action::new(action.index(), schema.len())?;
        let option = action.option();
        let spec = &schema.options()[option];
        let current = config.value(option);
        let target = match spec.kind() {
            OptionKind::Binary => self.next_value(option, current, action.direction()),
            OptionKind::Numerical => {
                let cur = current.as_i64();
                let lo = spec.min().expect("numerical");
                let hi = spec.effective_max().expect("numerical");
                match action.direction() {
                    Direction::Up if cur < hi => Value::Int(rng.random_range(cur + 1..=hi)),
                    Direction::Down if cur > lo => Value::Int(rng.random_range(lo..cur)),
                    _ => current,
                }
            }
        };
        self.assign(schema, config, option, target)
    }

    /// Sets `option` to `value`, repairing other options if constraints break.
    pub fn assign(
        &self,
        schema: &Schema,
        config: &Configuration,
        option: usize,
        value: Value,
    ) -> Result<(Configuration, bool), ActionError> {
        if config.value(option) == value {
            return Ok((config.clone(), false));
        }
        let moved = config.with_value(option, value);
        if check(&moved, schema.constraints())?.is_empty() {
            return Ok((moved, true));
        }
        match repair_at(schema, &moved, Some(option), &self.raw) {
            Ok(fixed) => Ok((fixed, true)),
            Err(RepairError::Infeasible) => Ok((config.clone(), false)),
            Err(RepairError::Eval(e)) => Err(e.into()),
            Err(RepairError::UnknownOption(_)) => unreachable!("pinned by index"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::parse_constraint;
    use proptest::prelude::*;

    fn numeric(min: i64, rec: i64) -> OptionSpec {
        OptionSpec::numerical("X", min, rec, min).unwrap()
    }

    fn ints(l: &ValueLattice) -> Vec<i64> {
        l.values().iter().map(|v| v.as_i64()).collect()
    }

    #[test]
    fn max_clients_has_eleven_values() {
        let l = lattice(&numeric(1, 512));
        assert_eq!(ints(&l), (0..=10).map(|e| 1i64 << e).collect::<Vec<_>>());
    }

    #[test]
    fn clipped_lattice() {
        assert_eq!(ints(&lattice(&numeric(16, 64))), vec![16, 32, 64, 128]);
        assert_eq!(ints(&lattice(&numeric(3, 5))), vec![4, 8]);
        let b = lattice(&OptionSpec::binary("B", Value::Off).unwrap());
        assert_eq!(b.values(), &[Value::Off, Value::On]);
    }

    #[test]
    fn action_numbering() {
        let a5 = Action::new(5, 4).unwrap();
        assert_eq!(a5.option(), 2);
        assert_eq!(a5.direction(), Direction::Up);
        let a6 = Action::new(6, 4).unwrap();
        assert_eq!(a6.option(), 2);
        assert_eq!(a6.direction(), Direction::Down);
        assert_eq!(Action::for_option(2, Direction::Down), a6);
        assert_eq!(a6.slot(), 5);
        assert_eq!(Action::from_slot(5), a6);
        assert!(Action::new(0, 4).is_err());
        assert_eq!(
            Action::new(9, 4),
            Err(ActionError::InvalidIndex { index: 9, max: 8 })
        );
    }

    fn single(policy: IncreasePolicy) -> (Schema, ValueGenerator) {
        let schema = Schema::new(
            vec![
                OptionSpec::numerical("StartServers", 1, 512, 12).unwrap(),
                OptionSpec::binary("KeepAlive", Value::Off).unwrap(),
            ],
            vec![],
        )
        .unwrap();
        let gen = ValueGenerator::new(&schema, policy);
        (schema, gen)
    }

    #[test]
    fn double_then_ceil_moves() {
        let (schema, gen) = single(IncreasePolicy::DoubleThenCeil);
        let c = schema
            .configuration_from_values(vec![Value::Int(12), Value::Off])
            .unwrap();
        let (up, changed) = gen
            .apply_action(&schema, &c, Action::new(1, 2).unwrap())
            .unwrap();
        assert!(changed);
        assert_eq!(up.value(0), Value::Int(32));
        let (down, _) = gen
            .apply_action(&schema, &up, Action::new(2, 2).unwrap())
            .unwrap();
        assert_eq!(down.value(0), Value::Int(16));
        let (on, changed) = gen
            .apply_action(&schema, &c, Action::new(3, 2).unwrap())
            .unwrap();
        assert!(changed);
        assert_eq!(on.value(1), Value::On);
        let (same, changed) = gen
            .apply_action(&schema, &c, Action::new(4, 2).unwrap())
            .unwrap();
        assert!(!changed);
        assert_eq!(same, c);
    }

    #[test]
    fn next_pow2_moves() {
        let (_, gen) = single(IncreasePolicy::NextPow2);
        assert_eq!(
            gen.next_value(0, Value::Int(3), Direction::Up),
            Value::Int(4)
        );
        assert_eq!(
            gen.next_value(0, Value::Int(12), Direction::Up),
            Value::Int(16)
        );
        assert_eq!(
            gen.next_value(0, Value::Int(16), Direction::Up),
            Value::Int(32)
        );
    }

    #[test]
    fn per_option_override_wins() {
        let schema = Schema::new(
            vec![
                OptionSpec::numerical("A", 1, 64, 3).unwrap(),
                OptionSpec::numerical("B", 1, 64, 3)
                    .unwrap()
                    .with_increase_policy(IncreasePolicy::NextPow2),
            ],
            vec![],
        )
        .unwrap();
        let gen = ValueGenerator::new(&schema, IncreasePolicy::DoubleThenCeil);
        assert_eq!(
            gen.next_value(0, Value::Int(3), Direction::Up),
            Value::Int(8)
        );
        assert_eq!(
            gen.next_value(1, Value::Int(3), Direction::Up),
            Value::Int(4)
        );
    }

    #[test]
    fn saturation_is_a_no_op() {
        let (schema, gen) = single(IncreasePolicy::DoubleThenCeil);
        let top = schema
            .configuration_from_values(vec![Value::Int(1024), Value::Off])
            .unwrap();
        let (same, changed) = gen
            .apply_action(&schema, &top, Action::new(1, 2).unwrap())
            .unwrap();
        assert!(!changed);
        assert_eq!(same, top);
        let bottom = top.with_value(0, Value::Int(1));
        let (_, changed) = gen
            .apply_action(&schema, &bottom, Action::new(2, 2).unwrap())
            .unwrap();
        assert!(!changed);
        // Off-lattice values saturate toward the lattice only in the requested direction.
        assert_eq!(
            gen.next_value(0, Value::Int(1000), Direction::Up),
            Value::Int(1024)
        );
        assert_eq!(
            gen.next_value(0, Value::Int(3), Direction::Down),
            Value::Int(1)
        );
    }

    #[test]
    fn constraint_repair_and_rejection() {
        let schema = Schema::new(
            vec![
                OptionSpec::numerical("A", 1, 8, 2).unwrap(),
                OptionSpec::numerical("B", 1, 8, 4).unwrap(),
            ],
            vec![parse_constraint("A < B").unwrap()],
        )
        .unwrap();
        let gen = ValueGenerator::new(&schema, IncreasePolicy::DoubleThenCeil);
        let c = crate::model::default_configuration(&schema);
        // A: 2 -> 4 forces B up to 8.
        let (next, changed) = gen
            .apply_action(&schema, &c, Action::new(1, 2).unwrap())
            .unwrap();
        assert!(changed);
        assert_eq!(next.ints(), vec![4, 8]);
        // A: 4 -> 8 pushes B to its lattice top.
        let (next2, _) = gen
            .apply_action(&schema, &next, Action::new(1, 2).unwrap())
            .unwrap();
        assert_eq!(next2.ints(), vec![8, 16]);
        // A: 8 -> 16 leaves nothing above 16 for B.
        let (next3, changed) = gen
            .apply_action(&schema, &next2, Action::new(1, 2).unwrap())
            .unwrap();
        assert!(!changed);
        assert_eq!(next3, next2);
    }

    #[test]
    fn random_values_move_in_direction() {
        use rand::SeedableRng;
        let (schema, gen) = single(IncreasePolicy::DoubleThenCeil);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let c = schema
            .configuration_from_values(vec![Value::Int(12), Value::Off])
            .unwrap();
        for _ in 0..200 {
            let (up, _) = gen
                .apply_random(&schema, &c, Action::new(1, 2).unwrap(), &mut rng)
                .unwrap();
            let v = up.value(0).as_i64();
            assert!((13..=1024).contains(&v));
            let (down, _) = gen
                .apply_random(&schema, &c, Action::new(2, 2).unwrap(), &mut rng)
                .unwrap();
            assert!((1..12).contains(&down.value(0).as_i64()));
        }
    }

    proptest! {
        #[test]
        fn lattice_shape(min in 1i64..300, extra in 0i64..5000) {
            let rec = min + extra;
            let l = lattice(&numeric(min, rec));
            let v = ints(&l);
            prop_assert!(!v.is_empty());
            prop_assert!(v.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(*v.last().unwrap() <= 2 * rec);
            prop_assert!(v[0] >= min);
            let bound = (2.0 * rec as f64).log2().ceil() as usize + 1;
            prop_assert!(v.len() <= bound);
        }

        #[test]
        fn up_then_down_returns(exp in 1u32..9) {
            let (_, gen) = single(IncreasePolicy::DoubleThenCeil);
            let v = Value::Int(1 << exp);
            let up = gen.next_value(0, v, Direction::Up);
            prop_assert_eq!(up, Value::Int(1 << (exp + 1)));
            prop_assert_eq!(gen.next_value(0, up, Direction::Down), v);
        }
    }
}
