//! Feasibility checks and backtracking search over discrete option domains.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use super::expr::{ConstraintExpr, EvalError};
use crate::model::{Configuration, Schema, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RepairError {
    #[error("no assignment over the value lattices satisfies all constraints")]
    Infeasible,
    #[error("unknown pinned option `{0}`")]
    UnknownOption(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Returns the constraints `config` violates. Identifiers are resolved by
/// slot when bound and by name otherwise.
pub fn check<'a>(
    config: &Configuration,
    constraints: &'a [ConstraintExpr],
) -> Result<Vec<&'a ConstraintExpr>, EvalError> {
    let values = config.values();
    let lookup = |name: &str, slot: Option<usize>| match slot {
        Some(s) => values.get(s).map(|v| v.as_i64()),
        None => config.get(name).map(Value::as_i64),
    };
    let mut violated = Vec::new();
    for c in constraints {
        if !c.eval_with(&lookup)? {
            violated.push(c);
        }
    }
    Ok(violated)
}

/// Constraint-indexed view used by the searches below.
struct Network<'a> {
    constraints: &'a [ConstraintExpr],
    slots: Vec<Vec<usize>>,
    by_var: Vec<Vec<usize>>,
}

impl<'a> Network<'a> {
    fn new(constraints: &'a [ConstraintExpr], n_vars: usize) -> Self {
        let slots: Vec<Vec<usize>> = constraints.iter().map(|c| c.slots()).collect();
        let mut by_var = vec![Vec::new(); n_vars];
        for (ci, s) in slots.iter().enumerate() {
            for &v in s {
                if v < n_vars {
                    by_var[v].push(ci);
                }
            }
        }
        Self {
            constraints,
            slots,
            by_var,
        }
    }

    fn constrained(&self, var: usize) -> bool {
        !self.by_var[var].is_empty()
    }

    /// Checks every constraint touching `var` whose variables are all assigned.
    fn consistent(&self, var: usize, values: &[Option<i64>]) -> Result<bool, EvalError> {
        for &ci in &self.by_var[var] {
            if self.slots[ci].iter().all(|&s| values[s].is_some()) {
                let lookup = |_: &str, slot: Option<usize>| slot.and_then(|s| values[s]);
                if !self.constraints[ci].eval_with(&lookup)? {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    /// Checks constraints whose variables are all fixed before search starts.
    fn consistent_fixed(&self, values: &[Option<i64>]) -> Result<bool, EvalError> {
        for (ci, c) in self.constraints.iter().enumerate() {
            if self.slots[ci].iter().all(|&s| values[s].is_some()) {
                let lookup = |_: &str, slot: Option<usize>| slot.and_then(|s| values[s]);
                if !c.eval_with(&lookup)? {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

/// Depth-first enumeration of assignments to `vars` over `domains`, calling
/// `visit` on every complete feasible assignment. `visit` returns `false` to stop.
fn enumerate(
    net: &Network<'_>,
    vars: &[usize],
    domains: &[Vec<i64>],
    values: &mut Vec<Option<i64>>,
    visit: &mut dyn FnMut(&[Option<i64>]) -> bool,
) -> Result<bool, EvalError> {
    let Some((&var, rest)) = vars.split_first() else {
        return Ok(visit(values));
    };
    for &candidate in &domains[var] {
        values[var] = Some(candidate);
        if net.consistent(var, values)? && !enumerate(net, rest, domains, values, visit)? {
            values[var] = None;
            return Ok(false);
        }
    }
    values[var] = None;
    Ok(true)
}

/// Finds a full assignment extending `partial`, drawing unfixed variables from
/// `domains`. When `rng` is given, value order is shuffled per variable.
/// Variables that appear in no constraint are filled without search.
pub fn find_completion<R: Rng + ?Sized>(
    partial: &[Option<i64>],
    domains: &[Vec<i64>],
    constraints: &[ConstraintExpr],
    rng: Option<&mut R>,
) -> Result<Option<Vec<i64>>, EvalError> {
    let n = partial.len();
    let net = Network::new(constraints, n);
    let mut values = partial.to_vec();
    if !net.consistent_fixed(&values)? {
        return Ok(None);
    }
    let mut order_domains = domains.to_vec();
    if let Some(r) = rng {
        for d in &mut order_domains {
            d.shuffle(r);
        }
    }
    let free: Vec<usize> = (0..n).filter(|&v| values[v].is_none()).collect();
    let (searched, loose): (Vec<usize>, Vec<usize>) =
        free.into_iter().partition(|&v| net.constrained(v));
    for v in loose {
        match order_domains[v].first() {
            Some(&x) => values[v] = Some(x),
            None => return Ok(None),
        }
    }
    let mut found = None;
    enumerate(&net, &searched, &order_domains, &mut values, &mut |vals| {
        found = Some(vals.iter().map(|v| v.expect("complete")).collect());
        false
    })?;
    Ok(found)
}

/// Lexicographic preference among repairs that change the same number of options.
#[derive(Debug, Clone)]
struct RepairKey {
    decreases: bool,
    distance: f64,
    changed: Vec<usize>,
    values: Vec<i64>,
}

impl RepairKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.decreases
            .cmp(&other.decreases)
            .then_with(|| {
                if (self.distance - other.distance).abs() <= 1e-9 {
                    Ordering::Equal
                } else {
                    self.distance.total_cmp(&other.distance)
                }
            })
            .then_with(|| self.changed.cmp(&other.changed))
            .then_with(|| self.values.cmp(&other.values))
    }
}

/// Cost of moving one option: |Δ log2| for numerical values, 1 for a binary flip.
pub(crate) fn move_distance(binary: bool, from: i64, to: i64) -> f64 {
    if binary {
        if from == to {
            0.0
        } else {
            1.0
        }
    } else {
        ((to as f64).log2() - (from as f64).log2()).abs()
    }
}

fn combinations(
    items: &[usize],
    k: usize,
    visit: &mut dyn FnMut(&[usize]) -> Result<(), EvalError>,
) -> Result<(), EvalError> {
    fn rec(
        items: &[usize],
        k: usize,
        start: usize,
        chosen: &mut Vec<usize>,
        visit: &mut dyn FnMut(&[usize]) -> Result<(), EvalError>,
    ) -> Result<(), EvalError> {
        if chosen.len() == k {
            return visit(chosen);
        }
        for i in start..items.len() {
            if items.len() - i < k - chosen.len() {
                break;
            }
            chosen.push(items[i]);
            rec(items, k, i + 1, chosen, visit)?;
            chosen.pop();
        }
        Ok(())
    }
    rec(items, k, 0, &mut Vec::with_capacity(k), visit)
}

/// Restores feasibility by moving as few non-pinned options as possible onto
/// lattice values.
///
/// Among repairs changing the same number of options the search prefers, in
/// order: no option decreasing, the smallest total |Δ log2(value)|, the
/// earliest changed options in schema order, then the smallest new values.
/// A feasible input is returned unchanged.
pub fn repair(
    schema: &Schema,
    config: &Configuration,
    pinned: Option<&str>,
    lattices: &[Vec<Value>],
) -> Result<Configuration, RepairError> {
    let pinned = match pinned {
        Some(name) => Some(
            schema
                .index_of(name)
                .ok_or_else(|| RepairError::UnknownOption(name.to_string()))?,
        ),
        None => None,
    };
    repair_at(schema, config, pinned, lattices)
}

pub(crate) fn repair_at(
    schema: &Schema,
    config: &Configuration,
    pinned: Option<usize>,
    lattices: &[Vec<Value>],
) -> Result<Configuration, RepairError> {
    let constraints = schema.constraints();
    if check(config, constraints)?.is_empty() {
        return Ok(config.clone());
    }
    let n = schema.len();
    let current = config.ints();
    let net = Network::new(constraints, n);
    let binary: Vec<bool> = config.values().iter().map(|v| v.is_binary()).collect();

    let candidates: Vec<usize> = (0..n)
        .filter(|&v| Some(v) != pinned && net.constrained(v))
        .collect();

    // Moved options must land on a lattice value different from the current one.
    let domains: Vec<Vec<i64>> = (0..n)
        .map(|v| {
            lattices[v]
                .iter()
                .map(|x| x.as_i64())
                .filter(|&x| x != current[v])
                .collect()
        })
        .collect();

    // One unrestricted search decides feasibility before the minimal-change sweep.
    let mut relaxed: Vec<Option<i64>> = current.iter().copied().map(Some).collect();
    let mut relaxed_domains = domains.clone();
    for &v in &candidates {
        relaxed[v] = None;
        relaxed_domains[v].push(current[v]);
    }
    let mut any = false;
    enumerate(
        &net,
        &candidates,
        &relaxed_domains,
        &mut relaxed,
        &mut |_| {
            any = true;
            false
        },
    )?;
    if !any {
        return Err(RepairError::Infeasible);
    }

    for k in 1..=candidates.len() {
        let mut best: Option<RepairKey> = None;
        combinations(&candidates, k, &mut |subset| {
            let mut values: Vec<Option<i64>> = current.iter().copied().map(Some).collect();
            for &v in subset {
                values[v] = None;
            }
            let mut visit = |vals: &[Option<i64>]| {
                let mut decreases = false;
                let mut distance = 0.0;
                let mut new_values = Vec::with_capacity(subset.len());
                for &v in subset {
                    let to = vals[v].expect("assigned");
                    decreases |= to < current[v];
                    distance += move_distance(binary[v], current[v], to);
                    new_values.push(to);
                }
                let key = RepairKey {
                    decreases,
                    distance,
                    changed: subset.to_vec(),
                    values: new_values,
                };
                if best.as_ref().is_none_or(|b| key.cmp(b) == Ordering::Less) {
                    best = Some(key);
                }
                true
            };
            // Only the unchanged options are fixed; constraints among them
            // that do not involve the subset were already violated or not.
            if net.consistent_fixed(&values)? {
                enumerate(&net, subset, &domains, &mut values, &mut visit)?;
            }
            Ok(())
        })?;
        if let Some(key) = best {
            let mut out = current.clone();
            for (&v, &x) in key.changed.iter().zip(&key.values) {
                out[v] = x;
            }
            return Ok(schema
                .configuration_from_ints(&out)
                .expect("lattice values are in range"));
        }
    }
    Err(RepairError::Infeasible)
}
