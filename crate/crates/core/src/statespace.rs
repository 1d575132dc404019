//! State registry: the per-state performance cache and the master/slave
//! merge structure that collapses states sharing a measurement.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::env::{EnvError, Environment};
use crate::model::{state_id, Configuration, StateId};

/// Result of one merge pass.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeSummary {
    /// Masters that gained their first slave during this pass.
    pub groups_formed: usize,
    /// `(slave, master)` pairs created during this pass, in visit order.
    pub merged: Vec<(StateId, StateId)>,
}

#[derive(Debug, Clone)]
pub struct StateRegistry {
    states: HashMap<StateId, Configuration>,
    visit_order: Vec<StateId>,
    perf_cache: HashMap<StateId, f64>,
    perf_to_master: BTreeMap<i64, StateId>,
    slave_to_master: HashMap<StateId, StateId>,
    group_masters: HashSet<StateId>,
    merged_upto: usize,
    evaluations: u64,
    key_decimals: u32,
}

impl Default for StateRegistry {
    fn default() -> Self {
        Self::new(0)
    }
}

impl StateRegistry {
    /// `key_decimals` is the rounding applied to measurements before grouping.
    pub fn new(key_decimals: u32) -> Self {
        Self {
            states: HashMap::new(),
            visit_order: Vec::new(),
            perf_cache: HashMap::new(),
            perf_to_master: BTreeMap::new(),
            slave_to_master: HashMap::new(),
            group_masters: HashSet::new(),
            merged_upto: 0,
            evaluations: 0,
            key_decimals,
        }
    }

    fn measurement_key(&self, m: f64) -> i64 {
        (m * 10f64.powi(self.key_decimals as i32)).round() as i64
    }

    /// Master of `state` if it was merged, otherwise `state` itself.
    pub fn resolve(&self, state: StateId) -> StateId {
        self.slave_to_master.get(&state).copied().unwrap_or(state)
    }

    pub fn cached(&self, state: StateId) -> Option<f64> {
        self.perf_cache.get(&self.resolve(state)).copied()
    }

    /// Returns the cached measurement for `config` or evaluates it exactly once.
    pub fn get_or_measure<E: Environment + ?Sized>(
        &mut self,
        state: StateId,
        config: &Configuration,
        env: &E,
    ) -> Result<f64, EnvError> {
        debug_assert_eq!(state, state_id(config));
        if let Some(m) = self.cached(state) {
            return Ok(m);
        }
        let m = env.evaluate(config)?;
        self.record(state, config.clone(), m);
        Ok(m)
    }

    /// Stores a fresh measurement. Counts as one environment evaluation.
    pub fn record(&mut self, state: StateId, config: Configuration, measurement: f64) {
        if self.perf_cache.contains_key(&state) {
            return;
        }
        self.states.insert(state, config);
        self.visit_order.push(state);
        self.perf_cache.insert(state, measurement);
        self.evaluations += 1;
    }

    /// Groups cached states by measurement key. The first state seen with a
    /// key is its master; later ones become slaves of it.
    pub fn merge_states(&mut self) -> MergeSummary {
        let mut summary = MergeSummary::default();
        for &state in &self.visit_order[self.merged_upto..] {
            let key = self.measurement_key(self.perf_cache[&state]);
            match self.perf_to_master.get(&key) {
                Some(&master) if master != state => {
                    if self.group_masters.insert(master) {
                        summary.groups_formed += 1;
                    }
                    self.slave_to_master.insert(state, master);
                    summary.merged.push((state, master));
                }
                Some(_) => {}
                None => {
                    self.perf_to_master.insert(key, state);
                }
            }
        }
        self.merged_upto = self.visit_order.len();
        summary
    }

    pub fn configuration(&self, state: StateId) -> Option<&Configuration> {
        self.states.get(&state)
    }

    /// Distinct raw states ever cached.
    pub fn total_states(&self) -> usize {
        self.states.len()
    }

    pub fn merged_states(&self) -> usize {
        self.slave_to_master.len()
    }

    /// States that are their own master.
    pub fn canonical_states(&self) -> usize {
        self.states.len() - self.slave_to_master.len()
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    pub fn visit_order(&self) -> &[StateId] {
        &self.visit_order
    }

    pub fn slaves(&self) -> impl Iterator<Item = (StateId, StateId)> + '_ {
        self.slave_to_master.iter().map(|(s, m)| (*s, *m))
    }

    pub fn snapshot(&self) -> RegistrySnapshot {
        RegistrySnapshot {
            key_decimals: self.key_decimals,
            visit_order: self.visit_order.clone(),
            perf_cache: self
                .visit_order
                .iter()
                .map(|s| (*s, self.perf_cache[s]))
                .collect(),
            slave_to_master: self.slave_to_master.iter().map(|(s, m)| (*s, *m)).collect(),
            evaluations: self.evaluations,
        }
    }

    /// Rebuilds a registry from a snapshot plus the state dictionary.
    pub fn from_snapshot(
        snapshot: &RegistrySnapshot,
        states: &BTreeMap<StateId, Configuration>,
    ) -> Result<Self, String> {
        let mut reg = Self::new(snapshot.key_decimals);
        for s in &snapshot.visit_order {
            let config = states
                .get(s)
                .ok_or_else(|| format!("state {s} missing from the state dictionary"))?;
            let m = *snapshot
                .perf_cache
                .get(s)
                .ok_or_else(|| format!("state {s} missing from the performance cache"))?;
            reg.states.insert(*s, config.clone());
            reg.visit_order.push(*s);
            reg.perf_cache.insert(*s, m);
        }
        reg.evaluations = snapshot.evaluations;
        for (slave, master) in &snapshot.slave_to_master {
            reg.slave_to_master.insert(*slave, *master);
            reg.group_masters.insert(*master);
        }
        for s in &reg.visit_order {
            if !reg.slave_to_master.contains_key(s) {
                let key = reg.measurement_key(reg.perf_cache[s]);
                reg.perf_to_master.entry(key).or_insert(*s);
            }
        }
        reg.merged_upto = reg.visit_order.len();
        Ok(reg)
    }
}

/// Serializable view of a registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrySnapshot {
    pub key_decimals: u32,
    pub visit_order: Vec<StateId>,
    pub perf_cache: BTreeMap<StateId, f64>,
    pub slave_to_master: BTreeMap<StateId, StateId>,
    pub evaluations: u64,
}
