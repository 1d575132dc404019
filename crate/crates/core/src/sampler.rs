//! Constraint-aware t-way covering arrays for the option-ranking stage.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::constraint::{find_completion, EvalError};
use crate::model::{Configuration, OptionKind, OptionSpec, Schema, Value};
use crate::valuegen::lattice;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SampleError {
    #[error("strength {t} exceeds the number of options ({options})")]
    StrengthTooLarge { t: usize, options: usize },
    #[error("strength must be at least 1")]
    ZeroStrength,
    #[error("no configuration satisfies the constraints")]
    OverConstrained,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerParams {
    pub strength: usize,
    pub levels: usize,
    pub candidates: usize,
    pub seed: u64,
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self {
            strength: 3,
            levels: 4,
            candidates: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePlan {
    pub strength: usize,
    pub levels: Vec<Vec<Value>>,
    pub rows: Vec<Configuration>,
}

/// Values sampled for one option: `{OFF, ON}` for binary options, otherwise
/// `count` lattice points evenly spaced in log2 (lattice ends always included).
pub fn sampling_levels(spec: &OptionSpec, count: usize) -> Vec<Value> {
    let lat = lattice(spec);
    if spec.kind() == OptionKind::Binary {
        return lat.values().to_vec();
    }
    let n = lat.len();
    if count >= n || n == 1 {
        return lat.values().to_vec();
    }
    let count = count.max(2);
    let mut picked: Vec<usize> = (0..count)
        .map(|i| ((i * (n - 1)) as f64 / (count - 1) as f64).round() as usize)
        .collect();
    picked.dedup();
    picked.into_iter().map(|i| lat.values()[i]).collect()
}

fn combinations(n: usize, t: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut combo: Vec<usize> = (0..t).collect();
    if t > n {
        return out;
    }
    loop {
        out.push(combo.clone());
        let mut i = t;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if combo[i] < n - t + i {
                combo[i] += 1;
                for j in i + 1..t {
                    combo[j] = combo[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Coverage bookkeeping for one t-subset of options.
struct Block {
    options: Vec<usize>,
    radix: Vec<usize>,
    feasible: Vec<bool>,
    covered: Vec<bool>,
}

impl Block {
    fn index(&self, row: &[usize]) -> usize {
        self.options
            .iter()
            .zip(&self.radix)
            .fold(0, |acc, (&o, &r)| acc * r + row[o])
    }

    fn decode(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.options.len()];
        for k in (0..self.options.len()).rev() {
            out[k] = idx % self.radix[k];
            idx /= self.radix[k];
        }
        out
    }
}

/// Greedy covering-array construction.
///
/// Each round draws `candidates` random feasible rows, each seeded with a
/// not-yet-covered tuple, and keeps the one covering the most new tuples.
/// Tuples that no feasible row can contain are dropped from the target.
pub fn build_covering_array(
    schema: &Schema,
    params: &SamplerParams,
) -> Result<SamplePlan, SampleError> {
    let n = schema.len();
    let t = params.strength;
    if t == 0 {
        return Err(SampleError::ZeroStrength);
    }
    if t > n {
        return Err(SampleError::StrengthTooLarge { t, options: n });
    }
    let levels: Vec<Vec<Value>> = schema
        .options()
        .iter()
        .map(|o| sampling_levels(o, params.levels))
        .collect();
    let domains: Vec<Vec<i64>> = levels
        .iter()
        .map(|l| l.iter().map(|v| v.as_i64()).collect())
        .collect();
    let constraints = schema.constraints();
    let constrained: Vec<bool> = {
        let mut c = vec![false; n];
        for con in constraints {
            for s in con.slots() {
                c[s] = true;
            }
        }
        c
    };
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let no_fix = vec![None; n];
    if find_completion::<ChaCha8Rng>(&no_fix, &domains, constraints, None)?.is_none() {
        return Err(SampleError::OverConstrained);
    }

    // Tuple feasibility only depends on the constrained options it fixes.
    let mut memo: HashMap<Vec<(usize, usize)>, bool> = HashMap::new();
    let mut blocks = Vec::new();
    let mut remaining = 0usize;
    for options in combinations(n, t) {
        let radix: Vec<usize> = options.iter().map(|&o| levels[o].len()).collect();
        let size: usize = radix.iter().product();
        let mut block = Block {
            options,
            radix,
            feasible: vec![true; size],
            covered: vec![false; size],
        };
        for idx in 0..size {
            let tuple = block.decode(idx);
            let key: Vec<(usize, usize)> = block
                .options
                .iter()
                .zip(&tuple)
                .filter(|(o, _)| constrained[**o])
                .map(|(o, l)| (*o, *l))
                .collect();
            let ok = if key.is_empty() {
                true
            } else if let Some(&ok) = memo.get(&key) {
                ok
            } else {
                let mut partial = vec![None; n];
                for &(o, l) in &key {
                    partial[o] = Some(domains[o][l]);
                }
                let ok =
                    find_completion::<ChaCha8Rng>(&partial, &domains, constraints, None)?.is_some();
                memo.insert(key, ok);
                ok
            };
            block.feasible[idx] = ok;
            if ok {
                remaining += 1;
            }
        }
        blocks.push(block);
    }

    let mut rows: Vec<Vec<usize>> = Vec::new();
    while remaining > 0 {
        let uncovered: Vec<(usize, usize)> = blocks
            .iter()
            .enumerate()
            .flat_map(|(b, block)| {
                (0..block.covered.len())
                    .filter(move |&i| block.feasible[i] && !block.covered[i])
                    .map(move |i| (b, i))
            })
            .collect();
        let mut best: Option<(usize, Vec<usize>)> = None;
        for _ in 0..params.candidates.max(1) {
            let (b, i) = uncovered[rng.random_range(0..uncovered.len())];
            let block = &blocks[b];
            let mut partial = vec![None; n];
            for (&o, &l) in block.options.iter().zip(&block.decode(i)) {
                partial[o] = Some(domains[o][l]);
            }
            let full = find_completion(&partial, &domains, constraints, Some(&mut rng))?
                .expect("seed tuple is feasible");
            let row: Vec<usize> = full
                .iter()
                .enumerate()
                .map(|(o, v)| domains[o].iter().position(|x| x == v).expect("level value"))
                .collect();
            let gain = blocks
                .iter()
                .filter(|blk| {
                    let idx = blk.index(&row);
                    blk.feasible[idx] && !blk.covered[idx]
                })
                .count();
            if best.as_ref().is_none_or(|(g, _)| gain > *g) {
                best = Some((gain, row));
            }
        }
        let (_, row) = best.expect("at least one candidate");
        for blk in &mut blocks {
            let idx = blk.index(&row);
            if blk.feasible[idx] && !blk.covered[idx] {
                blk.covered[idx] = true;
                remaining -= 1;
            }
        }
        rows.push(row);
    }

    let rows = rows
        .into_iter()
        .map(|row| {
            let values = row.iter().enumerate().map(|(o, &l)| levels[o][l]).collect();
            schema
                .configuration_from_values(values)
                .expect("levels are lattice values")
        })
        .collect();
    Ok(SamplePlan {
        strength: t,
        levels,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::{check, parse_constraint};
    use std::collections::HashSet;

    fn binary_schema(n: usize) -> Schema {
        Schema::new(
            (0..n)
                .map(|i| OptionSpec::binary(format!("B{i}"), Value::Off).unwrap())
                .collect(),
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn levels_evenly_spaced_in_log2() {
        // Oracle: positions round(i * 10 / 3) for i = 0..4 -> 0, 3, 7, 10.
        let positions: Vec<u32> = (0..4)
            .map(|i| (i as f64 * 10.0 / 3.0).round() as u32)
            .collect();
        assert_eq!(positions, vec![0, 3, 7, 10]);
        let expected: Vec<Value> = positions.iter().map(|p| Value::Int(1 << p)).collect();
        let mc = OptionSpec::numerical("MaxClients", 1, 512, 102).unwrap();
        assert_eq!(sampling_levels(&mc, 4), expected);
        assert_eq!(
            expected,
            vec![
                Value::Int(1),
                Value::Int(8),
                Value::Int(128),
                Value::Int(1024)
            ]
        );
    }

    #[test]
    fn levels_binary_and_small_lattice() {
        let b = OptionSpec::binary("B", Value::On).unwrap();
        assert_eq!(sampling_levels(&b, 7), vec![Value::Off, Value::On]);
        let small = OptionSpec::numerical("S", 16, 64, 16).unwrap();
        assert_eq!(
            sampling_levels(&small, 4),
            vec![
                Value::Int(16),
                Value::Int(32),
                Value::Int(64),
                Value::Int(128)
            ]
        );
    }

    #[test]
    fn three_binary_full_factorial() {
        let schema = binary_schema(3);
        let plan = build_covering_array(&schema, &SamplerParams::default()).unwrap();
        assert_eq!(plan.rows.len(), 8);
        let distinct: HashSet<Vec<i64>> = plan.rows.iter().map(|r| r.ints()).collect();
        assert_eq!(distinct.len(), 8);
    }

    #[test]
    fn four_binary_pairwise() {
        let schema = binary_schema(4);
        let params = SamplerParams {
            strength: 2,
            ..SamplerParams::default()
        };
        let plan = build_covering_array(&schema, &params).unwrap();
        assert!(plan.rows.len() <= 16);
        let mut seen = HashSet::new();
        for r in &plan.rows {
            let v = r.ints();
            for i in 0..4 {
                for j in i + 1..4 {
                    seen.insert((i, j, v[i], v[j]));
                }
            }
        }
        // 6 option pairs x 4 value pairs.
        assert_eq!(seen.len(), 24);
    }

    #[test]
    fn constrained_pairs_only_feasible() {
        let schema = Schema::new(
            vec![
                OptionSpec::numerical("A", 1, 1, 1).unwrap(),
                OptionSpec::numerical("B", 1, 1, 1).unwrap(),
            ],
            vec![parse_constraint("A < B").unwrap()],
        )
        .unwrap();
        let params = SamplerParams {
            strength: 2,
            ..SamplerParams::default()
        };
        let plan = build_covering_array(&schema, &params).unwrap();
        assert_eq!(plan.levels[0], vec![Value::Int(1), Value::Int(2)]);
        let rows: HashSet<Vec<i64>> = plan.rows.iter().map(|r| r.ints()).collect();
        assert_eq!(rows, HashSet::from([vec![1, 2]]));
        for r in &plan.rows {
            assert!(check(r, schema.constraints()).unwrap().is_empty());
        }
    }

    #[test]
    fn errors() {
        let schema = binary_schema(2);
        assert_eq!(
            build_covering_array(&schema, &SamplerParams::default()),
            Err(SampleError::StrengthTooLarge { t: 3, options: 2 })
        );
        let impossible = Schema::new(
            vec![OptionSpec::numerical("A", 1, 4, 1).unwrap()],
            vec![parse_constraint("A > 100").unwrap()],
        )
        .unwrap();
        let params = SamplerParams {
            strength: 1,
            ..SamplerParams::default()
        };
        assert_eq!(
            build_covering_array(&impossible, &params),
            Err(SampleError::OverConstrained)
        );
    }

    #[test]
    fn deterministic_under_seed() {
        let schema = binary_schema(6);
        let params = SamplerParams::default();
        assert_eq!(
            build_covering_array(&schema, &params).unwrap(),
            build_covering_array(&schema, &params).unwrap()
        );
    }
}
