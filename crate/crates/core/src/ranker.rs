//! Ranking performance-influential options: min-max normalization, seeded
//! k-means over option values, cross-cluster mean shifts, and MAP scoring.

use std::collections::HashSet;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Configuration, OptionKind, Schema};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RankError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("k = {k} exceeds the number of rows ({rows})")]
    TooManyClusters { k: usize, rows: usize },
    #[error("k must be at least 1")]
    ZeroClusters,
    #[error("ranking needs at least two non-empty clusters, found {0}")]
    TooFewClusters(usize),
    #[error("relevant set is empty")]
    EmptyRelevant,
    #[error("measurement {0} is not finite and non-negative")]
    BadMeasurement(f64),
}

/// Configurations paired with their measured throughput.
#[derive(Debug, Clone, Default)]
pub struct PerfDataset {
    pub records: Vec<(Configuration, f64)>,
}

impl PerfDataset {
    pub fn measurements(&self) -> Vec<f64> {
        self.records.iter().map(|(_, m)| *m).collect()
    }
}

/// Feature matrix: binary options as 0/1, numerical options min-max scaled
/// per column over the dataset (constant columns become 0).
pub fn normalize(schema: &Schema, dataset: &PerfDataset) -> Result<Vec<Vec<f64>>, RankError> {
    if dataset.records.is_empty() {
        return Err(RankError::EmptyDataset);
    }
    let n = schema.len();
    let raw: Vec<Vec<f64>> = dataset
        .records
        .iter()
        .map(|(c, _)| c.values().iter().map(|v| v.as_i64() as f64).collect())
        .collect();
    let mut out = raw.clone();
    for (col, opt) in schema.options().iter().enumerate().take(n) {
        if opt.kind() == OptionKind::Binary {
            continue;
        }
        let lo = raw.iter().map(|r| r[col]).fold(f64::INFINITY, f64::min);
        let hi = raw.iter().map(|r| r[col]).fold(f64::NEG_INFINITY, f64::max);
        for (o, r) in out.iter_mut().zip(&raw) {
            o[col] = if hi > lo {
                (r[col] - lo) / (hi - lo)
            } else {
                0.0
            };
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

pub const MAX_KMEANS_ITERATIONS: usize = 100;

/// Lloyd's k-means with k-means++ seeding. Stops when assignments no longer
/// change or after [`MAX_KMEANS_ITERATIONS`] rounds. An emptied cluster keeps
/// its previous centroid.
pub fn cluster(matrix: &[Vec<f64>], k: usize, seed: u64) -> Result<Clustering, RankError> {
    if k == 0 {
        return Err(RankError::ZeroClusters);
    }
    if k > matrix.len() {
        return Err(RankError::TooManyClusters {
            k,
            rows: matrix.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(matrix[rng.random_range(0..matrix.len())].clone());
    while centroids.len() < k {
        let d2: Vec<f64> = matrix
            .iter()
            .map(|p| {
                centroids
                    .iter()
                    .map(|c| sq_dist(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = d2.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..matrix.len())
        };
        centroids.push(matrix[pick].clone());
    }

    let dims = matrix.first().map_or(0, Vec::len);
    let mut assignment: Vec<usize> = matrix.iter().map(|p| nearest(p, &centroids)).collect();
    let mut iterations = 0;
    while iterations < MAX_KMEANS_ITERATIONS {
        iterations += 1;
        let mut sums = vec![vec![0.0; dims]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in matrix.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next: Vec<usize> = matrix.iter().map(|p| nearest(p, &centroids)).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    Ok(Clustering {
        assignment,
        centroids,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub option: String,
    pub score: f64,
    pub weight: f64,
}

/// Options ordered by score (non-increasing); the top prefix is influential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedOptions {
    pub entries: Vec<RankEntry>,
    pub influential: Vec<String>,
    pub weight: f64,
}

impl RankedOptions {
    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.option.as_str()).collect()
    }

    /// Writes the ranking's weights onto the schema's options.
    pub fn apply_weights(&self, schema: &mut Schema) {
        let mut weights = schema.weights();
        for e in &self.entries {
            if let Some(i) = schema.index_of(&e.option) {
                weights[i] = e.weight;
            }
        }
        schema.set_weights(&weights);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankerParams {
    pub clusters: usize,
    pub top: usize,
    pub weight: f64,
    pub seed: u64,
}

impl Default for RankerParams {
    fn default() -> Self {
        Self {
            clusters: 5,
            top: 10,
            weight: 10.0,
            seed: 0,
        }
    }
}

/// Scores each option by |mean_H - mean_L| of its normalized value, where H
/// and L are the clusters with the highest and lowest mean measurement.
pub fn rank_options(
    schema: &Schema,
    dataset: &PerfDataset,
    assignment: &[usize],
    params: &RankerParams,
) -> Result<RankedOptions, RankError> {
    for (_, m) in &dataset.records {
        if !(m.is_finite() && *m >= 0.0) {
            return Err(RankError::BadMeasurement(*m));
        }
    }
    let matrix = normalize(schema, dataset)?;
    let k = assignment.iter().copied().max().map_or(0, |m| m + 1);
    let mut count = vec![0usize; k];
    let mut perf = vec![0.0; k];
    let mut feature_sums = vec![vec![0.0; schema.len()]; k];
    for ((row, (_, m)), &a) in matrix.iter().zip(&dataset.records).zip(assignment) {
        count[a] += 1;
        perf[a] += m;
        for (s, x) in feature_sums[a].iter_mut().zip(row) {
            *s += x;
        }
    }
    let live: Vec<usize> = (0..k).filter(|&c| count[c] > 0).collect();
    if live.len() < 2 {
        return Err(RankError::TooFewClusters(live.len()));
    }
    let mean_perf = |c: usize| perf[c] / count[c] as f64;
    let mut high = live[0];
    let mut low = live[0];
    for &c in &live[1..] {
        if mean_perf(c) > mean_perf(high) {
            high = c;
        }
        if mean_perf(c) < mean_perf(low) {
            low = c;
        }
    }
    let scores: Vec<f64> = (0..schema.len())
        .map(|o| {
            if mean_perf(high) == mean_perf(low) {
                0.0
            } else {
                let h = feature_sums[high][o] / count[high] as f64;
                let l = feature_sums[low][o] / count[low] as f64;
                (h - l).abs()
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..schema.len()).collect();
    // Stable sort keeps schema order among ties.
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let top = params.top.min(schema.len());
    let entries: Vec<RankEntry> = order
        .iter()
        .enumerate()
        .map(|(rank, &o)| RankEntry {
            option: schema.options()[o].name().to_string(),
            score: scores[o],
            weight: if rank < top { params.weight } else { 1.0 },
        })
        .collect();
    let influential = entries[..top].iter().map(|e| e.option.clone()).collect();
    Ok(RankedOptions {
        entries,
        influential,
        weight: params.weight,
    })
}

/// Normalizes, clusters (k capped at the row count) and ranks in one go.
pub fn rank_dataset(
    schema: &Schema,
    dataset: &PerfDataset,
    params: &RankerParams,
) -> Result<RankedOptions, RankError> {
    let matrix = normalize(schema, dataset)?;
    let k = params.clusters.min(matrix.len());
    let clustering = cluster(&matrix, k, params.seed)?;
    rank_options(schema, dataset, &clustering.assignment, params)
}

/// Exact average precision of one ranked list against a relevant set.
/// Relevant items missing from the list contribute zero.
pub fn average_precision_exact<S: AsRef<str>>(
    ranked: &[S],
    relevant: &[S],
) -> Result<Ratio<i64>, RankError> {
    let relevant: HashSet<&str> = relevant.iter().map(AsRef::as_ref).collect();
    if relevant.is_empty() {
        return Err(RankError::EmptyRelevant);
    }
    let mut hits = 0i64;
    let mut sum = Ratio::from_integer(0);
    let mut seen = HashSet::new();
    for (pos, item) in ranked.iter().enumerate() {
        let item = item.as_ref();
        if relevant.contains(item) && seen.insert(item) {
            hits += 1;
            sum += Ratio::new(hits, pos as i64 + 1);
        }
    }
    Ok(sum / relevant.len() as i64)
}

/// Single-query MAP (the average precision) as a float.
pub fn map_score<S: AsRef<str>>(ranked: &[S], relevant: &[S]) -> Result<f64, RankError> {
    let ap = average_precision_exact(ranked, relevant)?;
    Ok(*ap.numer() as f64 / *ap.denom() as f64)
}

/// Mean of per-query average precisions.
pub fn mean_average_precision<S: AsRef<str>>(
    queries: &[(Vec<S>, Vec<S>)],
) -> Result<Ratio<i64>, RankError> {
    if queries.is_empty() {
        return Err(RankError::EmptyRelevant);
    }
    let mut total = Ratio::from_integer(0);
    for (ranked, relevant) in queries {
        total += average_precision_exact(ranked, relevant)?;
    }
    Ok(total / queries.len() as i64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{OptionSpec, Value};
    use proptest::prelude::*;
    use rand::Rng;

    fn two_option_schema() -> Schema {
        Schema::new(
            vec![
                OptionSpec::binary("X", Value::Off).unwrap(),
                OptionSpec::numerical("Y", 1, 512, 1).unwrap(),
            ],
            vec![],
        )
        .unwrap()
    }

    fn record(schema: &Schema, x: Value, y: i64, m: f64) -> (Configuration, f64) {
        (
            schema
                .configuration_from_values(vec![x, Value::Int(y)])
                .unwrap(),
            m,
        )
    }

    #[test]
    fn normalize_rules() {
        let schema = two_option_schema();
        let ds = PerfDataset {
            records: vec![
                record(&schema, Value::Off, 1, 1.0),
                record(&schema, Value::On, 512, 1.0),
            ],
        };
        let m = normalize(&schema, &ds).unwrap();
        assert_eq!(m, vec![vec![0.0, 0.0], vec![1.0, 1.0]]);
        let constant = PerfDataset {
            records: (0..3).map(|_| record(&schema, Value::On, 8, 1.0)).collect(),
        };
        let m = normalize(&schema, &constant).unwrap();
        assert!(m.iter().all(|r| r[1] == 0.0 && r[0] == 1.0));
        assert_eq!(
            normalize(&schema, &PerfDataset::default()),
            Err(RankError::EmptyDataset)
        );
    }

    #[test]
    fn kmeans_separates_groups() {
        let m: Vec<Vec<f64>> = [0.0, 0.0, 0.0, 1.0, 1.0].iter().map(|&x| vec![x]).collect();
        let c = cluster(&m, 2, 7).unwrap();
        assert_eq!(c.assignment[0], c.assignment[1]);
        assert_eq!(c.assignment[1], c.assignment[2]);
        assert_eq!(c.assignment[3], c.assignment[4]);
        assert_ne!(c.assignment[0], c.assignment[3]);
        assert_eq!(c, cluster(&m, 2, 7).unwrap());
    }

    #[test]
    fn kmeans_single_cluster_is_column_mean() {
        let m = vec![vec![0.0, 1.0], vec![1.0, 1.0], vec![0.5, 0.0]];
        let c = cluster(&m, 1, 0).unwrap();
        assert!(c.assignment.iter().all(|&a| a == 0));
        assert!((c.centroids[0][0] - 0.5).abs() < 1e-12);
        assert!((c.centroids[0][1] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(
            cluster(&m, 4, 0),
            Err(RankError::TooManyClusters { k: 4, rows: 3 })
        );
    }

    #[test]
    fn planted_binary_option_ranks_first() {
        // X=ON -> 100, X=OFF -> 10; Y cycles independently of X.
        let schema = two_option_schema();
        let ys = [1, 512, 64, 8];
        let mut records = Vec::new();
        for (i, &y) in ys.iter().enumerate() {
            records.push(record(&schema, Value::On, y, 100.0));
            records.push(record(&schema, Value::Off, ys[(i + 2) % 4], 10.0));
        }
        let ds = PerfDataset { records };
        // Hand-built assignment: cluster 0 = X ON rows, cluster 1 = X OFF rows.
        let assignment: Vec<usize> = (0..8).map(|i| i % 2).collect();
        let ranked = rank_options(&schema, &ds, &assignment, &RankerParams::default()).unwrap();
        assert_eq!(ranked.entries[0].option, "X");
        assert_eq!(ranked.entries[0].score, 1.0);
        // Y takes the same multiset of values in both clusters.
        assert_eq!(ranked.entries[1].score, 0.0);
        assert_eq!(ranked.influential, vec!["X", "Y"]);
    }

    #[test]
    fn identical_measurements_give_zero_scores() {
        let schema = two_option_schema();
        let ds = PerfDataset {
            records: vec![
                record(&schema, Value::On, 1, 5.0),
                record(&schema, Value::Off, 512, 5.0),
                record(&schema, Value::On, 64, 5.0),
            ],
        };
        let ranked = rank_options(&schema, &ds, &[0, 1, 1], &RankerParams::default()).unwrap();
        assert_eq!(ranked.names(), vec!["X", "Y"]);
        assert!(ranked.entries.iter().all(|e| e.score == 0.0));
    }

    #[test]
    fn perfectly_correlated_tie_keeps_schema_order() {
        let schema = two_option_schema();
        let ds = PerfDataset {
            records: vec![
                record(&schema, Value::On, 512, 50.0),
                record(&schema, Value::Off, 1, 5.0),
            ],
        };
        let ranked = rank_options(&schema, &ds, &[0, 1], &RankerParams::default()).unwrap();
        assert_eq!(ranked.names(), vec!["X", "Y"]);
        assert_eq!(ranked.entries[0].score, 1.0);
        assert_eq!(ranked.entries[1].score, 1.0);
        assert_eq!(
            rank_options(&schema, &ds, &[0, 0], &RankerParams::default()),
            Err(RankError::TooFewClusters(1))
        );
    }

    #[test]
    fn weights_written_back() {
        let mut schema = two_option_schema();
        let ds = PerfDataset {
            records: vec![
                record(&schema, Value::On, 512, 50.0),
                record(&schema, Value::Off, 1, 5.0),
            ],
        };
        let params = RankerParams {
            top: 1,
            ..RankerParams::default()
        };
        let ranked = rank_options(&schema, &ds, &[0, 1], &params).unwrap();
        ranked.apply_weights(&mut schema);
        assert_eq!(schema.weights(), vec![10.0, 1.0]);
    }

    #[test]
    fn map_examples() {
        let ap = average_precision_exact(&["r1", "r2", "x"], &["r1", "r2"]).unwrap();
        assert_eq!(ap, Ratio::from_integer(1));
        let ap = average_precision_exact(&["r1", "x", "r2"], &["r1", "r2"]).unwrap();
        assert_eq!(ap, Ratio::new(5, 6));
        assert_eq!(map_score(&["a", "b"], &["c", "d"]).unwrap(), 0.0);
        let empty: [&str; 0] = [];
        assert_eq!(map_score(&["a"], &empty), Err(RankError::EmptyRelevant));
        let queries = vec![
            (vec!["r1", "r2"], vec!["r1", "r2"]),
            (vec!["r1", "x", "r2"], vec!["r1", "r2"]),
        ];
        assert_eq!(
            mean_average_precision(&queries).unwrap(),
            Ratio::new(11, 12)
        );
    }

    proptest! {
        #[test]
        fn map_bounds(perm in Just((0..12).collect::<Vec<u32>>()).prop_shuffle(), r in 1usize..6) {
            let ranked: Vec<String> = perm.iter().map(|i| format!("o{i}")).collect();
            let relevant: Vec<String> = (0..r as u32).map(|i| format!("o{i}")).collect();
            let s = map_score(&ranked, &relevant).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
            let top_hit = ranked[..r].iter().all(|x| relevant.contains(x));
            prop_assert_eq!(s == 1.0, top_hit);
        }

        #[test]
        fn rescaling_measurements_keeps_ranking(scale in 0.01f64..1000.0, seed in 0u64..50) {
            let schema = two_option_schema();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let records: Vec<_> = (0..20)
                .map(|_| {
                    let x = if rng.random_bool(0.5) { Value::On } else { Value::Off };
                    let y = 1i64 << rng.random_range(0..10);
                    let m = if x == Value::On { 80.0 } else { 20.0 } + rng.random_range(0.0..5.0);
                    record(&schema, x, y, m)
                })
                .collect();
            let ds = PerfDataset { records: records.clone() };
            let scaled = PerfDataset {
                records: records.into_iter().map(|(c, m)| (c, m * scale)).collect(),
            };
            let params = RankerParams { clusters: 3, seed, ..RankerParams::default() };
            let a = rank_dataset(&schema, &ds, &params).unwrap();
            let b = rank_dataset(&schema, &scaled, &params).unwrap();
            prop_assert_eq!(a.names(), b.names());
            for (x, y) in a.entries.iter().zip(&b.entries) {
                prop_assert!((x.score - y.score).abs() < 1e-12);
            }
        }
    }
}
