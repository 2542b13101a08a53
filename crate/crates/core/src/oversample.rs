//! SMOTE oversampling on a (reduced) feature table.
//!
//! Synthetic rows interpolate between a class row and one of its k nearest
//! same-class neighbors. Base rows are cycled in table order; the neighbor
//! and the gap are drawn from a generator seeded with `seed ^ species_id`, so
//! each class's draws do not depend on the other classes.

use thiserror::Error;

use crate::dataset::{Provenance, SampleLabel};
use crate::features::{FeatureTable, FeatureVector};
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum SmoteError {
    #[error("invalid SMOTE configuration: {0}")]
    Config(String),
    #[error("neighborhood error: {0}")]
    Neighborhood(String),
    #[error("cannot oversample class {species:?}: it has {rows} row(s)")]
    TooFewRows { species: String, rows: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoteTarget {
    /// Bring every class up to the largest class count.
    MatchMajority,
    /// Bring every class up to at least this many rows.
    FixedPerClass(usize),
}

/// What [`rebalance`] does with a class that has a single row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SingletonPolicy {
    Skip,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmoteConfig {
    pub k_neighbors: usize,
    pub target: SmoteTarget,
    pub singleton: SingletonPolicy,
    pub seed: u64,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        Self {
            k_neighbors: 5,
            target: SmoteTarget::MatchMajority,
            singleton: SingletonPolicy::Skip,
            seed: 0,
        }
    }
}

/// One synthetic row with the table indices of its parents and the gap `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub vector: FeatureVector,
    pub base: usize,
    pub neighbor: usize,
    pub gap: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(t: &FeatureTable, query: usize, eligible: &[usize], k: usize) -> Vec<usize> {
    let q = &t.rows()[query].values;
    let mut cand: Vec<(f64, usize)> = eligible
        .iter()
        .filter(|&&i| i != query)
        .map(|&i| (sq_dist(q, &t.rows()[i].values), i))
        .collect();
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cand.truncate(k);
    cand.into_iter().map(|(_, i)| i).collect()
}

/// Indices of the `k` rows nearest to `query_row` (Euclidean, query
/// excluded, ties to the lower index), optionally within its class only.
pub fn knn_indices(t: &FeatureTable, query_row: usize, k: usize, same_class_only: bool) -> Result<Vec<usize>, SmoteError> {
    if query_row >= t.len() {
        return Err(SmoteError::Neighborhood(format!("row {query_row} out of range for {} rows", t.len())));
    }
    let species = t.rows()[query_row].label.species_id;
    let eligible: Vec<usize> = (0..t.len())
        .filter(|&i| !same_class_only || t.rows()[i].label.species_id == species)
        .collect();
    if k + 1 > eligible.len() {
        return Err(SmoteError::Neighborhood(format!(
            "{k} neighbors requested, {} other eligible row(s)",
            eligible.len() - 1
        )));
    }
    Ok(nearest(t, query_row, &eligible, k))
}

/// `n_synthetic` SMOTE rows for one class, with parent indices.
pub fn smote_class_traced(
    t: &FeatureTable,
    species: &SampleLabel,
    n_synthetic: usize,
    cfg: &SmoteConfig,
) -> Result<Vec<SyntheticSample>, SmoteError> {
    if cfg.k_neighbors == 0 {
        return Err(SmoteError::Config("k_neighbors must be at least 1".into()));
    }
    let members: Vec<usize> = (0..t.len())
        .filter(|&i| t.rows()[i].label.species_id == species.species_id)
        .collect();
    if n_synthetic == 0 {
        return Ok(Vec::new());
    }
    if members.len() < 2 {
        return Err(SmoteError::TooFewRows {
            species: species.species_name.clone(),
            rows: members.len(),
        });
    }
    let k = cfg.k_neighbors.min(members.len() - 1);
    let neighborhoods: Vec<Vec<usize>> = members.iter().map(|&i| nearest(t, i, &members, k)).collect();
    let mut rng = Rng::seed_from(cfg.seed ^ species.species_id as u64);
    let mut out = Vec::with_capacity(n_synthetic);
    for j in 0..n_synthetic {
        let slot = j % members.len();
        let base = members[slot];
        let neighbor = neighborhoods[slot][rng.index(k)];
        let gap = rng.uniform();
        let x = &t.rows()[base].values;
        let nn = &t.rows()[neighbor].values;
        let values = x.iter().zip(nn).map(|(a, b)| a + gap * (b - a)).collect();
        let vector = FeatureVector::new(format!("{}#smote{j}", t.rows()[base].sample_id), species.clone(), values)
            .with_provenance(Provenance::SmoteSynthetic);
        out.push(SyntheticSample {
            vector,
            base,
            neighbor,
            gap,
        });
    }
    Ok(out)
}

pub fn smote_class(
    t: &FeatureTable,
    species: &SampleLabel,
    n_synthetic: usize,
    cfg: &SmoteConfig,
) -> Result<Vec<FeatureVector>, SmoteError> {
    Ok(smote_class_traced(t, species, n_synthetic, cfg)?
        .into_iter()
        .map(|s| s.vector)
        .collect())
}

/// Per-class row counts indexed by species id, with one label per class.
fn class_census(t: &FeatureTable) -> Vec<(SampleLabel, usize)> {
    let mut census: Vec<Option<(SampleLabel, usize)>> = Vec::new();
    for r in t.rows() {
        let id = r.label.species_id;
        if census.len() <= id {
            census.resize(id + 1, None);
        }
        census[id].get_or_insert_with(|| (r.label.clone(), 0)).1 += 1;
    }
    census.into_iter().flatten().collect()
}

/// Appends synthetic rows so each class reaches the configured target.
/// Classes are processed in species-id order.
pub fn rebalance_traced(t: &FeatureTable, cfg: &SmoteConfig) -> Result<(FeatureTable, Vec<SyntheticSample>), SmoteError> {
    let census = class_census(t);
    let target = match cfg.target {
        SmoteTarget::MatchMajority => census.iter().map(|c| c.1).max().unwrap_or(0),
        SmoteTarget::FixedPerClass(n) => n,
    };
    let mut synthetic = Vec::new();
    for (label, count) in &census {
        let need = target.saturating_sub(*count);
        if need == 0 {
            continue;
        }
        if *count < 2 && cfg.singleton == SingletonPolicy::Skip {
            continue;
        }
        synthetic.extend(smote_class_traced(t, label, need, cfg)?);
    }
    let mut rows = t.rows().to_vec();
    rows.extend(synthetic.iter().map(|s| s.vector.clone()));
    let table = FeatureTable::new(t.dims(), rows).map_err(|e| SmoteError::Config(e.to_string()))?;
    Ok((table, synthetic))
}

pub fn rebalance(t: &FeatureTable, cfg: &SmoteConfig) -> Result<FeatureTable, SmoteError> {
    rebalance_traced(t, cfg).map(|r| r.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::rng::Rng;

    fn table(rows: &[(usize, &[f64])]) -> FeatureTable {
        let rows = rows
            .iter()
            .enumerate()
            .map(|(i, (s, v))| FeatureVector::new(format!("r{i}"), SampleLabel::new(*s, format!("sp{s}")), v.to_vec()))
            .collect();
        FeatureTable::from_rows(rows).unwrap()
    }

    #[test]
    fn knn_simple_and_ties() {
        let t = table(&[(0, &[0.0]), (0, &[1.0]), (0, &[10.0])]);
        assert_eq!(knn_indices(&t, 0, 1, false).unwrap(), vec![1]);
        let dup = table(&[(0, &[5.0]), (0, &[1.0]), (0, &[1.0]), (0, &[1.0])]);
        assert_eq!(knn_indices(&dup, 2, 1, false).unwrap(), vec![1]);
        assert_eq!(knn_indices(&dup, 1, 2, false).unwrap(), vec![2, 3]);
        assert!(matches!(knn_indices(&t, 0, 3, false), Err(SmoteError::Neighborhood(_))));
    }

    #[test]
    fn knn_same_class_only() {
        let t = table(&[(0, &[0.0]), (1, &[0.1]), (0, &[3.0]), (1, &[5.0])]);
        assert_eq!(knn_indices(&t, 0, 1, true).unwrap(), vec![2]);
        assert_eq!(knn_indices(&t, 0, 1, false).unwrap(), vec![1]);
        assert!(knn_indices(&t, 0, 2, true).is_err());
    }

    #[test]
    fn knn_matches_brute_force() {
        let mut rng = Rng::seed_from(11);
        let rows: Vec<Vec<f64>> = (0..10).map(|_| (0..3).map(|_| rng.normal()).collect()).collect();
        let t = table(&rows.iter().map(|r| (0, r.as_slice())).collect::<Vec<_>>());
        for q in 0..10 {
            let mut all: Vec<(f64, usize)> = (0..10)
                .filter(|&j| j != q)
                .map(|j| {
                    let d: f64 = (0..3).map(|c| (rows[q][c] - rows[j][c]).powi(2)).sum::<f64>().sqrt();
                    (d, j)
                })
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let expected: Vec<usize> = all[..4].iter().map(|p| p.1).collect();
            assert_eq!(knn_indices(&t, q, 4, false).unwrap(), expected);
        }
    }

    #[test]
    fn segment_containment_in_one_dimension() {
        let t = table(&[(0, &[0.0]), (0, &[1.0]), (1, &[9.0]), (1, &[8.0]), (1, &[7.0])]);
        let label = SampleLabel::new(0, "sp0");
        let out = smote_class(&t, &label, 50, &SmoteConfig::default()).unwrap();
        assert_eq!(out.len(), 50);
        assert!(out.iter().all(|v| (0.0..=1.0).contains(&v.values[0])));
        assert!(out.iter().all(|v| v.label == label && v.provenance == Provenance::SmoteSynthetic));
    }

    #[test]
    fn identical_rows_and_empty_request() {
        let t = table(&[(0, &[2.0, 3.0]), (0, &[2.0, 3.0]), (0, &[2.0, 3.0])]);
        let label = SampleLabel::new(0, "sp0");
        let out = smote_class(&t, &label, 7, &SmoteConfig::default()).unwrap();
        assert!(out.iter().all(|v| v.values == vec![2.0, 3.0]));
        assert!(smote_class(&t, &label, 0, &SmoteConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn singleton_class_policies() {
        let t = table(&[(0, &[0.0]), (1, &[1.0]), (1, &[2.0]), (1, &[3.0])]);
        let err = smote_class(&t, &SampleLabel::new(0, "sp0"), 2, &SmoteConfig::default()).unwrap_err();
        assert!(matches!(err, SmoteError::TooFewRows { ref species, rows: 1 } if species == "sp0"));
        let skipped = rebalance(&t, &SmoteConfig::default()).unwrap();
        assert_eq!(skipped.len(), 4);
        let strict = SmoteConfig {
            singleton: SingletonPolicy::Error,
            ..SmoteConfig::default()
        };
        assert!(rebalance(&t, &strict).is_err());
    }

    #[test]
    fn rebalance_two_and_seven() {
        let mut rows: Vec<(usize, Vec<f64>)> = vec![(0, vec![0.0, 0.0]), (0, vec![1.0, 1.0])];
        rows.extend((0..7).map(|i| (1, vec![5.0 + i as f64, -(i as f64)])));
        let t = table(&rows.iter().map(|(s, v)| (*s, v.as_slice())).collect::<Vec<_>>());
        let (out, synth) = rebalance_traced(&t, &SmoteConfig::default()).unwrap();
        let counts = class_census(&out);
        assert_eq!(counts.iter().map(|c| c.1).collect::<Vec<_>>(), vec![7, 7]);
        assert!(synth.iter().all(|s| s.vector.label.species_id == 0));
        assert_eq!(&out.rows()[..9], t.rows());
    }

    #[test]
    fn fixed_target_never_removes_rows() {
        let t = table(&[(0, &[0.0]), (0, &[1.0]), (1, &[1.0]), (1, &[2.0]), (1, &[3.0]), (1, &[4.0])]);
        let cfg = SmoteConfig {
            target: SmoteTarget::FixedPerClass(3),
            ..SmoteConfig::default()
        };
        let counts: Vec<usize> = class_census(&rebalance(&t, &cfg).unwrap()).iter().map(|c| c.1).collect();
        assert_eq!(counts, vec![3, 4]);
    }

    #[test]
    fn zero_neighbors_rejected() {
        let t = table(&[(0, &[0.0]), (0, &[1.0])]);
        let cfg = SmoteConfig {
            k_neighbors: 0,
            ..SmoteConfig::default()
        };
        assert!(matches!(smote_class(&t, &SampleLabel::new(0, "sp0"), 1, &cfg), Err(SmoteError::Config(_))));
    }

    proptest! {
        #[test]
        fn synthetic_rows_stay_inside_class_box(
            pts in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), 2..8),
            n in 0usize..30,
            seed in any::<u64>(),
        ) {
            let t = table(&pts.iter().map(|p| (0, p.as_slice())).collect::<Vec<_>>());
            let cfg = SmoteConfig { seed, ..SmoteConfig::default() };
            let out = smote_class_traced(&t, &SampleLabel::new(0, "sp0"), n, &cfg).unwrap();
            prop_assert_eq!(out.len(), n);
            for s in &out {
                prop_assert!((0.0..1.0).contains(&s.gap));
                prop_assert_ne!(s.base, s.neighbor);
                for c in 0..3 {
                    let lo = pts.iter().map(|p| p[c]).fold(f64::INFINITY, f64::min);
                    let hi = pts.iter().map(|p| p[c]).fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(s.vector.values[c] >= lo - 1e-9 && s.vector.values[c] <= hi + 1e-9);
                }
            }
        }
    }
}
