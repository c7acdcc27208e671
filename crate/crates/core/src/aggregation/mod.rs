//! Model-vector algebra: sample-weighted averaging, random-k cross-cluster
//! mixing and on-orbit consolidation.

mod trainer;

pub use trainer::{
    accuracy, centralized_reference, local_train, objective_loss, DataPartition, Dataset,
    LocalObjective, SyntheticTask, TaskSpec, TrainError, TrainerKind, TrainerSpec,
};

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum AggregationError {
    #[error("no models to aggregate")]
    Empty,
    #[error("model dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("{models} models but {weights} weights")]
    WeightCount { models: usize, weights: usize },
    #[error("aggregation weights must be non-negative and sum to a positive value")]
    Weights,
    #[error("model entries must be finite")]
    NonFinite,
    #[error("wire size must be positive")]
    WireBits,
    #[error("cluster {0} lists itself as reachable")]
    SelfReachable(usize),
    #[error("duplicate cluster id {0}")]
    DuplicateCluster(usize),
    #[error("unknown cluster id {0} in reachability")]
    UnknownCluster(usize),
    #[error("malformed model encoding")]
    Encoding,
}

/// Flat parameter vector plus its size on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVector<S: Scalar> {
    weights: Vec<S>,
    wire_bits: u64,
}

impl<S: Scalar> ModelVector<S> {
    pub fn new(weights: Vec<S>, bits_per_param: u32) -> Result<Self, AggregationError> {
        let wire_bits = weights.len() as u64 * bits_per_param as u64;
        Self::with_wire_bits(weights, wire_bits)
    }

    pub fn with_wire_bits(weights: Vec<S>, wire_bits: u64) -> Result<Self, AggregationError> {
        if wire_bits == 0 {
            return Err(AggregationError::WireBits);
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(AggregationError::NonFinite);
        }
        Ok(Self { weights, wire_bits })
    }

    pub fn zeros(dim: usize, bits_per_param: u32) -> Result<Self, AggregationError> {
        Self::new(vec![S::zero(); dim], bits_per_param)
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn wire_bits(&self) -> u64 {
        self.wire_bits
    }

    pub fn max_abs_diff(&self, other: &Self) -> S {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (*a - *b).abs())
            .fold(S::zero(), S::max)
    }

    /// Length-prefixed little-endian `f64` encoding.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * self.weights.len());
        out.extend_from_slice(&(self.weights.len() as u64).to_le_bytes());
        for w in &self.weights {
            out.extend_from_slice(&w.as_f64().to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(bytes: &[u8], bits_per_param: u32) -> Result<Self, AggregationError> {
        let (len, body) = bytes.split_first_chunk::<8>().ok_or(AggregationError::Encoding)?;
        let len = usize::try_from(u64::from_le_bytes(*len)).map_err(|_| AggregationError::Encoding)?;
        if body.len() != len.checked_mul(8).ok_or(AggregationError::Encoding)? {
            return Err(AggregationError::Encoding);
        }
        let weights = body
            .chunks_exact(8)
            .map(|c| S::of(f64::from_le_bytes(c.try_into().expect("chunk of 8"))))
            .collect();
        Self::new(weights, bits_per_param)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel<S: Scalar> {
    pub cluster_id: usize,
    pub model: ModelVector<S>,
    /// Samples hosted by all members of the cluster.
    pub n_total: u64,
}

/// `sum_j (w_j / sum w) * model_j`.
///
/// Evaluated as `m_0 + sum_j c_j (m_j - m_0)`, so identical inputs come back
/// bit-for-bit unchanged.
pub fn weighted_average<S, M>(models: &[M], weights: &[S]) -> Result<ModelVector<S>, AggregationError>
where
    S: Scalar,
    M: Borrow<ModelVector<S>>,
{
    let first = models.first().ok_or(AggregationError::Empty)?.borrow();
    if models.len() != weights.len() {
        return Err(AggregationError::WeightCount {
            models: models.len(),
            weights: weights.len(),
        });
    }
    if weights.iter().any(|w| !(*w >= S::zero()) || !w.is_finite()) {
        return Err(AggregationError::Weights);
    }
    let total: S = weights.iter().copied().sum();
    if !(total > S::zero()) {
        return Err(AggregationError::Weights);
    }
    let dim = first.dim();
    for m in models {
        let got = m.borrow().dim();
        if got != dim {
            return Err(AggregationError::Dimension { expected: dim, got });
        }
    }
    let mut out = first.weights.clone();
    for (m, w) in models.iter().zip(weights).skip(1) {
        let c = *w / total;
        if c == S::zero() {
            continue;
        }
        for ((o, x), x0) in out.iter_mut().zip(&m.borrow().weights).zip(&first.weights) {
            *o = *o + c * (*x - *x0);
        }
    }
    ModelVector::with_wire_bits(out, first.wire_bits)
}

/// `{cluster_id}` plus a uniform sample of `min(k_nbr, |reachable|)` reachable
/// clusters, sorted ascending.
pub fn sample_mixing_group<R: Rng + ?Sized>(
    cluster_id: usize,
    reachable: &BTreeSet<usize>,
    k_nbr: usize,
    rng: &mut R,
) -> Result<Vec<usize>, AggregationError> {
    if reachable.contains(&cluster_id) {
        return Err(AggregationError::SelfReachable(cluster_id));
    }
    let pool: Vec<usize> = reachable.iter().copied().collect();
    let take = k_nbr.min(pool.len());
    let mut group: Vec<usize> = rand::seq::index::sample(rng, pool.len(), take)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    group.push(cluster_id);
    group.sort_unstable();
    Ok(group)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingRound<S: Scalar> {
    /// Updated models, ascending by cluster id.
    pub models: Vec<ClusterModel<S>>,
    /// Mixing group of each cluster (same order as `models`).
    pub groups: Vec<Vec<usize>>,
    /// Number of neighbour models received, `sum_k |group_k| - 1`.
    pub transmissions: usize,
}

/// One synchronous random-k mixing step.
///
/// Every cluster reads the round-start snapshot; `reachability` maps a
/// cluster id to the ids of clusters it can currently reach. Clusters draw
/// their neighbour samples in ascending id order.
pub fn cross_aggregate_round<S: Scalar, R: Rng + ?Sized>(
    cluster_models: &[ClusterModel<S>],
    reachability: &BTreeMap<usize, BTreeSet<usize>>,
    k_nbr: usize,
    rng: &mut R,
) -> Result<MixingRound<S>, AggregationError> {
    let mut snapshot: Vec<&ClusterModel<S>> = cluster_models.iter().collect();
    snapshot.sort_by_key(|c| c.cluster_id);
    let mut index = BTreeMap::new();
    for (pos, c) in snapshot.iter().enumerate() {
        if index.insert(c.cluster_id, pos).is_some() {
            return Err(AggregationError::DuplicateCluster(c.cluster_id));
        }
    }
    let empty = BTreeSet::new();
    let mut models = Vec::with_capacity(snapshot.len());
    let mut groups = Vec::with_capacity(snapshot.len());
    let mut transmissions = 0;
    for c in &snapshot {
        let reach = reachability.get(&c.cluster_id).unwrap_or(&empty);
        if let Some(&bad) = reach.iter().find(|id| !index.contains_key(id)) {
            return Err(AggregationError::UnknownCluster(bad));
        }
        let group = sample_mixing_group(c.cluster_id, reach, k_nbr, rng)?;
        transmissions += group.len() - 1;
        // place self first so a singleton group returns the model untouched
        let mut members: Vec<&ClusterModel<S>> = vec![c];
        members.extend(group.iter().filter(|&&j| j != c.cluster_id).map(|j| snapshot[index[j]]));
        let ms: Vec<&ModelVector<S>> = members.iter().map(|m| &m.model).collect();
        let ws: Vec<S> = members.iter().map(|m| S::of_u64(m.n_total)).collect();
        let model = if ws.iter().all(|w| *w == S::zero()) {
            c.model.clone()
        } else {
            weighted_average(&ms, &ws)?
        };
        models.push(ClusterModel {
            cluster_id: c.cluster_id,
            model,
            n_total: c.n_total,
        });
        groups.push(group);
    }
    Ok(MixingRound {
        models,
        groups,
        transmissions,
    })
}

/// Sample-weighted average of all cluster models.
pub fn consolidate_final<S: Scalar>(
    cluster_models: &[ClusterModel<S>],
) -> Result<ModelVector<S>, AggregationError> {
    let ms: Vec<&ModelVector<S>> = cluster_models.iter().map(|c| &c.model).collect();
    let ws: Vec<S> = cluster_models.iter().map(|c| S::of_u64(c.n_total)).collect();
    weighted_average(&ms, &ws)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mv(w: &[f64]) -> ModelVector<f64> {
        ModelVector::new(w.to_vec(), 32).unwrap()
    }

    fn cm(id: usize, w: &[f64], n: u64) -> ClusterModel<f64> {
        ClusterModel {
            cluster_id: id,
            model: mv(w),
            n_total: n,
        }
    }

    #[test]
    fn equal_weight_mean() {
        let out = weighted_average(&[mv(&[1.0, 1.0]), mv(&[3.0, 3.0])], &[1.0, 1.0]).unwrap();
        assert_eq!(out.weights(), &[2.0, 2.0]);
    }

    #[test]
    fn single_model_is_identity() {
        let m = mv(&[0.3, -7.1, 2.5]);
        assert_eq!(weighted_average(&[m.clone()], &[42.0]).unwrap(), m);
    }

    #[test]
    fn quarter_three_quarter_split() {
        let out = weighted_average(&[mv(&[0.0, 0.0]), mv(&[4.0, 0.0])], &[100.0, 300.0]).unwrap();
        assert_eq!(out.weights(), &[3.0, 0.0]);
    }

    #[test]
    fn average_errors() {
        let empty: [ModelVector<f64>; 0] = [];
        assert_eq!(weighted_average(&empty, &[]), Err(AggregationError::Empty));
        assert_eq!(
            weighted_average(&[mv(&[1.0]), mv(&[1.0, 2.0])], &[1.0, 1.0]),
            Err(AggregationError::Dimension { expected: 1, got: 2 })
        );
        assert_eq!(
            weighted_average(&[mv(&[1.0]), mv(&[2.0])], &[0.0, 0.0]),
            Err(AggregationError::Weights)
        );
        assert_eq!(ModelVector::<f64>::new(vec![f64::NAN], 32), Err(AggregationError::NonFinite));
    }

    #[test]
    fn isolated_cluster_keeps_singleton_group() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = sample_mixing_group(3, &BTreeSet::new(), 4, &mut rng).unwrap();
        assert_eq!(g, vec![3]);
        let reach: BTreeSet<usize> = [1].into();
        assert_eq!(
            sample_mixing_group(1, &reach, 4, &mut rng),
            Err(AggregationError::SelfReachable(1))
        );
    }

    #[test]
    fn group_sizes_follow_min_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let two: BTreeSet<usize> = [1, 2].into();
        assert_eq!(sample_mixing_group(0, &two, 4, &mut rng).unwrap(), vec![0, 1, 2]);
        let eight: BTreeSet<usize> = (1..=8).collect();
        for _ in 0..50 {
            let g = sample_mixing_group(0, &eight, 4, &mut rng).unwrap();
            assert_eq!(g.len(), 5);
            assert!(g.iter().filter(|&&j| j != 0).all(|j| eight.contains(j)));
        }
    }

    #[test]
    fn full_reachability_counts() {
        let models: Vec<_> = (0..9).map(|k| cm(k, &[k as f64], 10 + k as u64)).collect();
        let reach: BTreeMap<usize, BTreeSet<usize>> = (0..9)
            .map(|k| (k, (0..9).filter(|&j| j != k).collect()))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let round = cross_aggregate_round(&models, &reach, 4, &mut rng).unwrap();
        assert_eq!(round.transmissions, 36);
        assert!(round.groups.iter().all(|g| g.len() == 5));
    }

    #[test]
    fn symmetric_pair_meets_in_the_middle() {
        let models = vec![cm(0, &[1.0, 5.0], 50), cm(1, &[3.0, -1.0], 50)];
        let reach = BTreeMap::from([(0, BTreeSet::from([1])), (1, BTreeSet::from([0]))]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = cross_aggregate_round(&models, &reach, 1, &mut rng).unwrap();
        assert_eq!(r.models[0].model.weights(), &[2.0, 2.0]);
        assert_eq!(r.models[1].model.weights(), &[2.0, 2.0]);
        assert_eq!(r.transmissions, 2);
    }

    #[test]
    fn no_reachability_is_noop() {
        let models = vec![cm(0, &[1.0], 5), cm(1, &[2.0], 7)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = cross_aggregate_round(&models, &BTreeMap::new(), 4, &mut rng).unwrap();
        assert_eq!(r.models, models);
        assert_eq!(r.transmissions, 0);
    }

    #[test]
    fn consolidation_cases() {
        let one = vec![cm(4, &[1.5, 2.5], 9)];
        assert_eq!(consolidate_final(&one).unwrap(), one[0].model);
        let eq = vec![cm(0, &[2.0], 5), cm(1, &[4.0], 5)];
        assert_eq!(consolidate_final(&eq).unwrap().weights(), &[3.0]);
        let uneq = vec![cm(0, &[0.0], 100), cm(1, &[4.0], 300)];
        assert_eq!(consolidate_final(&uneq).unwrap().weights(), &[3.0]);
    }

    #[test]
    fn binary_round_trip_and_rejects_garbage() {
        let m = mv(&[1.0, -2.5, 3.25e-9]);
        let bytes = m.to_le_bytes();
        assert_eq!(bytes.len(), 8 + 24);
        assert_eq!(ModelVector::<f64>::from_le_bytes(&bytes, 32).unwrap(), m);
        assert_eq!(
            ModelVector::<f64>::from_le_bytes(&bytes[..20], 32),
            Err(AggregationError::Encoding)
        );
    }

    proptest! {
        #[test]
        fn consensus_is_preserved_exactly(
            w in proptest::collection::vec(-1e3f64..1e3, 1..6),
            ns in proptest::collection::vec(1u64..1000, 1..7),
            seed in 0u64..1000,
        ) {
            let models: Vec<_> = ns.iter().enumerate().map(|(k, &n)| cm(k, &w, n)).collect();
            let reach: BTreeMap<usize, BTreeSet<usize>> = (0..ns.len())
                .map(|k| (k, (0..ns.len()).filter(|&j| j != k).collect()))
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = cross_aggregate_round(&models, &reach, 2, &mut rng).unwrap();
            for c in &r.models {
                prop_assert_eq!(c.model.weights(), &w[..]);
            }
            let fin = consolidate_final(&models).unwrap();
            prop_assert_eq!(fin.weights(), &w[..]);
        }

        #[test]
        fn affine_equivariance(
            rows in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 3), 1..6),
            a in -5.0f64..5.0,
            b in -5.0f64..5.0,
        ) {
            let ws: Vec<f64> = (0..rows.len()).map(|i| 1.0 + i as f64).collect();
            let base: Vec<_> = rows.iter().map(|r| mv(r)).collect();
            let moved: Vec<_> = rows.iter()
                .map(|r| mv(&r.iter().map(|x| a * x + b).collect::<Vec<_>>()))
                .collect();
            let lhs = weighted_average(&moved, &ws).unwrap();
            let rhs = weighted_average(&base, &ws).unwrap();
            for (l, r) in lhs.weights().iter().zip(rhs.weights()) {
                prop_assert!((l - (a * r + b)).abs() < 1e-9);
            }
        }

        #[test]
        fn coefficients_sum_to_one(ws in proptest::collection::vec(0.0f64..1e6, 1..10)) {
            prop_assume!(ws.iter().sum::<f64>() > 0.0);
            // averaging indicator vectors recovers the normalised coefficients
            let n = ws.len();
            let models: Vec<_> = (0..n)
                .map(|i| mv(&(0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect::<Vec<_>>()))
                .collect();
            let out = weighted_average(&models, &ws).unwrap();
            let s: f64 = out.weights().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
