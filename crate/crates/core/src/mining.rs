//! PK batch construction and triplet mining.
//!
//! Training batches follow the PK scheme: `P` identities with `K` samples
//! each. Every epoch visits each identity once as the "turn" identity of a
//! batch, joined by `P - 1` companions drawn without replacement; within a
//! group, samples are drawn without replacement when the identity has at
//! least `K` samples and with replacement otherwise.
//!
//! Triplets are mined inside a batch from its squared-distance matrix:
//!
//! - **batch-hard**: each anchor takes its farthest same-identity sample as
//!   positive and its nearest different-identity sample as negative, ties
//!   broken towards the lowest batch position;
//! - **stochastic-soft**: positives are sampled with probability
//!   proportional to `exp(+d/tau)` and negatives proportional to
//!   `exp(-d/tau)`, so harder examples are preferred but not deterministic.
//!   As `tau -> 0` the draws converge to the batch-hard choice.

use std::collections::BTreeMap;

use crate::linalg::{Matrix, Vector};
use crate::losses::TripletIndices;
use crate::rng::Rng;
use crate::Scalar;

/// One identity's slot in a planned batch: the dataset indices of its `K`
/// chosen samples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlannedGroup {
    pub identity: usize,
    pub samples: Vec<usize>,
}

/// A planned PK batch: which dataset samples participate, grouped by
/// identity. The first group belongs to the turn identity that anchors the
/// batch in the epoch schedule.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub groups: Vec<PlannedGroup>,
}

impl BatchPlan {
    /// Dataset indices of all samples, group by group.
    pub fn sample_indices(&self) -> Vec<usize> {
        self.groups
            .iter()
            .flat_map(|g| g.samples.iter().copied())
            .collect()
    }

    /// Identity label for each batch position, aligned with
    /// [`Self::sample_indices`].
    pub fn labels(&self) -> Vec<usize> {
        self.groups
            .iter()
            .flat_map(|g| std::iter::repeat_n(g.identity, g.samples.len()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.groups.iter().map(|g| g.samples.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

/// Plans one epoch of PK batches: every identity in `by_identity` takes one
/// turn, in shuffled order, joined by `p - 1` distinct companion identities
/// (fewer when the dataset has fewer than `p` identities). Each group
/// contributes `k` samples, drawn without replacement when possible.
///
/// Panics if `p < 2`, `k < 2` (mining needs another identity in the batch
/// and another sample in the group), any identity has no samples, or fewer
/// than two identities exist.
pub fn epoch_batches(
    by_identity: &BTreeMap<usize, Vec<usize>>,
    p: usize,
    k: usize,
    rng: &mut Rng,
) -> Vec<BatchPlan> {
    assert!(p >= 2, "PK batches need p >= 2, got {p}");
    assert!(k >= 2, "PK batches need k >= 2, got {k}");
    assert!(
        by_identity.len() >= 2,
        "PK batches need at least two identities, got {}",
        by_identity.len()
    );
    for (id, samples) in by_identity {
        assert!(!samples.is_empty(), "identity {id} has no samples");
    }

    let ids: Vec<usize> = by_identity.keys().copied().collect();
    let mut turn_order: Vec<usize> = (0..ids.len()).collect();
    rng.shuffle(&mut turn_order);

    let companions = p.min(ids.len()) - 1;
    let mut batches = Vec::with_capacity(ids.len());
    for &turn in &turn_order {
        let mut members = Vec::with_capacity(companions + 1);
        members.push(turn);
        // Companion identities: distinct draws from the other ids, mapped
        // around the turn identity's position.
        for other in rng.sample_distinct(ids.len() - 1, companions) {
            members.push(if other >= turn { other + 1 } else { other });
        }
        let groups = members
            .into_iter()
            .map(|m| {
                let identity = ids[m];
                let pool = &by_identity[&identity];
                let samples = if pool.len() >= k {
                    rng.sample_distinct(pool.len(), k)
                        .into_iter()
                        .map(|i| pool[i])
                        .collect()
                } else {
                    (0..k).map(|_| pool[rng.index(pool.len())]).collect()
                };
                PlannedGroup { identity, samples }
            })
            .collect();
        batches.push(BatchPlan { groups });
    }
    batches
}

/// A realised batch: embeddings and labels for each position, plus the
/// symmetric squared-distance matrix with a zero diagonal.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    sample_indices: Vec<usize>,
    labels: Vec<usize>,
    embeddings: Vec<Vector<T>>,
    distances: Matrix<T>,
}

impl<T: Scalar> Batch<T> {
    /// Builds the batch and its distance matrix. Each pair is computed once
    /// and mirrored, so symmetry is exact by construction.
    ///
    /// Panics if the three lists disagree in length, the batch is empty, or
    /// embeddings differ in dimension.
    pub fn new(
        sample_indices: Vec<usize>,
        labels: Vec<usize>,
        embeddings: Vec<Vector<T>>,
    ) -> Self {
        assert!(!embeddings.is_empty(), "empty batch");
        assert_eq!(
            sample_indices.len(),
            embeddings.len(),
            "batch has {} sample indices but {} embeddings",
            sample_indices.len(),
            embeddings.len()
        );
        assert_eq!(
            labels.len(),
            embeddings.len(),
            "batch has {} labels but {} embeddings",
            labels.len(),
            embeddings.len()
        );
        let n = embeddings.len();
        let mut distances = Matrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let d = embeddings[i].sq_dist(&embeddings[j]);
                distances[(i, j)] = d;
                distances[(j, i)] = d;
            }
        }
        Self {
            sample_indices,
            labels,
            embeddings,
            distances,
        }
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample_indices(&self) -> &[usize] {
        &self.sample_indices
    }

    pub fn embeddings(&self) -> &[Vector<T>] {
        &self.embeddings
    }

    /// Squared distances between batch positions.
    pub fn distances(&self) -> &Matrix<T> {
        &self.distances
    }
}

/// How triplets are selected within a batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MiningStrategy<T> {
    BatchHard,
    StochasticSoft { temperature: T },
}

impl<T: Scalar> MiningStrategy<T> {
    /// Stable identifier used in configs and logs.
    pub fn name(&self) -> &'static str {
        match self {
            MiningStrategy::BatchHard => "batch-hard",
            MiningStrategy::StochasticSoft { .. } => "stochastic-soft",
        }
    }
}

/// Mines one triplet per eligible anchor with the given strategy. Positions
/// lacking a same-identity partner or a different-identity negative are
/// skipped.
pub fn mine_triplets<T: Scalar>(
    batch: &Batch<T>,
    strategy: &MiningStrategy<T>,
    rng: &mut Rng,
) -> Vec<TripletIndices> {
    match strategy {
        MiningStrategy::BatchHard => batch_hard_triplets(batch),
        MiningStrategy::StochasticSoft { temperature } => {
            stochastic_soft_triplets(batch, *temperature, rng)
        }
    }
}

/// Batch-hard mining: per anchor, the farthest positive and nearest
/// negative, ties resolved to the lowest batch position.
pub fn batch_hard_triplets<T: Scalar>(batch: &Batch<T>) -> Vec<TripletIndices> {
    let n = batch.len();
    let mut triplets = Vec::with_capacity(n);
    for a in 0..n {
        let mut hardest_pos: Option<(usize, T)> = None;
        let mut hardest_neg: Option<(usize, T)> = None;
        for j in 0..n {
            if j == a {
                continue;
            }
            let d = batch.distances[(a, j)];
            if batch.labels[j] == batch.labels[a] {
                if hardest_pos.is_none_or(|(_, best)| d > best) {
                    hardest_pos = Some((j, d));
                }
            } else if hardest_neg.is_none_or(|(_, best)| d < best) {
                hardest_neg = Some((j, d));
            }
        }
        if let (Some((p, _)), Some((neg, _))) = (hardest_pos, hardest_neg) {
            triplets.push(TripletIndices {
                anchor: a,
                positive: p,
                negative: neg,
            });
        }
    }
    triplets
}

/// Numerically stable softmax: shifts scores by their maximum before
/// exponentiating, so the largest weight is exactly one and the weights can
/// never be all zero.
pub fn softmax_weights<T: Scalar>(scores: &[T]) -> Vec<f64> {
    assert!(!scores.is_empty(), "softmax over no scores");
    let max = scores
        .iter()
        .copied()
        .fold(T::neg_infinity(), |acc, s| acc.max(s));
    scores
        .iter()
        .map(|&s| (s - max).exp().as_f64())
        .collect()
}

/// Stochastic-soft mining: per anchor, sample a positive with probability
/// proportional to `exp(+d/tau)` over same-identity partners and a negative
/// proportional to `exp(-d/tau)` over other identities. For each anchor the
/// positive is drawn first, then the negative, in batch-position order, so a
/// seed pins the whole selection.
///
/// Panics if `tau` is not finite and positive.
pub fn stochastic_soft_triplets<T: Scalar>(
    batch: &Batch<T>,
    temperature: T,
    rng: &mut Rng,
) -> Vec<TripletIndices> {
    assert!(
        temperature.is_finite() && temperature > T::zero(),
        "temperature must be positive and finite"
    );
    let n = batch.len();
    let mut triplets = Vec::with_capacity(n);
    for a in 0..n {
        let mut pos_candidates = Vec::new();
        let mut pos_scores = Vec::new();
        let mut neg_candidates = Vec::new();
        let mut neg_scores = Vec::new();
        for j in 0..n {
            if j == a {
                continue;
            }
            let d = batch.distances[(a, j)];
            if batch.labels[j] == batch.labels[a] {
                pos_candidates.push(j);
                pos_scores.push(d / temperature);
            } else {
                neg_candidates.push(j);
                neg_scores.push(-d / temperature);
            }
        }
        if pos_candidates.is_empty() || neg_candidates.is_empty() {
            continue;
        }
        let positive = pos_candidates[rng.choose_weighted(&softmax_weights(&pos_scores))];
        let negative = neg_candidates[rng.choose_weighted(&softmax_weights(&neg_scores))];
        triplets.push(TripletIndices {
            anchor: a,
            positive,
            negative,
        });
    }
    triplets
}
