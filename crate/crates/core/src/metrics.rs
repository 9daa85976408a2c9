//! Retrieval evaluation: gallery ranking, CMC curves, mean average
//! precision, and the query/gallery protocol plumbing that ties them to a
//! dataset and an embedder.
//!
//! All ranking is by ascending squared Euclidean distance in embedding
//! space, with ties broken in favour of the earlier gallery position, so
//! results are fully deterministic.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::embedder::{EmbedderError, EmbedderParams};
use crate::linalg::Vector;
use crate::Scalar;

/// Errors from evaluation and report IO.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gallery is empty")]
    EmptyGallery,
    #[error("split contains no queries")]
    NoQueries,
    #[error("every query was dropped (no valid gallery match)")]
    AllQueriesDropped,
    #[error("query {query} has no gallery match and drop_empty_queries is off")]
    NoMatch { query: usize },
    #[error("split references sample {index} but the dataset has {len} samples")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("embedding of sample {sample} is not finite")]
    NonFiniteEmbedding { sample: usize },
    #[error(transparent)]
    Embedder(#[from] EmbedderError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("report serialization: {0}")]
    Json(#[from] serde_json::Error),
}

/// The two protocol switches for retrieval evaluation, bundled so callers
/// cannot transpose them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolFlags {
    /// Exclude gallery items that share both camera and identity with the
    /// query (the standard cross-camera re-identification rule).
    pub exclude_same_camera_same_id: bool,
    /// Silently drop (and count) queries left without any correct gallery
    /// match; when off, such a query is an error.
    pub drop_empty_queries: bool,
}

impl Default for ProtocolFlags {
    fn default() -> Self {
        Self {
            exclude_same_camera_same_id: true,
            drop_empty_queries: true,
        }
    }
}

/// A retrieval protocol over one dataset: which samples are queries, which
/// form the gallery, and how edge cases are handled. Query and gallery
/// indices refer to positions in the dataset they were built from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryGallerySplit {
    pub queries: Vec<usize>,
    pub gallery: Vec<usize>,
    pub exclude_same_camera_same_id: bool,
    pub drop_empty_queries: bool,
}

/// Aggregate retrieval quality over one query/gallery split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport<T> {
    /// `cmc[r]` is the fraction of evaluated queries whose first correct
    /// match appears within the top `r + 1` ranked gallery items.
    pub cmc: Vec<T>,
    /// Mean average precision over evaluated queries.
    pub map: T,
    /// Average precision of each evaluated query, in query order.
    pub per_query_ap: Vec<T>,
    pub n_queries_evaluated: usize,
    pub n_queries_dropped: usize,
}

impl<T: Scalar> EvalReport<T> {
    /// CMC value at 1-based rank `k`; ranks past the end of the curve stay
    /// at the final value (which is 1 by construction).
    pub fn rank(&self, k: usize) -> T {
        assert!(k >= 1, "ranks are 1-based");
        assert!(!self.cmc.is_empty(), "empty CMC curve");
        self.cmc[(k - 1).min(self.cmc.len() - 1)]
    }
}

/// Ranks `gallery` by ascending squared distance to `query`, ties broken by
/// lower gallery index. Returns a permutation of `0..gallery.len()`.
pub fn rank_gallery<T: Scalar>(
    query: &Vector<T>,
    gallery: &[Vector<T>],
) -> Result<Vec<usize>, EvalError> {
    if gallery.is_empty() {
        return Err(EvalError::EmptyGallery);
    }
    let distances: Vec<T> = gallery.iter().map(|g| query.sq_dist(g)).collect();
    let mut order: Vec<usize> = (0..gallery.len()).collect();
    // Stable sort keeps equal distances in index order.
    order.sort_by(|&a, &b| {
        distances[a]
            .partial_cmp(&distances[b])
            .expect("distances are finite")
    });
    Ok(order)
}

/// First-match rank (1-based) of each query given its ranked candidate list,
/// or `None` when the list holds no correct match. Shared backbone of the
/// CMC and AP computations so they agree on which queries are dropped.
fn first_match_ranks(
    split: &QueryGallerySplit,
    ranked: &[Vec<usize>],
    labels: &[usize],
) -> Result<Vec<Option<usize>>, EvalError> {
    assert_eq!(
        ranked.len(),
        split.queries.len(),
        "one ranked list per query"
    );
    let mut ranks = Vec::with_capacity(ranked.len());
    for (qi, list) in ranked.iter().enumerate() {
        let q = split.queries[qi];
        let q_id = *labels.get(q).ok_or(EvalError::IndexOutOfRange {
            index: q,
            len: labels.len(),
        })?;
        let mut first = None;
        for (pos, &g) in list.iter().enumerate() {
            let g_id = *labels.get(g).ok_or(EvalError::IndexOutOfRange {
                index: g,
                len: labels.len(),
            })?;
            if g_id == q_id {
                first = Some(pos + 1);
                break;
            }
        }
        if first.is_none() && !split.drop_empty_queries {
            return Err(EvalError::NoMatch { query: q });
        }
        ranks.push(first);
    }
    Ok(ranks)
}

/// CMC curve over the retained queries: entry `r` is the fraction whose
/// first correct match has rank at most `r + 1`. The curve spans the longest
/// candidate list, so its final entry is exactly 1.
pub fn cmc_curve<T: Scalar>(
    split: &QueryGallerySplit,
    ranked: &[Vec<usize>],
    labels: &[usize],
) -> Result<Vec<T>, EvalError> {
    if split.queries.is_empty() {
        return Err(EvalError::NoQueries);
    }
    let first = first_match_ranks(split, ranked, labels)?;
    let retained: Vec<usize> = first.iter().flatten().copied().collect();
    if retained.is_empty() {
        return Err(EvalError::AllQueriesDropped);
    }
    let depth = ranked
        .iter()
        .zip(&first)
        .filter(|(_, f)| f.is_some())
        .map(|(list, _)| list.len())
        .max()
        .expect("at least one retained query");
    let n = T::of(retained.len() as f64);
    let mut curve = Vec::with_capacity(depth);
    for r in 1..=depth {
        let hits = retained.iter().filter(|&&rank| rank <= r).count();
        curve.push(T::of(hits as f64) / n);
    }
    Ok(curve)
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// A non-negative fraction kept reduced so that small-integer arithmetic
/// (ranks, hit counts) stays exact. Falls out of exactness only if a
/// numerator or denominator would overflow `u128`, which cannot happen for
/// any gallery small enough to rank in practice.
#[derive(Clone, Copy)]
struct Fraction {
    num: u128,
    den: u128,
}

impl Fraction {
    const ZERO: Self = Self { num: 0, den: 1 };

    fn add(self, num: u128, den: u128) -> Option<Self> {
        let g = gcd(self.den, den);
        let lhs = self.num.checked_mul(den / g)?;
        let rhs = num.checked_mul(self.den / g)?;
        let num = lhs.checked_add(rhs)?;
        let den = self.den.checked_mul(den / g)?;
        let g = gcd(num, den).max(1);
        Some(Self {
            num: num / g,
            den: den / g,
        })
    }

    /// Correctly rounded double of the exact value, provided both parts fit
    /// in 53 bits (always true after reduction at realistic sizes).
    fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// Average precision of each retained query, in query order. For a query
/// with positives at (1-based) ranked positions `k_1 < ... < k_m`, the AP is
/// `(1/m) * sum_j (j / k_j)`: precision at each recall point, averaged.
/// The fraction is accumulated exactly and rounded once at the end, so e.g.
/// matches at ranks 1 and 3 give exactly `5/6`.
pub fn average_precisions<T: Scalar>(
    split: &QueryGallerySplit,
    ranked: &[Vec<usize>],
    labels: &[usize],
) -> Result<Vec<T>, EvalError> {
    if split.queries.is_empty() {
        return Err(EvalError::NoQueries);
    }
    let first = first_match_ranks(split, ranked, labels)?;
    let mut aps = Vec::new();
    for (qi, list) in ranked.iter().enumerate() {
        if first[qi].is_none() {
            continue;
        }
        let q_id = labels[split.queries[qi]];
        let mut positives: u128 = 0;
        let mut exact = Some(Fraction::ZERO);
        let mut approx = 0.0f64;
        for (pos, &g) in list.iter().enumerate() {
            if labels[g] == q_id {
                positives += 1;
                let rank = (pos + 1) as u128;
                exact = exact.and_then(|f| f.add(positives, rank));
                approx += positives as f64 / rank as f64;
            }
        }
        let divided = exact.and_then(|f| {
            let g = gcd(f.num, positives).max(1);
            Some(Fraction {
                num: f.num / g,
                den: f.den.checked_mul(positives / g)?,
            })
        });
        let ap = match divided {
            Some(f) => f.to_f64(),
            None => approx / positives as f64,
        };
        aps.push(T::of(ap));
    }
    if aps.is_empty() {
        return Err(EvalError::AllQueriesDropped);
    }
    Ok(aps)
}

/// Mean of [`average_precisions`] over the retained queries.
pub fn mean_average_precision<T: Scalar>(
    split: &QueryGallerySplit,
    ranked: &[Vec<usize>],
    labels: &[usize],
) -> Result<T, EvalError> {
    let aps = average_precisions(split, ranked, labels)?;
    Ok(mean(&aps))
}

fn mean<T: Scalar>(values: &[T]) -> T {
    let mut sum = T::zero();
    for &v in values {
        sum = sum + v;
    }
    sum / T::of(values.len() as f64)
}

/// Runs the full retrieval protocol: embeds every sample once, ranks each
/// query's admissible gallery (after camera/identity exclusions), and
/// aggregates CMC and mAP.
pub fn evaluate<T: Scalar>(
    params: &EmbedderParams<T>,
    dataset: &Dataset<T>,
    split: &QueryGallerySplit,
) -> Result<EvalReport<T>, EvalError> {
    if split.queries.is_empty() {
        return Err(EvalError::NoQueries);
    }
    if split.gallery.is_empty() {
        return Err(EvalError::EmptyGallery);
    }
    for &i in split.queries.iter().chain(&split.gallery) {
        if i >= dataset.len() {
            return Err(EvalError::IndexOutOfRange {
                index: i,
                len: dataset.len(),
            });
        }
    }

    let mut embeddings = Vec::with_capacity(dataset.len());
    for (i, s) in dataset.samples().iter().enumerate() {
        let e = params.embed(&s.features)?;
        if !e.is_finite() {
            return Err(EvalError::NonFiniteEmbedding { sample: i });
        }
        embeddings.push(e);
    }

    let labels: Vec<usize> = dataset.samples().iter().map(|s| s.identity).collect();
    let mut ranked = Vec::with_capacity(split.queries.len());
    for &q in &split.queries {
        let qs = dataset.sample(q);
        let candidates: Vec<usize> = split
            .gallery
            .iter()
            .copied()
            .filter(|&g| {
                let gs = dataset.sample(g);
                !(split.exclude_same_camera_same_id
                    && gs.camera == qs.camera
                    && gs.identity == qs.identity)
            })
            .collect();
        let mut order: Vec<(T, usize)> = candidates
            .iter()
            .map(|&g| (embeddings[q].sq_dist(&embeddings[g]), g))
            .collect();
        // Stable sort on distance alone: ties keep gallery order.
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("distances are finite"));
        ranked.push(order.into_iter().map(|(_, g)| g).collect::<Vec<usize>>());
    }

    let cmc = cmc_curve(split, &ranked, &labels)?;
    let per_query_ap = average_precisions(split, &ranked, &labels)?;
    let map = mean(&per_query_ap);
    let n_queries_evaluated = per_query_ap.len();
    Ok(EvalReport {
        cmc,
        map,
        per_query_ap,
        n_queries_evaluated,
        n_queries_dropped: split.queries.len() - n_queries_evaluated,
    })
}

/// Writes the headline numbers as flat `key=value` lines (rank-1/5/10, mAP,
/// query counts), one metric per line.
pub fn write_summary<T: Scalar>(report: &EvalReport<T>, mut out: impl Write) -> io::Result<()> {
    writeln!(out, "rank1={}", report.rank(1))?;
    writeln!(out, "rank5={}", report.rank(5))?;
    writeln!(out, "rank10={}", report.rank(10))?;
    writeln!(out, "map={}", report.map)?;
    writeln!(out, "queries_evaluated={}", report.n_queries_evaluated)?;
    writeln!(out, "queries_dropped={}", report.n_queries_dropped)?;
    Ok(())
}

/// Saves the full report (CMC array, mAP, per-query APs, counts) as JSON.
pub fn save_report_json<T: Scalar>(report: &EvalReport<T>, path: &Path) -> Result<(), EvalError> {
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, report)?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}

/// Loads a report saved by [`save_report_json`].
pub fn load_report_json<T: Scalar>(path: &Path) -> Result<EvalReport<T>, EvalError> {
    let file = File::open(path)?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, make_query_gallery, Sample, SyntheticSpec};
    use crate::embedder::Activation;
    use crate::rng::Rng;
    use crate::Vec64;

    fn split(queries: Vec<usize>, gallery: Vec<usize>) -> QueryGallerySplit {
        QueryGallerySplit {
            queries,
            gallery,
            exclude_same_camera_same_id: true,
            drop_empty_queries: true,
        }
    }

    #[test]
    fn rank_gallery_orders_by_distance_with_index_ties() {
        let query = Vec64::of(&[0.0]);
        let gallery = vec![Vec64::of(&[3.0]), Vec64::of(&[1.0]), Vec64::of(&[2.0])];
        assert_eq!(rank_gallery(&query, &gallery).unwrap(), vec![1, 2, 0]);

        let tied = vec![Vec64::of(&[2.0]), Vec64::of(&[-1.0]), Vec64::of(&[1.0])];
        // Distances 4, 1, 1: the two tied items keep index order.
        assert_eq!(rank_gallery(&query, &tied).unwrap(), vec![1, 2, 0]);

        assert!(matches!(
            rank_gallery(&query, &[]),
            Err(EvalError::EmptyGallery)
        ));
    }

    #[test]
    fn cmc_counts_first_matches_by_rank() {
        // Two queries over 3-item candidate lists: first matches at ranks
        // 1 and 3.
        let labels = vec![0, 1, 0, 1, 1, 0, 1, 1];
        let s = split(vec![0, 1], vec![2, 3, 4, 5, 6, 7]);
        let ranked = vec![vec![2, 3, 4], vec![5, 2, 7]];
        let cmc: Vec<f64> = cmc_curve(&s, &ranked, &labels).unwrap();
        assert_eq!(cmc, vec![0.5, 0.5, 1.0]);
    }

    #[test]
    fn average_precision_matches_the_worked_example() {
        // One query, three candidates, positives ranked 1st and 3rd:
        // AP = (1/1 + 2/3) / 2 = 5/6.
        let labels = vec![7, 7, 3, 7];
        let s = split(vec![0], vec![1, 2, 3]);
        let ranked = vec![vec![1, 2, 3]];
        let aps: Vec<f64> = average_precisions(&s, &ranked, &labels).unwrap();
        assert_eq!(aps.len(), 1);
        // Exact fraction accumulation: the result is the correctly rounded
        // double of 5/6, not the slightly-low float sum 1.0 + 2.0/3.0.
        assert_eq!(aps[0], 5.0 / 6.0);
        let map: f64 = mean_average_precision(&s, &ranked, &labels).unwrap();
        assert_eq!(map, aps[0]);
    }

    /// Literal-definition AP oracle: precision at `k` for every `k` where
    /// the `k`-th item is relevant, averaged over the relevant count.
    fn ap_by_definition(ranked: &[usize], labels: &[usize], q_id: usize) -> f64 {
        let flags: Vec<bool> = ranked.iter().map(|&g| labels[g] == q_id).collect();
        let total = flags.iter().filter(|&&f| f).count();
        let mut sum = 0.0;
        for k in 1..=flags.len() {
            if flags[k - 1] {
                let hits = flags[..k].iter().filter(|&&f| f).count();
                sum += hits as f64 / k as f64;
            }
        }
        sum / total as f64
    }

    #[test]
    fn average_precision_agrees_with_brute_force_on_random_rankings() {
        let mut rng = Rng::new(42);
        for _ in 0..200 {
            let n = 2 + rng.index(12);
            let labels: Vec<usize> = (0..n + 1).map(|_| rng.index(3)).collect();
            let mut gallery: Vec<usize> = (1..=n).collect();
            rng.shuffle(&mut gallery);
            let q_id = labels[0];
            if !gallery.iter().any(|&g| labels[g] == q_id) {
                continue;
            }
            let s = split(vec![0], gallery.clone());
            let aps: Vec<f64> = average_precisions(&s, &[gallery.clone()], &labels).unwrap();
            let oracle = ap_by_definition(&gallery, &labels, q_id);
            assert!(
                (aps[0] - oracle).abs() <= 1e-15,
                "ap {} vs oracle {oracle}",
                aps[0]
            );
        }
    }

    #[test]
    fn queries_without_matches_are_dropped_or_error_by_flag() {
        let labels = vec![0, 1, 1, 0, 0];
        let mut s = split(vec![0, 3], vec![1, 2, 4]);
        let ranked = vec![vec![1, 2], vec![1, 2, 4]];
        // Query 0 (identity 0) was left with no identity-0 candidate.
        let cmc: Vec<f64> = cmc_curve(&s, &ranked, &labels).unwrap();
        assert_eq!(cmc[0], 0.0);
        assert_eq!(*cmc.last().unwrap(), 1.0);
        let aps: Vec<f64> = average_precisions(&s, &ranked, &labels).unwrap();
        assert_eq!(aps.len(), 1, "only the matched query is retained");

        s.drop_empty_queries = false;
        assert!(matches!(
            cmc_curve::<f64>(&s, &ranked, &labels),
            Err(EvalError::NoMatch { query: 0 })
        ));
    }

    #[test]
    fn all_queries_dropped_is_an_error() {
        let labels = vec![0, 1];
        let s = split(vec![0], vec![1]);
        assert!(matches!(
            cmc_curve::<f64>(&s, &[vec![1]], &labels),
            Err(EvalError::AllQueriesDropped)
        ));
        assert!(matches!(
            cmc_curve::<f64>(&split(vec![], vec![1]), &[], &labels),
            Err(EvalError::NoQueries)
        ));
    }

    fn clustered_dataset(seed: u64) -> Dataset<f64> {
        generate_synthetic(&SyntheticSpec {
            n_identities: 12,
            samples_per_identity: 6,
            dim: 5,
            cluster_std: 0.05,
            center_scale: 3.0,
            n_cameras: 2,
            seed,
        })
    }

    #[test]
    fn identity_embedder_on_tight_clusters_is_perfect() {
        let ds = clustered_dataset(9);
        let s = make_query_gallery(&ds, ProtocolFlags::default(), &mut Rng::new(1)).unwrap();
        let report = evaluate(&EmbedderParams::identity(5), &ds, &s).unwrap();
        // Clusters are 60 sigma apart on average; retrieval is trivial.
        assert_eq!(report.rank(1), 1.0);
        assert_eq!(report.map, 1.0);
        assert_eq!(report.n_queries_dropped, 0);
        assert_eq!(*report.cmc.last().unwrap(), 1.0);
        assert!(report.cmc.windows(2).all(|w| w[0] <= w[1]), "CMC monotone");
    }

    #[test]
    fn cmc_tail_reaches_one_even_for_weak_embeddings() {
        // Heavy overlap: retrieval is hard, but every retained query still
        // finds its match somewhere, so the curve must end at 1.
        let ds: Dataset<f64> = generate_synthetic(&SyntheticSpec {
            n_identities: 10,
            samples_per_identity: 8,
            dim: 3,
            cluster_std: 2.0,
            center_scale: 0.5,
            n_cameras: 2,
            seed: 77,
        });
        let s = make_query_gallery(&ds, ProtocolFlags::default(), &mut Rng::new(2)).unwrap();
        let report = evaluate(&EmbedderParams::identity(3), &ds, &s).unwrap();
        assert_eq!(*report.cmc.last().unwrap(), 1.0);
        assert!(report.rank(1) < 1.0, "overlapping clusters are not trivial");
        assert!(report.map > 0.0 && report.map < 1.0);
    }

    /// Random orthogonal matrix via Gram-Schmidt on a Gaussian matrix.
    fn random_orthogonal(dim: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
        let mut q: Vec<Vec<f64>> = Vec::new();
        while q.len() < dim {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.gaussian()).collect();
            for u in &q {
                let proj: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= proj * ui;
                }
            }
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                for vi in &mut v {
                    *vi /= norm;
                }
                q.push(v);
            }
        }
        q
    }

    #[test]
    fn metrics_are_invariant_under_rigid_motions_of_the_features() {
        let ds = clustered_dataset(31);
        let s = make_query_gallery(&ds, ProtocolFlags::default(), &mut Rng::new(4)).unwrap();
        let base = evaluate(&EmbedderParams::identity(5), &ds, &s).unwrap();

        let mut rng = Rng::new(99);
        let q = random_orthogonal(5, &mut rng);
        let shift: Vec<f64> = (0..5).map(|_| rng.gaussian()).collect();
        let moved: Vec<Sample<f64>> = ds
            .samples()
            .iter()
            .map(|smp| {
                let x = smp.features.as_slice();
                let rotated: Vec<f64> = (0..5)
                    .map(|r| q[r].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + shift[r])
                    .collect();
                Sample {
                    features: Vec64::new(rotated),
                    identity: smp.identity,
                    camera: smp.camera,
                }
            })
            .collect();
        let moved = Dataset::new(moved, 5, 2).unwrap();
        let turned = evaluate(&EmbedderParams::identity(5), &moved, &s).unwrap();

        assert_eq!(base.cmc.len(), turned.cmc.len());
        for (a, b) in base.cmc.iter().zip(&turned.cmc) {
            assert!((a - b).abs() <= 1e-9, "cmc {a} vs {b}");
        }
        assert!((base.map - turned.map).abs() <= 1e-9);
        for (a, b) in base.per_query_ap.iter().zip(&turned.per_query_ap) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn camera_exclusion_changes_the_candidate_pool() {
        // Identity 0: query at camera 0 plus one same-camera and one
        // cross-camera copy. With exclusion the same-camera copy is
        // inadmissible, so the cross-camera one must be found at rank 1
        // even though it is farther away.
        let samples = vec![
            Sample { features: Vec64::of(&[0.0]), identity: 0, camera: 0 },
            Sample { features: Vec64::of(&[0.1]), identity: 0, camera: 0 },
            Sample { features: Vec64::of(&[0.5]), identity: 0, camera: 1 },
            Sample { features: Vec64::of(&[0.2]), identity: 1, camera: 1 },
        ];
        let ds = Dataset::from_samples(samples).unwrap();
        let mut s = split(vec![0], vec![1, 2, 3]);
        let with = evaluate(&EmbedderParams::identity(1), &ds, &s).unwrap();
        // Admissible: samples 2 (d=0.25) and 3 (d=0.04); match at rank 2.
        assert_eq!(with.rank(1), 0.0);
        assert_eq!(with.rank(2), 1.0);

        s.exclude_same_camera_same_id = false;
        let without = evaluate(&EmbedderParams::identity(1), &ds, &s).unwrap();
        // Sample 1 (d=0.01) is admissible again and wins rank 1.
        assert_eq!(without.rank(1), 1.0);
    }

    #[test]
    fn queries_with_only_same_camera_matches_are_dropped_and_counted() {
        let samples = vec![
            Sample { features: Vec64::of(&[0.0]), identity: 0, camera: 0 },
            Sample { features: Vec64::of(&[0.1]), identity: 0, camera: 0 },
            Sample { features: Vec64::of(&[5.0]), identity: 1, camera: 1 },
            Sample { features: Vec64::of(&[5.1]), identity: 1, camera: 0 },
        ];
        let ds = Dataset::from_samples(samples).unwrap();
        let s = split(vec![0, 2], vec![1, 3]);
        let report = evaluate(&EmbedderParams::identity(1), &ds, &s).unwrap();
        assert_eq!(report.n_queries_dropped, 1);
        assert_eq!(report.n_queries_evaluated, 1);
        assert_eq!(report.rank(1), 1.0);
    }

    #[test]
    fn report_round_trips_through_json_and_summary_text() {
        let ds = clustered_dataset(5);
        let s = make_query_gallery(&ds, ProtocolFlags::default(), &mut Rng::new(8)).unwrap();
        let report = evaluate(&EmbedderParams::identity(5), &ds, &s).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        save_report_json(&report, &path).unwrap();
        let loaded: EvalReport<f64> = load_report_json(&path).unwrap();
        assert_eq!(report, loaded);

        let mut text = Vec::new();
        write_summary(&report, &mut text).unwrap();
        let text = String::from_utf8(text).unwrap();
        assert!(text.contains("rank1=1"), "{text}");
        assert!(text.contains("map=1"), "{text}");
        assert!(text.contains("queries_dropped=0"), "{text}");
        for line in text.lines() {
            assert_eq!(line.split('=').count(), 2, "flat key=value: {line}");
        }
    }

    #[test]
    fn evaluate_validates_split_indices_and_embeddings() {
        let ds = clustered_dataset(6);
        let s = split(vec![999], vec![0]);
        assert!(matches!(
            evaluate(&EmbedderParams::identity(5), &ds, &s),
            Err(EvalError::IndexOutOfRange { index: 999, .. })
        ));
        let s = split(vec![0], vec![1]);
        assert!(matches!(
            evaluate(&EmbedderParams::identity(3), &ds, &s),
            Err(EvalError::Embedder(_))
        ));
    }

    #[test]
    fn trained_style_mlp_embedder_runs_end_to_end() {
        // Not a quality test, just the composition: a random MLP must
        // produce a structurally valid report.
        let ds = clustered_dataset(13);
        let s = make_query_gallery(&ds, ProtocolFlags::default(), &mut Rng::new(3)).unwrap();
        let params = EmbedderParams::<f64>::new(&[5, 8, 4], Activation::Relu, &mut Rng::new(21));
        let report = evaluate(&params, &ds, &s).unwrap();
        assert_eq!(*report.cmc.last().unwrap(), 1.0);
        assert_eq!(report.per_query_ap.len(), report.n_queries_evaluated);
        assert!(report.map > 0.0 && report.map <= 1.0);
    }
}
