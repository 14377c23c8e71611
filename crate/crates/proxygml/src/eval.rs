//! Retrieval and clustering evaluation: recall@n over leave-one-out nearest
//! neighbors, k-means (++ seeding) clustering, and normalized mutual
//! information against the ground-truth labels.
//!
//! Clustering is seeded with a fixed constant so that evaluating the same
//! embedding twice — inside the training loop and later from a saved
//! checkpoint — produces identical numbers.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{l2_normalize_rows, Matrix};
use crate::rng::seed_rng;

/// Fixed seed for evaluation-time clustering; not derived from the run seed
/// so that re-evaluating a checkpoint reproduces the trainer's numbers.
pub const CLUSTERING_SEED: u64 = 0x00C1_0C1E;
/// Iteration cap for evaluation-time k-means.
pub const KMEANS_MAX_ITERS: usize = 100;

/// Leave-one-out retrieval: for each point, sort all other points by squared
/// distance (ties by index) and score a hit at `n` if any of the `n` nearest
/// shares the query's label. Returns recall per requested `n`.
pub fn recall_at_n(
    embeddings: &Matrix,
    labels: &[usize],
    ns: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    let count = embeddings.rows();
    if labels.len() != count {
        return Err(Error::Shape(format!(
            "{} labels for {count} embedding rows",
            labels.len()
        )));
    }
    if count < 2 {
        return Err(Error::Parameter(format!(
            "retrieval needs at least 2 points, got {count}"
        )));
    }
    if ns.is_empty() {
        return Err(Error::Parameter("no retrieval depths requested".into()));
    }
    for &n in ns {
        if n == 0 || n >= count {
            return Err(Error::Parameter(format!(
                "retrieval depth {n} is outside 1..{count}"
            )));
        }
    }
    let max_n = *ns.iter().max().expect("ns is non-empty");
    let mut hits: BTreeMap<usize, usize> = ns.iter().map(|&n| (n, 0)).collect();
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(count - 1);
    for i in 0..count {
        order.clear();
        let qi = embeddings.row(i);
        for j in 0..count {
            if j == i {
                continue;
            }
            let d2: f64 = qi
                .iter()
                .zip(embeddings.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            order.push((d2, j));
        }
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut first_hit = None;
        for (rank, &(_, j)) in order.iter().take(max_n).enumerate() {
            if labels[j] == labels[i] {
                first_hit = Some(rank + 1);
                break;
            }
        }
        if let Some(rank) = first_hit {
            for (&n, h) in hits.iter_mut() {
                if n >= rank {
                    *h += 1;
                }
            }
        }
    }
    Ok(hits
        .into_iter()
        .map(|(n, h)| (n, h as f64 / count as f64))
        .collect())
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest center index with ties going to the smaller index.
fn nearest_center(point: &[f64], centers: &Matrix) -> usize {
    let mut best = (f64::INFINITY, 0usize);
    for c in 0..centers.rows() {
        let d2 = squared_distance(point, centers.row(c));
        if d2 < best.0 {
            best = (d2, c);
        }
    }
    best.1
}

fn kmeans_plus_plus_init(points: &Matrix, k: usize, rng: &mut ChaCha12Rng) -> Matrix {
    let n = points.rows();
    let d = points.cols();
    let mut centers = Matrix::zeros(k, d);
    let first = rng.gen_range(0..n);
    centers.row_mut(0).copy_from_slice(points.row(first));
    let mut min_d2 = vec![f64::INFINITY; n];
    for c in 1..k {
        let prev = centers.row(c - 1).to_vec();
        let mut total = 0.0;
        for i in 0..n {
            let d2 = squared_distance(points.row(i), &prev);
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
            total += min_d2[i];
        }
        let chosen = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut cum = 0.0;
            let mut pick = n - 1;
            for (i, &w) in min_d2.iter().enumerate() {
                cum += w;
                if cum > target {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // Every remaining point coincides with a center already.
            rng.gen_range(0..n)
        };
        centers.row_mut(c).copy_from_slice(points.row(chosen));
    }
    centers
}

/// Lloyd's algorithm with k-means++ seeding. Empty clusters are repaired by
/// stealing, one at a time, the point currently farthest from its center
/// (never emptying another cluster in the process). Stops when assignments
/// no longer change or after `max_iters` passes.
pub fn kmeans(
    points: &Matrix,
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<Vec<usize>> {
    let n = points.rows();
    if n == 0 {
        return Err(Error::Parameter("no points to cluster".into()));
    }
    if k == 0 || k > n {
        return Err(Error::Parameter(format!(
            "cluster count {k} is outside 1..={n}"
        )));
    }
    if max_iters == 0 {
        return Err(Error::Parameter("need at least one clustering pass".into()));
    }
    let d = points.cols();
    let mut rng = seed_rng(seed);
    let mut centers = kmeans_plus_plus_init(points, k, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    for _ in 0..max_iters {
        let next: Vec<usize> = (0..n)
            .map(|i| nearest_center(points.row(i), &centers))
            .collect();
        if next == assignments {
            break;
        }
        assignments = next;

        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        // Repair empty clusters before the mean update.
        let mut stolen = vec![false; n];
        for empty in 0..k {
            if counts[empty] > 0 {
                continue;
            }
            let mut pick: Option<(f64, usize)> = None;
            for i in 0..n {
                if stolen[i] || counts[assignments[i]] <= 1 {
                    continue;
                }
                let d2 = squared_distance(points.row(i), centers.row(assignments[i]));
                let better = match pick {
                    None => true,
                    Some((best, _)) => d2 > best,
                };
                if better {
                    pick = Some((d2, i));
                }
            }
            if let Some((_, i)) = pick {
                counts[assignments[i]] -= 1;
                assignments[i] = empty;
                counts[empty] += 1;
                stolen[i] = true;
            }
        }

        let mut sums = Matrix::zeros(k, d);
        for (i, &a) in assignments.iter().enumerate() {
            let row = sums.row_mut(a);
            for (t, &v) in points.row(i).iter().enumerate() {
                row[t] += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            for v in sums.row_mut(c).iter_mut() {
                *v *= inv;
            }
        }
        centers = sums;
    }
    Ok(assignments)
}

/// Normalized mutual information `I(a;b) / √(H(a)·H(b))` with natural logs,
/// computed from the contingency table. When either partition has zero
/// entropy the normalizer vanishes and the score is defined as 0. The result
/// is clamped into [0, 1] against rounding.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "label vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Parameter("no labels to compare".into()));
    }
    let n = a.len();
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut joint = vec![0usize; ka * kb];
    let mut count_a = vec![0usize; ka];
    let mut count_b = vec![0usize; kb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * kb + y] += 1;
        count_a[x] += 1;
        count_b[y] += 1;
    }
    let nf = n as f64;
    let entropy = |counts: &[usize]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / nf;
                -p * p.ln()
            })
            .sum()
    };
    let h_a = entropy(&count_a);
    let h_b = entropy(&count_b);
    if h_a == 0.0 || h_b == 0.0 {
        return Ok(0.0);
    }
    let mut info = 0.0;
    for x in 0..ka {
        for y in 0..kb {
            let c = joint[x * kb + y];
            if c == 0 {
                continue;
            }
            let p_xy = c as f64 / nf;
            info += p_xy * (nf * c as f64 / (count_a[x] as f64 * count_b[y] as f64)).ln();
        }
    }
    Ok((info / (h_a * h_b).sqrt()).clamp(0.0, 1.0))
}

/// Evaluation summary for one embedding of a labeled split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Keys are `recall@{n}`.
    pub recall: BTreeMap<String, f64>,
    pub nmi: f64,
    pub n_queries: usize,
}

/// Normalizes the embeddings, runs retrieval at each requested depth, and
/// clusters into as many groups as there are distinct labels.
pub fn evaluate_embeddings(
    embeddings_raw: &Matrix,
    labels: &[usize],
    ns: &[usize],
) -> Result<EvalReport> {
    let (unit, _) = l2_normalize_rows(embeddings_raw)?;
    let recall = recall_at_n(&unit, labels, ns)?;
    let distinct = {
        let mut seen = std::collections::BTreeSet::new();
        seen.extend(labels.iter().copied());
        seen.len()
    };
    let assignments = kmeans(&unit, distinct, CLUSTERING_SEED, KMEANS_MAX_ITERS)?;
    let score = nmi(labels, &assignments)?;
    Ok(EvalReport {
        recall: recall
            .into_iter()
            .map(|(n, v)| (format!("recall@{n}"), v))
            .collect(),
        nmi: score,
        n_queries: embeddings_raw.rows(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_clusters, Split};
    use rand::Rng;

    fn random_points(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = seed_rng(seed);
        Matrix::from_vec(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn recall_hand_case() {
        // Two tight pairs far apart: every point's nearest neighbor shares
        // its label, so recall@1 = 1.
        let pts = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![0.1, 0.0],
            vec![10.0, 0.0],
            vec![10.1, 0.0],
        ])
        .unwrap();
        let r = recall_at_n(&pts, &[0, 0, 1, 1], &[1, 2]).unwrap();
        assert_eq!(r[&1], 1.0);
        assert_eq!(r[&2], 1.0);
        // Cross the labels: nearest neighbor now always mismatches at n=1
        // but a same-label point appears by n=2 only for none (the pair
        // partner is the other label; the same-label points are far).
        let r = recall_at_n(&pts, &[0, 1, 0, 1], &[1, 3]).unwrap();
        assert_eq!(r[&1], 0.0);
        assert_eq!(r[&3], 1.0);
    }

    #[test]
    fn recall_matches_brute_force_oracle() {
        let pts = random_points(50, 8, 3);
        let mut rng = seed_rng(4);
        let labels: Vec<usize> = (0..50).map(|_| rng.gen_range(0..5)).collect();
        let ns = [1usize, 2, 4, 8];
        let got = recall_at_n(&pts, &labels, &ns).unwrap();

        // Oracle with separate mechanics: exhaustive candidate sort using
        // partial_cmp on plain euclidean distance.
        for &n in &ns {
            let mut hits = 0usize;
            for i in 0..50 {
                let mut cand: Vec<(f64, usize)> = (0..50)
                    .filter(|&j| j != i)
                    .map(|j| {
                        let dist: f64 = pts
                            .row(i)
                            .iter()
                            .zip(pts.row(j))
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt();
                        (dist, j)
                    })
                    .collect();
                cand.sort_by(|a, b| a.partial_cmp(b).unwrap());
                if cand[..n].iter().any(|&(_, j)| labels[j] == labels[i]) {
                    hits += 1;
                }
            }
            let expect = hits as f64 / 50.0;
            assert!((got[&n] - expect).abs() < 1e-15, "n={n}");
        }
    }

    #[test]
    fn recall_is_monotone_in_depth() {
        let pts = random_points(40, 6, 5);
        let mut rng = seed_rng(6);
        let labels: Vec<usize> = (0..40).map(|_| rng.gen_range(0..4)).collect();
        let r = recall_at_n(&pts, &labels, &[1, 2, 4, 8, 16, 32]).unwrap();
        let vals: Vec<f64> = r.values().copied().collect();
        for w in vals.windows(2) {
            assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn recall_breaks_distance_ties_by_index() {
        // Points 1 and 2 are both exactly at distance 1 from point 0; the
        // smaller index (1) must count as the single nearest neighbor.
        let pts = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
        ])
        .unwrap();
        // Query 0 hits only because the tie resolves to point 1; queries 1
        // and 2 have unambiguous nearest neighbors (hit and miss).
        let r = recall_at_n(&pts, &[0, 0, 1], &[1]).unwrap();
        assert!((r[&1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn recall_validates_depths_and_sizes() {
        let pts = random_points(5, 3, 7);
        let labels = vec![0, 1, 0, 1, 0];
        assert!(recall_at_n(&pts, &labels, &[0]).is_err());
        assert!(recall_at_n(&pts, &labels, &[5]).is_err());
        assert!(recall_at_n(&pts, &labels, &[]).is_err());
        let one = random_points(1, 3, 7);
        assert!(recall_at_n(&one, &[0], &[1]).is_err());
        assert!(recall_at_n(&pts, &[0, 1], &[1]).is_err());
    }

    #[test]
    fn kmeans_recovers_separated_blobs() {
        let ds = synthetic_clusters(3, 20, 8, 0.02, 29).unwrap();
        let assignments = kmeans(&ds.features, 3, CLUSTERING_SEED, KMEANS_MAX_ITERS).unwrap();
        // Perfect recovery up to permutation ⇒ NMI 1.
        let score = nmi(&ds.labels, &assignments).unwrap();
        assert!((score - 1.0).abs() < 1e-12, "nmi {score}");
    }

    #[test]
    fn kmeans_single_cluster_and_full_split() {
        let pts = random_points(6, 4, 31);
        assert_eq!(kmeans(&pts, 1, 0, 10).unwrap(), vec![0; 6]);
        let all = kmeans(&pts, 6, 0, 50).unwrap();
        let mut sorted = all.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 6, "every point its own cluster");
    }

    #[test]
    fn kmeans_is_deterministic_per_seed() {
        let pts = random_points(30, 5, 33);
        let a = kmeans(&pts, 4, 9, KMEANS_MAX_ITERS).unwrap();
        let b = kmeans(&pts, 4, 9, KMEANS_MAX_ITERS).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn kmeans_survives_duplicate_points() {
        // All points identical with k > 1 exercises the empty-cluster repair;
        // the call must terminate and return in-range assignments.
        let pts = Matrix::from_vec(5, 3, vec![0.5; 15]).unwrap();
        let assignments = kmeans(&pts, 3, 1, 20).unwrap();
        assert_eq!(assignments.len(), 5);
        assert!(assignments.iter().all(|&a| a < 3));
    }

    #[test]
    fn kmeans_validates_inputs() {
        let pts = random_points(4, 2, 35);
        assert!(kmeans(&pts, 0, 0, 10).is_err());
        assert!(kmeans(&pts, 5, 0, 10).is_err());
        assert!(kmeans(&pts, 2, 0, 0).is_err());
    }

    #[test]
    fn nmi_perfect_match_is_one() {
        let a = vec![0, 0, 1, 1, 2, 2];
        assert_eq!(nmi(&a, &a).unwrap(), 1.0);
        // Permuted cluster ids are still a perfect match.
        let b = vec![2, 2, 0, 0, 1, 1];
        assert_eq!(nmi(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn nmi_single_cluster_is_zero() {
        let a = vec![0, 0, 0, 0];
        let b = vec![0, 1, 2, 3];
        assert_eq!(nmi(&a, &b).unwrap(), 0.0);
        assert_eq!(nmi(&b, &a).unwrap(), 0.0);
    }

    #[test]
    fn nmi_matches_contingency_oracle() {
        let a = vec![0, 0, 0, 1, 1, 1, 2, 2];
        let b = vec![0, 0, 1, 1, 1, 0, 2, 1];
        let got = nmi(&a, &b).unwrap();

        // Independent recomputation from probability tables.
        let n = a.len() as f64;
        let mut p_ab = std::collections::BTreeMap::new();
        let mut p_a = std::collections::BTreeMap::new();
        let mut p_b = std::collections::BTreeMap::new();
        for (&x, &y) in a.iter().zip(&b) {
            *p_ab.entry((x, y)).or_insert(0.0) += 1.0 / n;
            *p_a.entry(x).or_insert(0.0) += 1.0 / n;
            *p_b.entry(y).or_insert(0.0) += 1.0 / n;
        }
        let mut info = 0.0;
        for (&(x, y), &pxy) in &p_ab {
            info += pxy * (pxy / (p_a[&x] * p_b[&y])).ln();
        }
        let ha: f64 = p_a.values().map(|&p| -p * f64::ln(p)).sum();
        let hb: f64 = p_b.values().map(|&p| -p * f64::ln(p)).sum();
        let expect = info / (ha * hb).sqrt();
        assert!((got - expect).abs() < 1e-10);
        assert!(got > 0.0 && got < 1.0);
    }

    #[test]
    fn nmi_is_symmetric() {
        let a = vec![0, 1, 1, 2, 2, 2, 0, 1];
        let b = vec![1, 1, 0, 2, 0, 2, 0, 1];
        let ab = nmi(&a, &b).unwrap();
        let ba = nmi(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn nmi_validates_lengths() {
        assert!(nmi(&[0, 1], &[0]).is_err());
        assert!(nmi(&[], &[]).is_err());
    }

    #[test]
    fn evaluate_embeddings_on_blobs_is_strong_and_deterministic() {
        let ds = synthetic_clusters(4, 12, 10, 0.05, 43).unwrap();
        let test = ds.indices_of(Split::Test);
        let (feats, labels) = ds.gather(&test).unwrap();
        let a = evaluate_embeddings(&feats, &labels, &[1, 2]).unwrap();
        assert!(a.recall["recall@1"] > 0.95);
        assert!(a.nmi > 0.95);
        assert_eq!(a.n_queries, test.len());
        let b = evaluate_embeddings(&feats, &labels, &[1, 2]).unwrap();
        assert_eq!(a.recall, b.recall);
        assert_eq!(a.nmi.to_bits(), b.nmi.to_bits());
    }

    #[test]
    fn recall_is_invariant_under_coordinate_permutation() {
        let pts = random_points(20, 6, 47);
        let mut rng = seed_rng(48);
        let labels: Vec<usize> = (0..20).map(|_| rng.gen_range(0..3)).collect();
        let base = recall_at_n(&pts, &labels, &[1, 2, 4]).unwrap();
        // Permute + sign-flip coordinates (an isometry).
        let perm = [3usize, 0, 5, 1, 4, 2];
        let sign = [1.0, -1.0, 1.0, -1.0, -1.0, 1.0];
        let mut moved = Matrix::zeros(20, 6);
        for i in 0..20 {
            for t in 0..6 {
                moved.set(i, t, sign[t] * pts.get(i, perm[t]));
            }
        }
        let transformed = recall_at_n(&moved, &labels, &[1, 2, 4]).unwrap();
        assert_eq!(base, transformed);
    }
}
