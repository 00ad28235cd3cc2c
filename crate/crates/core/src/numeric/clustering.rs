//! Agglomerative clustering with cannot-link constraints.
//!
//! Average linkage only. Merging is greedy: the allowed pair with the lowest
//! linkage distance merges first, ties resolved by the lowest member indices,
//! and merging stops once no allowed pair is below the threshold.

use std::collections::BTreeSet;

use super::Matrix;
use crate::{Error, Real, Result};

/// Linkage criterion for inter-cluster distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Linkage {
    #[default]
    Average,
}

/// One merge event, recorded in execution order.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeStep<T> {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub distance: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult<T> {
    /// Partition of `0..n`, clusters ordered by smallest member, members sorted.
    pub clusters: Vec<Vec<usize>>,
    pub merges: Vec<MergeStep<T>>,
}

/// Average-linkage agglomerative clustering over a symmetric distance matrix.
///
/// `cannot_link` pairs are never placed in the same cluster, directly or
/// through intermediate merges.
pub fn constrained_agglomerative<T: Real>(
    dist: &Matrix<T>,
    threshold: T,
    cannot_link: &BTreeSet<(usize, usize)>,
    _linkage: Linkage,
) -> Result<ClusterResult<T>> {
    let n = dist.rows();
    if dist.cols() != n {
        return Err(Error::Dimension(format!(
            "distance matrix is {}x{}, expected square",
            dist.rows(),
            dist.cols()
        )));
    }
    let eps = T::from_f64(1e-9).unwrap();
    for i in 0..n {
        if dist[(i, i)].abs() > eps {
            return Err(Error::Numeric(format!("distance diagonal ({i},{i}) is not zero")));
        }
        for j in (i + 1)..n {
            if (dist[(i, j)] - dist[(j, i)]).abs() > eps {
                return Err(Error::Numeric(format!("distance matrix not symmetric at ({i},{j})")));
            }
        }
    }

    // Active cluster state; average linkage is maintained with the
    // Lance-Williams update so distances never need recomputing from scratch.
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut active: Vec<bool> = vec![true; n];
    let mut link = Matrix::from_fn(n, n, |i, j| dist[(i, j)]);
    let mut forbidden = Matrix::filled(n, n, false);
    for &(a, b) in cannot_link {
        if a < n && b < n && a != b {
            forbidden[(a, b)] = true;
            forbidden[(b, a)] = true;
        }
    }

    let mut merges = Vec::new();
    loop {
        // Lowest linkage distance first; ties by lowest member indices.
        let mut best: Option<(T, usize, usize)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in (i + 1)..n {
                if !active[j] || forbidden[(i, j)] {
                    continue;
                }
                let d = link[(i, j)];
                if d >= threshold {
                    continue;
                }
                // `members[i][0]` is the smallest index of cluster i by construction.
                let better = match best {
                    None => true,
                    Some((bd, bi, bj)) => {
                        d < bd
                            || (d == bd
                                && (members[i][0], members[j][0])
                                    < (members[bi][0], members[bj][0]))
                    }
                };
                if better {
                    best = Some((d, i, j));
                }
            }
        }
        let Some((d, i, j)) = best else { break };

        merges.push(MergeStep {
            a: members[i].clone(),
            b: members[j].clone(),
            distance: d,
        });

        let size_i = T::from_usize(members[i].len()).unwrap();
        let size_j = T::from_usize(members[j].len()).unwrap();
        let total = size_i + size_j;
        for k in 0..n {
            if !active[k] || k == i || k == j {
                continue;
            }
            let merged = (size_i * link[(i, k)] + size_j * link[(j, k)]) / total;
            link[(i, k)] = merged;
            link[(k, i)] = merged;
            let f = forbidden[(i, k)] || forbidden[(j, k)];
            forbidden[(i, k)] = f;
            forbidden[(k, i)] = f;
        }
        let mut absorbed = std::mem::take(&mut members[j]);
        members[i].append(&mut absorbed);
        members[i].sort_unstable();
        active[j] = false;
    }

    let mut clusters: Vec<Vec<usize>> = (0..n)
        .filter(|&i| active[i])
        .map(|i| members[i].clone())
        .collect();
    clusters.sort_by_key(|c| c[0]);
    Ok(ClusterResult { clusters, merges })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist_from(entries: &[f64], n: usize) -> Matrix<f64> {
        Matrix::from_fn(n, n, |i, j| entries[i * n + j])
    }

    fn cluster(
        entries: &[f64],
        n: usize,
        threshold: f64,
        cannot: &[(usize, usize)],
    ) -> Vec<Vec<usize>> {
        let cl: BTreeSet<(usize, usize)> = cannot.iter().copied().collect();
        constrained_agglomerative(&dist_from(entries, n), threshold, &cl, Linkage::Average)
            .unwrap()
            .clusters
    }

    #[test]
    fn all_far_apart_stays_singletons() {
        let e = [0.0, 0.5, 0.5, 0.0];
        assert_eq!(cluster(&e, 2, 0.2, &[]), vec![vec![0], vec![1]]);
    }

    #[test]
    fn close_pair_merges() {
        let e = [0.0, 0.1, 0.1, 0.0];
        assert_eq!(cluster(&e, 2, 0.2, &[]), vec![vec![0, 1]]);
    }

    #[test]
    fn cannot_link_blocks_transitive_merge() {
        // all three pairwise 0.05 apart; (0,2) forbidden; (0,1) merges first
        // by the index tie-break, then 2 can no longer join.
        let e = [
            0.0, 0.05, 0.05, //
            0.05, 0.0, 0.05, //
            0.05, 0.05, 0.0,
        ];
        assert_eq!(cluster(&e, 3, 0.2, &[(0, 2)]), vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn brute_force_reachability_check() {
        // Every cluster of the greedy result must respect all constraints and
        // be reachable: here the only constraint-respecting 2-partitions are
        // {{0,1},{2}} and {{1,2},{0}}; the tie-break picks the first.
        let got = cluster(
            &[
                0.0, 0.05, 0.05, //
                0.05, 0.0, 0.05, //
                0.05, 0.05, 0.0,
            ],
            3,
            0.2,
            &[(0, 2)],
        );
        let valid = [vec![vec![0, 1], vec![2]], vec![vec![0], vec![1, 2]]];
        assert!(valid.contains(&got));
        assert_eq!(got, valid[0]);
    }

    #[test]
    fn average_linkage_uses_mean_distance() {
        // 0 and 1 are identical; 2 sits 0.3 from both. After {0,1} forms,
        // the average distance to 2 is 0.3 which exceeds 0.25.
        let e = [
            0.0, 0.0, 0.3, //
            0.0, 0.0, 0.3, //
            0.3, 0.3, 0.0,
        ];
        assert_eq!(cluster(&e, 3, 0.25, &[]), vec![vec![0, 1], vec![2]]);
        // with a looser threshold the chain completes
        assert_eq!(cluster(&e, 3, 0.31, &[]), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn merge_trace_is_recorded() {
        let e = [0.0, 0.1, 0.1, 0.0];
        let cl = BTreeSet::new();
        let res =
            constrained_agglomerative(&dist_from(&e, 2), 0.2, &cl, Linkage::Average).unwrap();
        assert_eq!(res.merges.len(), 1);
        assert_eq!(res.merges[0].a, vec![0]);
        assert_eq!(res.merges[0].b, vec![1]);
        assert!((res.merges[0].distance - 0.1).abs() < 1e-12);
    }

    #[test]
    fn output_is_a_partition_and_respects_constraints() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let n = rng.gen_range(2..10);
            let mut e = vec![0.0; n * n];
            for i in 0..n {
                for j in (i + 1)..n {
                    let d: f64 = rng.gen_range(0.0..1.0);
                    e[i * n + j] = d;
                    e[j * n + i] = d;
                }
            }
            let mut cannot = BTreeSet::new();
            for _ in 0..n / 2 {
                let a = rng.gen_range(0..n);
                let b = rng.gen_range(0..n);
                if a != b {
                    cannot.insert((a.min(b), a.max(b)));
                }
            }
            let res = constrained_agglomerative(
                &dist_from(&e, n),
                rng.gen_range(0.1..0.9),
                &cannot,
                Linkage::Average,
            )
            .unwrap();
            let mut seen = vec![false; n];
            for c in &res.clusters {
                for &m in c {
                    assert!(!seen[m], "item {m} appears twice");
                    seen[m] = true;
                }
                for &(a, b) in &cannot {
                    assert!(
                        !(c.contains(&a) && c.contains(&b)),
                        "cannot-link ({a},{b}) violated"
                    );
                }
            }
            assert!(seen.iter().all(|&s| s), "partition must cover all items");
        }
    }

    #[test]
    fn raising_threshold_never_increases_cluster_count() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..30 {
            let n = rng.gen_range(2..9);
            let mut e = vec![0.0; n * n];
            for i in 0..n {
                for j in (i + 1)..n {
                    let d: f64 = rng.gen_range(0.0..1.0);
                    e[i * n + j] = d;
                    e[j * n + i] = d;
                }
            }
            let cl = BTreeSet::new();
            let lo = cluster_count(&e, n, 0.3, &cl);
            let hi = cluster_count(&e, n, 0.6, &cl);
            assert!(hi <= lo, "raising the threshold split clusters: {lo} -> {hi}");
        }
    }

    fn cluster_count(e: &[f64], n: usize, t: f64, cl: &BTreeSet<(usize, usize)>) -> usize {
        constrained_agglomerative(&dist_from(e, n), t, cl, Linkage::Average)
            .unwrap()
            .clusters
            .len()
    }

    #[test]
    fn rejects_asymmetric_input() {
        let e = [0.0, 0.2, 0.3, 0.0];
        let cl = BTreeSet::new();
        assert!(constrained_agglomerative(&dist_from(&e, 2), 0.5, &cl, Linkage::Average).is_err());
    }
}
