//! Minimum-cost bipartite assignment on rectangular cost matrices.
//!
//! Forbidden pairs are encoded as `+inf`. The solver returns a matching of
//! maximum cardinality among allowed pairs (up to `min(rows, cols)`) with
//! minimum total cost; rows whose allowed pairs are exhausted stay unmatched.

use super::Matrix;
use crate::{Error, Real, Result};

/// Rectangular cost matrix; entries are finite non-negative reals or `+inf`
/// for forbidden pairs.
#[derive(Debug, Clone)]
pub struct CostMatrix<T> {
    m: Matrix<T>,
}

impl<T: Real> CostMatrix<T> {
    pub fn new(m: Matrix<T>) -> Result<Self> {
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                let v = m[(i, j)];
                let ok = (v.is_finite() && v >= T::zero()) || v == T::infinity();
                if !ok {
                    return Err(Error::Numeric(format!(
                        "cost ({i},{j}) = {v} is not a non-negative real or +inf"
                    )));
                }
            }
        }
        Ok(CostMatrix { m })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        Self::new(Matrix::from_fn(rows, cols, f))
    }

    pub fn rows(&self) -> usize {
        self.m.rows()
    }

    pub fn cols(&self) -> usize {
        self.m.cols()
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.m[(i, j)]
    }
}

/// Solve the assignment problem with the shortest-augmenting-path method
/// (Jonker-Volgenant potentials). Deterministic: columns are scanned in
/// ascending order and strict comparisons keep the lowest row/col on ties.
#[allow(clippy::needless_range_loop)]
pub fn min_cost_assignment<T: Real>(cost: &CostMatrix<T>) -> Vec<(usize, usize)> {
    let (r, c) = (cost.rows(), cost.cols());
    if r == 0 || c == 0 {
        return Vec::new();
    }
    let transposed = r > c;
    let (n, m) = if transposed { (c, r) } else { (r, c) };
    let at = |i: usize, j: usize| -> T {
        if transposed {
            cost.get(j, i)
        } else {
            cost.get(i, j)
        }
    };

    // Replace +inf by a cost larger than any finite matching so the solver
    // prefers every finite pair before touching a forbidden one.
    let mut finite_sum = T::zero();
    for i in 0..n {
        for j in 0..m {
            let v = at(i, j);
            if v.is_finite() {
                finite_sum = finite_sum + v;
            }
        }
    }
    let big = finite_sum + T::one();
    let w = |i: usize, j: usize| -> T {
        let v = at(i, j);
        if v.is_finite() {
            v
        } else {
            big
        }
    };

    // Column index `m` acts as the virtual root column of the alternating tree.
    const FREE: usize = usize::MAX;
    let mut u = vec![T::zero(); n];
    let mut v = vec![T::zero(); m + 1];
    let mut assigned_row = vec![FREE; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 0..n {
        assigned_row[m] = i;
        let mut j0 = m;
        let mut minv = vec![T::infinity(); m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = assigned_row[j0];
            let mut delta = T::infinity();
            let mut j1 = m;
            for j in 0..m {
                if !used[j] {
                    let cur = w(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[assigned_row[j]] = u[assigned_row[j]] + delta;
                    v[j] = v[j] - delta;
                } else {
                    minv[j] = minv[j] - delta;
                }
            }
            j0 = j1;
            if assigned_row[j0] == FREE {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            assigned_row[j0] = assigned_row[j1];
            j0 = j1;
            if j0 == m {
                break;
            }
        }
    }

    let mut pairs = Vec::new();
    for j in 0..m {
        let i = assigned_row[j];
        if i != FREE && at(i, j).is_finite() {
            if transposed {
                pairs.push((j, i));
            } else {
                pairs.push((i, j));
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve(rows: usize, cols: usize, entries: &[f64]) -> Vec<(usize, usize)> {
        let m = Matrix::from_fn(rows, cols, |i, j| entries[i * cols + j]);
        min_cost_assignment(&CostMatrix::new(m).unwrap())
    }

    fn total(_rows: usize, cols: usize, entries: &[f64], pairs: &[(usize, usize)]) -> f64 {
        pairs.iter().map(|&(i, j)| entries[i * cols + j]).sum()
    }

    #[test]
    fn cheap_diagonal() {
        let e = [0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        assert_eq!(solve(3, 3, &e), vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn prefers_cross_assignment() {
        // permutations: diag = 1 + 4 = 5, cross = 2 + 2 = 4
        let e = [1.0, 2.0, 2.0, 4.0];
        let pairs = solve(2, 2, &e);
        assert_eq!(pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(total(2, 2, &e, &pairs), 4.0);
    }

    #[test]
    fn single_cell() {
        assert_eq!(solve(1, 1, &[7.0]), vec![(0, 0)]);
    }

    #[test]
    fn all_inf_row_left_unmatched() {
        let inf = f64::INFINITY;
        let e = [inf, inf, 1.0, 2.0];
        assert_eq!(solve(2, 2, &e), vec![(1, 0)]);
    }

    #[test]
    fn forbidden_pairs_skipped() {
        let inf = f64::INFINITY;
        let e = [inf, 1.0, 1.0, inf];
        assert_eq!(solve(2, 2, &e), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn rectangular_matrices() {
        // wide: every row matched
        let e = [5.0, 1.0, 9.0, 2.0, 7.0, 3.0];
        let pairs = solve(2, 3, &e);
        assert_eq!(pairs.len(), 2);
        assert_eq!(total(2, 3, &e, &pairs), 3.0);
        // tall: every column matched
        let e = [5.0, 2.0, 1.0, 7.0, 9.0, 3.0];
        let pairs = solve(3, 2, &e);
        assert_eq!(pairs.len(), 2);
        assert_eq!(total(3, 2, &e, &pairs), 3.0);
    }

    #[test]
    fn rejects_negative_and_nan() {
        assert!(CostMatrix::new(Matrix::from_fn(1, 1, |_, _| -1.0)).is_err());
        assert!(CostMatrix::new(Matrix::from_fn(1, 1, |_, _| f64::NAN)).is_err());
        assert!(CostMatrix::new(Matrix::from_fn(1, 1, |_, _| f64::INFINITY)).is_ok());
    }

    /// Exhaustive-permutation oracle for small square matrices.
    fn brute_force_min_cost(n: usize, entries: &[f64]) -> f64 {
        fn permute(rest: &mut Vec<usize>, chosen: &mut Vec<usize>, best: &mut f64, n: usize, e: &[f64]) {
            if rest.is_empty() {
                let cost: f64 = chosen.iter().enumerate().map(|(i, &j)| e[i * n + j]).sum();
                if cost < *best {
                    *best = cost;
                }
                return;
            }
            for k in 0..rest.len() {
                let j = rest.remove(k);
                chosen.push(j);
                permute(rest, chosen, best, n, e);
                chosen.pop();
                rest.insert(k, j);
            }
        }
        let mut best = f64::INFINITY;
        permute(&mut (0..n).collect(), &mut Vec::new(), &mut best, n, entries);
        best
    }

    #[test]
    fn works_for_f32_scalars_too() {
        let m = Matrix::from_fn(2, 2, |i, j| [[1.0_f32, 2.0], [2.0, 4.0]][i][j]);
        let pairs = min_cost_assignment(&CostMatrix::new(m).unwrap());
        assert_eq!(pairs, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn matches_exhaustive_oracle_on_random_instances() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.gen_range(1..=5);
            let entries: Vec<f64> = (0..n * n).map(|_| (rng.gen_range(0..100) as f64) / 10.0).collect();
            let pairs = solve(n, n, &entries);
            assert_eq!(pairs.len(), n);
            let got = total(n, n, &entries, &pairs);
            let want = brute_force_min_cost(n, &entries);
            assert!(
                (got - want).abs() < 1e-9,
                "n={n} got {got} want {want} entries {entries:?}"
            );
        }
    }
}
