//! Minimum-cost one-to-one assignment (Kuhn-Munkres with potentials, O(n³)).
//!
//! Rectangular problems are padded to square with dummy rows or columns of
//! cost 1.0; anything assigned to a dummy is reported unmatched.

use nalgebra::DMatrix;

/// Result of [`hungarian_assign`] in row/column index space.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

impl Assignment {
    pub fn total_cost(&self, cost: &DMatrix<f64>) -> f64 {
        self.pairs.iter().map(|&(r, c)| cost[(r, c)]).sum()
    }
}

pub const DUMMY_COST: f64 = 1.0;

/// Optimal row→column assignment of a square matrix.
fn solve_square(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    debug_assert_eq!(n, cost.ncols());
    // 1-based arrays with a virtual column 0.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        if col_owner[j] != 0 {
            row_to_col[col_owner[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Minimum-total-cost assignment on a rectangular cost matrix. Pairs whose
/// cost exceeds `accept_threshold` are demoted to unmatched afterwards.
pub fn hungarian_assign(cost: &DMatrix<f64>, accept_threshold: f64) -> Assignment {
    let (rows, cols) = cost.shape();
    if rows == 0 || cols == 0 {
        return Assignment {
            pairs: Vec::new(),
            unmatched_rows: (0..rows).collect(),
            unmatched_cols: (0..cols).collect(),
        };
    }
    let n = rows.max(cols);
    let padded = DMatrix::from_fn(n, n, |r, c| if r < rows && c < cols { cost[(r, c)] } else { DUMMY_COST });
    let row_to_col = solve_square(&padded);

    let mut pairs = Vec::new();
    let mut row_matched = vec![false; rows];
    let mut col_matched = vec![false; cols];
    for (r, &c) in row_to_col.iter().enumerate().take(rows) {
        if c < cols && cost[(r, c)] <= accept_threshold {
            pairs.push((r, c));
            row_matched[r] = true;
            col_matched[c] = true;
        }
    }
    Assignment {
        pairs,
        unmatched_rows: (0..rows).filter(|&r| !row_matched[r]).collect(),
        unmatched_cols: (0..cols).filter(|&c| !col_matched[c]).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive minimum over all injections of the smaller side into the larger.
    fn brute_force_min(cost: &DMatrix<f64>) -> f64 {
        let (rows, cols) = cost.shape();
        if rows > cols {
            return brute_force_min(&cost.transpose());
        }
        fn rec(cost: &DMatrix<f64>, row: usize, used: &mut Vec<bool>) -> f64 {
            if row == cost.nrows() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for c in 0..cost.ncols() {
                if !used[c] {
                    used[c] = true;
                    best = best.min(cost[(row, c)] + rec(cost, row + 1, used));
                    used[c] = false;
                }
            }
            best
        }
        rec(cost, 0, &mut vec![false; cols])
    }

    #[test]
    fn unique_optimum() {
        let cost = DMatrix::from_row_slice(2, 2, &[0.1, 0.9, 0.9, 0.2]);
        let a = hungarian_assign(&cost, 1.0);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert!((a.total_cost(&cost) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn threshold_demotes_pairs() {
        let cost = DMatrix::from_row_slice(1, 1, &[0.5]);
        let a = hungarian_assign(&cost, 0.4);
        assert!(a.pairs.is_empty());
        assert_eq!(a.unmatched_rows, vec![0]);
        assert_eq!(a.unmatched_cols, vec![0]);
    }

    #[test]
    fn empty_matrix_leaves_everything_unmatched() {
        let a = hungarian_assign(&DMatrix::zeros(0, 3), 0.8);
        assert_eq!(a.unmatched_cols, vec![0, 1, 2]);
        let a = hungarian_assign(&DMatrix::zeros(2, 0), 0.8);
        assert_eq!(a.unmatched_rows, vec![0, 1]);
    }

    #[test]
    fn random_5x7_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let cost = DMatrix::from_fn(5, 7, |_, _| rng.random::<f64>());
            let a = hungarian_assign(&cost, 1.0);
            assert_eq!(a.pairs.len(), 5);
            assert!((a.total_cost(&cost) - brute_force_min(&cost)).abs() < 1e-9);
            let t = cost.transpose();
            let b = hungarian_assign(&t, 1.0);
            assert_eq!(b.pairs.len(), 5);
            assert_eq!(b.unmatched_rows.len(), 2);
            assert!((b.total_cost(&t) - brute_force_min(&t)).abs() < 1e-9);
        }
    }

    #[test]
    fn assignment_is_one_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (r, c) = (rng.random_range(0..7), rng.random_range(0..7));
            let cost = DMatrix::from_fn(r, c, |_, _| rng.random::<f64>());
            let a = hungarian_assign(&cost, 0.6);
            let mut rows: Vec<_> = a.pairs.iter().map(|p| p.0).chain(a.unmatched_rows.iter().copied()).collect();
            let mut cols: Vec<_> = a.pairs.iter().map(|p| p.1).chain(a.unmatched_cols.iter().copied()).collect();
            rows.sort_unstable();
            cols.sort_unstable();
            assert_eq!(rows, (0..r).collect::<Vec<_>>());
            assert_eq!(cols, (0..c).collect::<Vec<_>>());
            assert!(a.pairs.iter().all(|&(i, j)| cost[(i, j)] <= 0.6));
        }
    }
}
