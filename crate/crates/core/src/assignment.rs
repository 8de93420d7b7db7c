//! Minimum-cost perfect matching on a dense square cost matrix
//! (Hungarian method with row/column potentials, `O(M³)`).

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `row_to_col[i]` is the column matched to row `i`.
    pub row_to_col: Vec<usize>,
    pub cost: f64,
    /// Some pair of rows can swap columns without changing the total cost.
    pub ambiguous: bool,
}

/// Relative tolerance for the swap-ambiguity check.
pub const TIE_REL_TOL: f64 = 1e-12;

pub fn min_cost_assignment(cost: &DMatrix<f64>) -> Result<Assignment> {
    let n = cost.nrows();
    if !cost.is_square() {
        return Err(Error::Dimension("assignment cost matrix must be square".into()));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Invalid("assignment costs must be finite".into()));
    }
    if n == 0 {
        return Ok(Assignment { row_to_col: Vec::new(), cost: 0.0, ambiguous: false });
    }
    // 1-based arrays; index 0 is the virtual root column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        col_owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
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
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[col_owner[j] - 1] = j - 1;
    }
    let total: f64 = row_to_col.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
    let mut ambiguous = false;
    'pairs: for i in 0..n {
        for k in i + 1..n {
            let (a, b) = (row_to_col[i], row_to_col[k]);
            let kept = cost[(i, a)] + cost[(k, b)];
            let swapped = cost[(i, b)] + cost[(k, a)];
            let scale = cost[(i, a)].abs() + cost[(k, b)].abs() + cost[(i, b)].abs() + cost[(k, a)].abs();
            if (swapped - kept).abs() <= TIE_REL_TOL * scale {
                ambiguous = true;
                break 'pairs;
            }
        }
    }
    Ok(Assignment { row_to_col, cost: total, ambiguous })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_known_optimum() {
        let c = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0]);
        let a = min_cost_assignment(&c).unwrap();
        assert_eq!(a.row_to_col, vec![1, 0, 2]);
        assert_eq!(a.cost, 5.0);
        assert!(!a.ambiguous);
    }

    #[test]
    fn identical_rows_are_flagged() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 2.0]);
        let a = min_cost_assignment(&c).unwrap();
        assert!(a.ambiguous);
        assert_eq!(a.cost, 3.0);
    }

    #[test]
    fn matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let c = DMatrix::from_fn(5, 5, |_, _| r.random_range(0.0..10.0));
            let best = permutations(5)
                .into_iter()
                .map(|p| p.iter().enumerate().map(|(i, &j)| c[(i, j)]).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            assert!((min_cost_assignment(&c).unwrap().cost - best).abs() < 1e-9);
        }
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }
}
