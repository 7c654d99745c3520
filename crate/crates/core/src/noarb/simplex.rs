//! Dense tableau simplex for `max c·x  s.t.  A x <= b, x >= 0` with `b >= 0`.
//!
//! The origin is feasible, so the slack basis starts phase two directly.
//! Bland's rule keeps degenerate pivots from cycling.

use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub(crate) struct LpSolution<T> {
    pub x: Vec<T>,
    pub objective: T,
}

const MAX_PIVOTS: usize = 10_000;

/// Returns `None` when the problem is unbounded or fails to terminate.
pub(crate) fn maximize<T: Scalar>(c: &[T], a: &[Vec<T>], b: &[T], eps: T) -> Option<LpSolution<T>> {
    let m = a.len();
    let n = c.len();
    debug_assert!(b.iter().all(|&bi| bi >= T::zero()));
    let width = n + m + 1;
    let mut tab = vec![vec![T::zero(); width]; m + 1];
    for i in 0..m {
        tab[i][..n].copy_from_slice(&a[i]);
        tab[i][n + i] = T::one();
        tab[i][width - 1] = b[i];
    }
    for j in 0..n {
        tab[m][j] = -c[j];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    for _ in 0..MAX_PIVOTS {
        let Some(enter) = (0..n + m).find(|&j| tab[m][j] < -eps) else {
            let mut x = vec![T::zero(); n];
            for (i, &bv) in basis.iter().enumerate() {
                if bv < n {
                    x[bv] = tab[i][width - 1];
                }
            }
            return Some(LpSolution { x, objective: tab[m][width - 1] });
        };

        let mut leave: Option<(usize, T)> = None;
        for i in 0..m {
            let coef = tab[i][enter];
            if coef > eps {
                let ratio = tab[i][width - 1] / coef;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((r, best)) => {
                        if ratio < best - eps || (ratio <= best + eps && basis[i] < basis[r]) {
                            Some((i, ratio))
                        } else {
                            Some((r, best))
                        }
                    }
                };
            }
        }
        let (row, _) = leave?;

        let pivot = tab[row][enter];
        for v in tab[row].iter_mut() {
            *v = *v / pivot;
        }
        let pivot_row = tab[row].clone();
        for (i, r) in tab.iter_mut().enumerate() {
            if i == row {
                continue;
            }
            let f = r[enter];
            if f != T::zero() {
                for (v, &p) in r.iter_mut().zip(&pivot_row) {
                    *v = *v - f * p;
                }
            }
        }
        basis[row] = enter;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_problem() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let sol = maximize(
            &[3.0f64, 5.0],
            &[vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 2.0]],
            &[4.0, 12.0, 18.0],
            1e-12,
        )
        .unwrap();
        assert!((sol.objective - 36.0).abs() < 1e-12);
        assert!((sol.x[0] - 2.0).abs() < 1e-12 && (sol.x[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn unbounded_is_none() {
        assert!(maximize(&[1.0f64], &[vec![-1.0]], &[1.0], 1e-12).is_none());
    }

    #[test]
    fn degenerate_zero_rhs() {
        // max x - y with x - y <= 0 is degenerate at the origin; optimum 0.
        let sol = maximize(
            &[1.0f64, -1.0],
            &[vec![1.0, -1.0], vec![1.0, 0.0], vec![0.0, 1.0]],
            &[0.0, 1.0, 1.0],
            1e-12,
        )
        .unwrap();
        assert!(sol.objective.abs() < 1e-12);
    }
}
