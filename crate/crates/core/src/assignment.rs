//! Minimum-cost one-to-one assignment.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AssignmentError {
    #[error("cost matrix is not square: row {row} has {len} entries, expected {expected}")]
    NonSquare { row: usize, len: usize, expected: usize },
    #[error("cost[{row}][{col}] is not finite")]
    NonFinite { row: usize, col: usize },
}

/// A bijection from rows to columns and its total cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `permutation[row]` is the column assigned to `row`.
    pub permutation: Vec<usize>,
    pub cost: f64,
}

/// Minimum-cost perfect matching on a square cost matrix.
///
/// Shortest augmenting path with dual potentials, O(n^3).
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Assignment, AssignmentError> {
    let n = cost.len();
    for (row, r) in cost.iter().enumerate() {
        if r.len() != n {
            return Err(AssignmentError::NonSquare { row, len: r.len(), expected: n });
        }
        if let Some(col) = r.iter().position(|c| !c.is_finite()) {
            return Err(AssignmentError::NonFinite { row, col });
        }
    }
    let permutation = solve(cost, n);
    let cost = assignment_cost(cost, &permutation);
    Ok(Assignment { permutation, cost })
}

fn solve(cost: &[Vec<f64>], n: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let m = n;
    // 1-based arrays; column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut result = vec![0usize; n];
    for j in 1..=m {
        if owner[j] != 0 {
            result[owner[j] - 1] = j - 1;
        }
    }
    result
}

/// Total cost of a row-to-column assignment.
pub fn assignment_cost(cost: &[Vec<f64>], assignment: &[usize]) -> f64 {
    assignment.iter().enumerate().map(|(i, &j)| cost[i][j]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive minimum over all permutations.
    pub(crate) fn brute_force(cost: &[Vec<f64>]) -> f64 {
        fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
            if row == cost.len() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..used.len() {
                if !used[j] {
                    used[j] = true;
                    best = best.min(cost[row][j] + go(cost, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        let mut used = vec![false; cost.len()];
        go(cost, 0, &mut used)
    }

    #[test]
    fn known_cases() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let a = hungarian(&cost).unwrap();
        assert_eq!(a.cost, 5.0);
        assert_eq!(a.permutation, vec![1, 0, 2]);

        let diag = vec![vec![0.0, 3.0, 3.0], vec![3.0, 0.0, 3.0], vec![3.0, 3.0, 0.0]];
        assert_eq!(hungarian(&diag).unwrap(), Assignment { permutation: vec![0, 1, 2], cost: 0.0 });
        let swap = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert_eq!(hungarian(&swap).unwrap().permutation, vec![0, 1]);
        assert!(hungarian(&[]).unwrap().permutation.is_empty());
    }

    #[test]
    fn rejects_bad_matrices() {
        assert!(matches!(
            hungarian(&[vec![1.0, 2.0]]),
            Err(AssignmentError::NonSquare { row: 0, .. })
        ));
        assert!(matches!(
            hungarian(&[vec![1.0, f64::NAN], vec![0.0, 0.0]]),
            Err(AssignmentError::NonFinite { row: 0, col: 1 })
        ));
    }

    proptest! {
        #[test]
        fn matches_brute_force(n in 1usize..8, cells in proptest::collection::vec(0.0f64..10.0, 49)) {
            let cost: Vec<Vec<f64>> = (0..n).map(|i| cells[i * n..i * n + n].to_vec()).collect();
            let a = hungarian(&cost).unwrap();
            let mut seen = a.permutation.clone();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            prop_assert!((a.cost - brute_force(&cost)).abs() < 1e-9);
        }

        #[test]
        fn never_beaten_by_shuffles(n in 2usize..10, cells in proptest::collection::vec(0.0f64..10.0, 81), shuffles in proptest::collection::vec(any::<u64>(), 100)) {
            let cost: Vec<Vec<f64>> = (0..n).map(|i| cells[i * n..i * n + n].to_vec()).collect();
            let best = hungarian(&cost).unwrap().cost;
            for s in shuffles {
                let mut perm: Vec<usize> = (0..n).collect();
                let mut state = s | 1;
                for i in (1..n).rev() {
                    state ^= state << 13;
                    state ^= state >> 7;
                    state ^= state << 17;
                    perm.swap(i, (state % (i as u64 + 1)) as usize);
                }
                prop_assert!(best <= assignment_cost(&cost, &perm) + 1e-9);
            }
        }
    }
}
