//! Exact square assignment by shortest augmenting paths.
//!
//! Dense potential-based implementation in O(n^3): rows are inserted one at
//! a time, each via a Dijkstra-like scan over columns that keeps the reduced
//! costs nonnegative. All tie-breaks scan columns in ascending order, so the
//! solution is deterministic; among equal-cost optima it returns the one the
//! fixed scan order discovers, which callers exploit by encoding secondary
//! preferences directly into the costs.

/// A minimum-cost perfect matching between `n` rows and `n` columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentResult {
    /// `row_to_col[i]` is the column assigned to row `i`.
    pub row_to_col: Vec<usize>,
    /// `col_to_row[j]` is the row assigned to column `j`.
    pub col_to_row: Vec<usize>,
    pub total_cost: i64,
}

/// Solves the assignment problem for a row-major `n x n` cost matrix.
///
/// # Panics
///
/// Panics if `cost.len() != n * n`.
pub fn solve_assignment(n: usize, cost: &[i64]) -> AssignmentResult {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    if n == 0 {
        return AssignmentResult { row_to_col: vec![], col_to_row: vec![], total_cost: 0 };
    }
    let inf = i64::MAX / 4;
    // 1-based arrays; index 0 is the virtual unmatched column.
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        // Augment along the recorded path.
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    let mut col_to_row = vec![0usize; n];
    let mut total_cost = 0i64;
    for j in 1..=n {
        let i = matched_row[j];
        row_to_col[i - 1] = j - 1;
        col_to_row[j - 1] = i - 1;
        total_cost += cost[(i - 1) * n + (j - 1)];
    }
    AssignmentResult { row_to_col, col_to_row, total_cost }
}
