//! Linear assignment by the Hungarian method with deterministic tie-breaking.

use ndarray::Array2;

use crate::{Error, Result};

/// An optimal assignment: row `i` takes column `perm[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub perm: Vec<usize>,
    pub value: f64,
}

/// Maximize `sum_i score[i, perm[i]]`. Among optimal permutations the
/// lexicographically smallest is returned.
pub fn solve_lap_max(score: &Array2<f64>) -> Result<Assignment> {
    check(score)?;
    let perm = solve_min(&score.mapv(|x| -x));
    Ok(assignment(score, perm))
}

/// Minimize `sum_i cost[i, perm[i]]`, same tie-breaking.
pub fn solve_lap_min(cost: &Array2<f64>) -> Result<Assignment> {
    check(cost)?;
    let perm = solve_min(cost);
    Ok(assignment(cost, perm))
}

fn check(m: &Array2<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Argument(format!("assignment matrix must be square, got {:?}", m.dim())));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Argument("assignment matrix has non-finite entries".into()));
    }
    Ok(())
}

fn assignment(m: &Array2<f64>, perm: Vec<usize>) -> Assignment {
    let value = perm.iter().enumerate().map(|(i, &j)| m[[i, j]]).sum();
    Assignment { perm, value }
}

fn solve_min(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    if n == 0 {
        return Vec::new();
    }
    let (row_of, u, v) = hungarian(cost);
    let scale = cost.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let tol = 1e-9 * scale * n as f64;
    let tight = Array2::from_shape_fn((n, n), |(i, j)| cost[[i, j]] - u[i] - v[j] <= tol);
    let mut col_of = vec![usize::MAX; n];
    for (j, &i) in row_of.iter().enumerate() {
        col_of[i] = j;
    }
    lexicographic_matching(&tight, col_of)
}

/// Shortest-augmenting-path Hungarian algorithm. Returns the row matched to
/// each column plus row and column potentials.
fn hungarian(a: &Array2<f64>) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = a.nrows();
    // 1-based with a virtual column 0, as in the classic formulation
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = a[[i0 - 1, j - 1]] - u[i0] - v[j];
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
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let row_of = (1..=n).map(|j| p[j] - 1).collect();
    (row_of, u[1..].to_vec(), v[1..].to_vec())
}

/// Every perfect matching inside the equality graph of an optimal dual is
/// optimal, so the lexicographically smallest one is found greedily: fix rows
/// in order, trying columns in order, and keep a column whenever the
/// remaining rows can still be matched (checked by re-augmenting).
fn lexicographic_matching(tight: &Array2<bool>, mut col_of: Vec<usize>) -> Vec<usize> {
    let n = col_of.len();
    let mut row_of = vec![0usize; n];
    for (i, &j) in col_of.iter().enumerate() {
        row_of[j] = i;
    }
    let mut fixed_col = vec![false; n];
    for i in 0..n {
        for j in 0..n {
            if fixed_col[j] || !tight[[i, j]] {
                continue;
            }
            if col_of[i] == j {
                break;
            }
            // tentatively give column j to row i; its previous owner must find
            // a path to the column row i released
            let owner = row_of[j];
            let freed = col_of[i];
            let (saved_col, saved_row) = (col_of.clone(), row_of.clone());
            col_of[i] = j;
            row_of[j] = i;
            let mut blocked = fixed_col.clone();
            blocked[j] = true;
            let mut visited = vec![false; n];
            if augment(owner, freed, tight, &blocked, &mut visited, &mut col_of, &mut row_of) {
                break;
            }
            col_of = saved_col;
            row_of = saved_row;
        }
        fixed_col[col_of[i]] = true;
    }
    col_of
}

/// Kuhn-style search for an alternating path from `row` to the free column
/// `target`, avoiding `blocked` columns.
fn augment(
    row: usize,
    target: usize,
    tight: &Array2<bool>,
    blocked: &[bool],
    visited: &mut [bool],
    col_of: &mut [usize],
    row_of: &mut [usize],
) -> bool {
    let n = blocked.len();
    for j in 0..n {
        if blocked[j] || visited[j] || !tight[[row, j]] {
            continue;
        }
        visited[j] = true;
        if j == target {
            col_of[row] = j;
            row_of[j] = row;
            return true;
        }
        let next = row_of[j];
        if next == row {
            continue;
        }
        if augment(next, target, tight, blocked, visited, col_of, row_of) {
            col_of[row] = j;
            row_of[j] = row;
            return true;
        }
    }
    false
}

/// `p^{-1}` such that `inv[p[i]] = i`.
pub fn invert(p: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; p.len()];
    for (i, &j) in p.iter().enumerate() {
        inv[j] = i;
    }
    inv
}

pub fn is_permutation(p: &[usize]) -> bool {
    let mut seen = vec![false; p.len()];
    p.iter().all(|&j| j < p.len() && !std::mem::replace(&mut seen[j], true))
}
