//! Exact maximum-weight perfect matching (Hungarian method with potentials, O(n³)).

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Maximum-weight assignment on a square row-major `rows × cols` matrix.
/// Returns `perm` with `perm[r]` the column assigned to row `r`.
pub fn hungarian<T: Real>(w: &[T], rows: usize, cols: usize) -> Result<Vec<usize>> {
    if rows != cols {
        return Err(Error::Shape { op: "hungarian", detail: format!("non-square {rows}×{cols}") });
    }
    if w.len() != rows * cols {
        return Err(Error::Shape { op: "hungarian", detail: format!("{} entries for {rows}×{cols}", w.len()) });
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "hungarian".into() });
    }
    let n = rows;
    if n == 0 {
        return Ok(Vec::new());
    }
    // Minimize -w. Arrays are 1-based; index 0 is the virtual column/row.
    let cost = |i: usize, j: usize| -w[(i - 1) * n + (j - 1)];
    let inf = T::infinity();
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
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
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[p[j] - 1] = j - 1;
    }
    Ok(perm)
}

/// Total weight of an assignment.
pub fn assignment_weight<T: Real>(w: &[T], perm: &[usize]) -> T {
    let n = perm.len();
    perm.iter().enumerate().fold(T::zero(), |acc, (r, &c)| acc + w[r * n + c])
}
