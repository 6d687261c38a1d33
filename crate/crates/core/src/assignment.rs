//! Maximum-weight perfect matching on a square matrix.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::matrix::Matrix;

/// A permutation `perm` with `perm[i]` the column assigned to row `i`,
/// and its total weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub perm: Vec<usize>,
    pub weight: f64,
}

fn check_square(w: &Matrix) -> Result<()> {
    if w.rows() != w.cols() {
        return Err(invalid("weights", "matrix must be square"));
    }
    if !w.is_finite() {
        return Err(invalid("weights", "entries must be finite"));
    }
    Ok(())
}

fn total(w: &Matrix, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| w[(i, j)]).sum()
}

/// Exact solver, `O(n^3)` shortest augmenting paths with potentials.
pub fn max_weight_assignment(w: &Matrix) -> Result<Assignment> {
    check_square(w)?;
    let n = w.rows();
    if n == 0 {
        return Ok(Assignment { perm: Vec::new(), weight: 0.0 });
    }
    // minimise -w; 1-based with column 0 as the virtual source
    let cost = |i: usize, j: usize| -w[(i - 1, j - 1)];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
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
            for j in 0..=n {
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
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[owner[j] - 1] = j - 1;
    }
    let weight = total(w, &perm);
    Ok(Assignment { perm, weight })
}
