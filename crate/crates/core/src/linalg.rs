//! Small dense solves. Everything here is `n <= a few hundred`.

use nalgebra::{DMatrix, DVector};

use crate::network::RoutingMatrix;

/// Relative pivot size below which a factorization is treated as singular.
const PIVOT_TOL: f64 = 1e-13;

/// Solves `A y = b` by LU with partial pivoting. `None` if `A` is
/// numerically singular.
pub fn lu_solve(a: DMatrix<f64>, b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    debug_assert_eq!(a.nrows(), n);
    if n == 0 {
        return Some(Vec::new());
    }
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let lu = a.lu();
    let u = lu.u();
    if (0..n).any(|i| u[(i, i)].abs() <= PIVOT_TOL * scale) {
        return None;
    }
    lu.solve(&DVector::from_column_slice(b))
        .map(|y| y.iter().copied().collect())
}

/// `I - (R^T)_{SS}` for the index set `s`: entry `(a, b)` is
/// `delta_ab - R[s_b][s_a]`.
pub fn identity_minus_rt(routing: &RoutingMatrix, s: &[usize]) -> DMatrix<f64> {
    let k = s.len();
    DMatrix::from_fn(k, k, |a, b| {
        let id = if a == b { 1.0 } else { 0.0 };
        id - routing.get(s[b], s[a])
    })
}

/// `(R^T)_{AB}` as a dense block: entry `(a, b)` is `R[b_idx][a_idx]`.
pub fn rt_block(routing: &RoutingMatrix, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |a, b| routing.get(cols[b], rows[a]))
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
