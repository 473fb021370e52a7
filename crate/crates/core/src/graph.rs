//! Reachability through the routing matrix and the aggregate demand
//! `a = (I - R^T)^{-1} lambda`.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{inf_norm, lu_solve};
use crate::network::RoutingMatrix;

/// A row counts as leaking only if its deficit exceeds this.
pub const DEFICIT_TOL: f64 = 1e-12;

/// Total flow each cell has to carry at equilibrium.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateDemand {
    pub a: Vec<f64>,
}

/// Cells reachable from `from` (including itself) along strictly positive
/// routing entries.
pub fn reachable_set(routing: &RoutingMatrix, from: usize) -> Vec<bool> {
    let n = routing.dim();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([from]);
    seen[from] = true;
    while let Some(i) = queue.pop_front() {
        for (j, &r) in routing.row(i).iter().enumerate() {
            if r > 0.0 && !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen
}

pub fn reachable(routing: &RoutingMatrix, i: usize, j: usize) -> bool {
    i == j || reachable_set(routing, i)[j]
}

fn leaks(routing: &RoutingMatrix, j: usize) -> bool {
    routing.exit_fraction(j) > DEFICIT_TOL
}

/// Every cell with positive inflow reaches a cell from which some flow exits.
pub fn is_out_connected(lambda: &[f64], routing: &RoutingMatrix) -> bool {
    lambda
        .iter()
        .enumerate()
        .filter(|(_, &l)| l > 0.0)
        .all(|(i, _)| {
            reachable_set(routing, i)
                .iter()
                .enumerate()
                .any(|(j, &r)| r && leaks(routing, j))
        })
}

/// Out-connectedness for every inflow vector, which makes `I - R^T`
/// invertible with a nonnegative inverse.
pub fn routing_is_out_connected(routing: &RoutingMatrix) -> bool {
    is_out_connected(&vec![1.0; routing.dim()], routing)
}

/// Every cell is reachable from some cell with positive inflow.
pub fn is_in_connected(lambda: &[f64], routing: &RoutingMatrix) -> bool {
    let n = routing.dim();
    let mut covered = vec![false; n];
    for (i, _) in lambda.iter().enumerate().filter(|(_, &l)| l > 0.0) {
        for (c, r) in covered.iter_mut().zip(reachable_set(routing, i)) {
            *c |= r;
        }
    }
    covered.into_iter().all(|c| c)
}

/// Solves `(I - R^T) a = lambda` by LU with partial pivoting.
///
/// The routing has to be out-connected; that is checked on the graph before
/// any factorization, so a non-leaking routing is reported as
/// [`Error::SingularSystem`] rather than as a numerical accident.
pub fn aggregate_demand(lambda: &[f64], routing: &RoutingMatrix) -> Result<AggregateDemand> {
    let n = routing.dim();
    if lambda.len() != n {
        return Err(Error::Dimension(format!(
            "inflow has {} entries, routing is {n}x{n}",
            lambda.len()
        )));
    }
    if !routing_is_out_connected(routing) {
        return Err(Error::SingularSystem(
            "routing is not out-connected: some cell cannot reach an exit".into(),
        ));
    }
    let m = DMatrix::from_fn(n, n, |i, j| {
        (if i == j { 1.0 } else { 0.0 }) - routing.get(j, i)
    });
    let a = lu_solve(m, lambda)
        .ok_or_else(|| Error::SingularSystem("I - R^T could not be factorized".into()))?;
    // residual check against the original system
    let routed = routing.transpose_mul(&a);
    let residual: Vec<f64> = (0..n).map(|i| a[i] - routed[i] - lambda[i]).collect();
    let bound = 1e-10 * inf_norm(lambda).max(1.0);
    if inf_norm(&residual) > bound {
        return Err(Error::SingularSystem(format!(
            "aggregate demand residual {:e} exceeds {bound:e}",
            inf_norm(&residual)
        )));
    }
    Ok(AggregateDemand { a })
}
