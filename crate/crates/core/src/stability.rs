//! Stability region membership via linear programming.
//!
//! A vector `z` lies in the stability region when `z <= C P u` for some
//! allocation `u` in `U`. Interior membership is certified by an additive
//! margin: the largest `delta` with `C P u >= z + delta 1`.

use serde::Serialize;

use crate::controllers::service_rate;
use crate::error::{Error, Result};
use crate::graph::{aggregate_demand, AggregateDemand};
use crate::lp::{LinearProgram, LpOutcome, Relation};
use crate::network::{ControlAllocation, NetworkSpec, RoutingMatrix};

/// Margins within this band of zero classify as `Boundary`.
pub const VERDICT_TOL: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Interior,
    Boundary,
    Outside,
}

impl Verdict {
    pub fn from_margin(margin: f64) -> Self {
        if margin > VERDICT_TOL {
            Verdict::Interior
        } else if margin < -VERDICT_TOL {
            Verdict::Outside
        } else {
            Verdict::Boundary
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StabilityCertificate {
    /// Additive margin in flow units; `-margin` bounds the infinity-norm
    /// distance to the region from above when negative.
    pub margin: f64,
    pub witness: ControlAllocation,
    pub verdict: Verdict,
}

/// Largest additive margin `delta` such that `C P u >= z + delta 1` for some
/// `u` in `U`, with the optimizing allocation as witness.
pub fn membership_margin(spec: &NetworkSpec, z: &[f64]) -> Result<StabilityCertificate> {
    let n = spec.num_cells();
    let p = spec.num_phases();
    if z.len() != n {
        return Err(Error::Dimension(format!("z has {} entries for {n} cells", z.len())));
    }
    // Shift delta = d - shift with d >= 0; u = 0, d = 0 is then feasible.
    let shift = z.iter().fold(0.0f64, |m, &v| m.max(v));
    let mut objective = vec![0.0; p + 1];
    objective[p] = 1.0;
    let mut lp = LinearProgram::new(objective);
    for (i, cell) in spec.cells().iter().enumerate() {
        // d - c_i (P u)_i <= shift - z_i
        let mut row = vec![0.0; p + 1];
        let k = cell.head;
        for (q, phase) in spec.node_phases(k).iter().enumerate() {
            if phase.contains(&i) {
                row[spec.phase_index(k, q)] -= cell.capacity;
            }
        }
        row[p] = 1.0;
        lp.add(row, Relation::Le, shift - z[i]);
    }
    for k in spec.controlled_nodes() {
        let mut row = vec![0.0; p + 1];
        for q in 0..spec.node_phases(k).len() {
            row[spec.phase_index(k, q)] = 1.0;
        }
        lp.add(row, Relation::Le, 1.0);
    }
    let sol = match lp.solve() {
        LpOutcome::Optimal(s) => s,
        LpOutcome::Infeasible => return Err(Error::LinearProgram("infeasible")),
        LpOutcome::Unbounded => return Err(Error::LinearProgram("unbounded")),
        LpOutcome::IterationLimit => return Err(Error::LinearProgram("past its iteration limit")),
    };
    let mut witness = ControlAllocation::from_flat(spec, &sol.x[..p]);
    for u in witness.per_node.iter_mut() {
        let total: f64 = u.iter().sum();
        if total > 1.0 {
            u.iter_mut().for_each(|v| *v /= total);
        }
    }
    // Re-derive the margin from the witness so the certificate holds by
    // direct substitution.
    let served = service_rate(spec, &witness);
    let margin = if n == 0 {
        sol.x[p] - shift
    } else {
        served
            .iter()
            .zip(z)
            .map(|(s, zi)| s - zi)
            .fold(f64::INFINITY, f64::min)
    };
    Ok(StabilityCertificate {
        margin,
        verdict: Verdict::from_margin(margin),
        witness,
    })
}

/// Membership test of the aggregate demand `(I - R^T)^{-1} lambda`.
pub fn check_necessary_condition(
    spec: &NetworkSpec,
    lambda: &[f64],
    routing: &RoutingMatrix,
) -> Result<(AggregateDemand, StabilityCertificate)> {
    let a = aggregate_demand(lambda, routing)?;
    let cert = membership_margin(spec, &a.a)?;
    Ok((a, cert))
}

/// `b_k = 1 - min { 1^T nu : C^(k) P^(k) nu >= a^(k), nu >= 0 }`, the spare
/// time fraction at node `k` under the leanest allocation serving `a`.
pub fn node_slack(spec: &NetworkSpec, a: &[f64], k: usize) -> Result<f64> {
    let phases = spec.node_phases(k);
    let incoming = spec.incoming(k);
    if incoming.is_empty() || incoming.iter().all(|&i| a[i] <= 0.0) {
        return Ok(1.0);
    }
    let pk = phases.len();
    let mut lp = LinearProgram::new(vec![-1.0; pk]);
    for &i in incoming {
        let c = spec.cells()[i].capacity;
        let row = phases
            .iter()
            .map(|ph| if ph.contains(&i) { c } else { 0.0 })
            .collect();
        lp.add(row, Relation::Ge, a[i]);
    }
    let required = match lp.solve() {
        LpOutcome::Optimal(s) => -s.value,
        LpOutcome::Infeasible => f64::INFINITY,
        LpOutcome::Unbounded => return Err(Error::LinearProgram("unbounded")),
        LpOutcome::IterationLimit => return Err(Error::LinearProgram("past its iteration limit")),
    };
    if required > 1.0 {
        return Err(Error::NodeInfeasible {
            node: spec.nodes()[k].clone(),
            required,
        });
    }
    Ok(1.0 - required)
}
