//! Running average of the exogenous inflow, `(1/t) int_0^t lambda`, and the
//! stability margin of its aggregate demand under the routing active at `t`.

use std::path::Path;

use flownet_core::dynamics::Trajectory;
use flownet_core::stability::check_necessary_condition;
use flownet_core::{DemandProfile, NetworkSpec, Verdict};
use serde::Serialize;

use crate::error::Result;
use crate::table::TrajectoryTable;

#[derive(Clone, Debug, Serialize)]
pub struct InflowSample {
    pub t: f64,
    pub piece: usize,
    pub lambda_bar: Vec<f64>,
    pub margin: f64,
    pub verdict: Verdict,
}

/// `(1/t) int_0^t lambda(s) ds`; the inflow at time 0 when `t = 0`.
pub fn average_inflow(demand: &DemandProfile, t: f64) -> Vec<f64> {
    let first = &demand.pieces[0].lambda;
    let reached = demand.piece_index_at(t.max(0.0));
    // exact when the inflow has not changed yet
    if t <= 0.0 || demand.pieces[..=reached].iter().all(|p| &p.lambda == first) {
        return first.clone();
    }
    let mut acc = vec![0.0; first.len()];
    for (p, piece) in demand.pieces.iter().enumerate() {
        if piece.start >= t {
            break;
        }
        let span = demand.piece_end(p).min(t) - piece.start;
        for (a, l) in acc.iter_mut().zip(&piece.lambda) {
            *a += span * l;
        }
    }
    acc.iter().map(|a| a / t).collect()
}

pub fn average_inflow_tracker(
    spec: &NetworkSpec,
    traj: &Trajectory,
    demand: &DemandProfile,
) -> Result<Vec<InflowSample>> {
    let mut out: Vec<InflowSample> = Vec::with_capacity(traj.samples.len());
    for s in &traj.samples {
        let lambda_bar = average_inflow(demand, s.t);
        let piece = demand.piece_index_at(s.t);
        // the LP only depends on (piece, lambda_bar); reuse the previous one
        let (margin, verdict) = match out.last() {
            Some(prev) if prev.piece == piece && prev.lambda_bar == lambda_bar => (prev.margin, prev.verdict),
            _ => {
                let (_, cert) = check_necessary_condition(spec, &lambda_bar, &demand.pieces[piece].routing)?;
                (cert.margin, cert.verdict)
            }
        };
        out.push(InflowSample {
            t: s.t,
            piece,
            lambda_bar,
            margin,
            verdict,
        });
    }
    Ok(out)
}

fn verdict_code(v: Verdict) -> f64 {
    match v {
        Verdict::Interior => 1.0,
        Verdict::Boundary => 0.0,
        Verdict::Outside => -1.0,
    }
}

/// CSV with columns `t, piece, margin, verdict, lambda_bar.<cell>`; verdict is
/// 1 for Interior, 0 for Boundary, -1 for Outside.
pub fn write_trace(spec: &NetworkSpec, trace: &[InflowSample], path: &Path) -> Result<()> {
    let mut header: Vec<String> = ["t", "piece", "margin", "verdict"].map(String::from).to_vec();
    header.extend(spec.cells().iter().map(|c| format!("lambda_bar.{}", c.id)));
    let rows = trace
        .iter()
        .map(|s| {
            let mut row = vec![s.t, s.piece as f64, s.margin, verdict_code(s.verdict)];
            row.extend(&s.lambda_bar);
            row
        })
        .collect();
    TrajectoryTable { header, rows }.write(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use flownet_core::{DemandPiece, RoutingMatrix};

    #[test]
    fn constant_inflow_average() {
        let d = DemandProfile::constant(vec![0.3, 0.1], RoutingMatrix::zeros(2));
        assert_eq!(average_inflow(&d, 0.0), vec![0.3, 0.1]);
        assert_eq!(average_inflow(&d, 7.5), vec![0.3, 0.1]);
    }

    #[test]
    fn halved_inflow_average() {
        let mut d = DemandProfile::constant(vec![0.4], RoutingMatrix::zeros(1));
        d.pieces.push(DemandPiece {
            start: 5.0,
            lambda: vec![0.2],
            routing: RoutingMatrix::zeros(1),
        });
        let avg = average_inflow(&d, 10.0);
        assert!((avg[0] - 0.75 * 0.4).abs() < 1e-15);
        assert_eq!(average_inflow(&d, 5.0), vec![0.4]);
    }
}
