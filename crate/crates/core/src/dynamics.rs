//! Closed-loop integration of `x' = lambda - (I - R^T) z`, `0 <= z <= zeta(x)`,
//! `x^T (zeta(x) - z) = 0`.
//!
//! Each step resolves the outflows of empty cells with the active-set formula
//! `z_I = (I - R^T_II)^{-1} (lambda_I + (R^T)_IJ zeta_J)` and then takes a
//! projected explicit Euler step.

use serde::Serialize;

use crate::controllers::{service_rate, ControllerConfig};
use crate::error::{Error, Result};
use crate::linalg::{identity_minus_rt, lu_solve};
use crate::lyapunov::{self, LyapunovContext};
use crate::network::{ControlAllocation, DemandProfile, NetworkSpec, RoutingMatrix};

pub const DEFAULT_EMPTY_THRESHOLD: f64 = 1e-9;
pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_SAMPLE_STRIDE: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowResolution {
    pub z: Vec<f64>,
    /// Cells held at zero volume, ascending.
    pub active_empty: Vec<usize>,
}

/// Realized outflows at state `x` given service rates `zeta`.
///
/// Cells above `threshold` discharge at `zeta`. The rest pass through what
/// reaches them, unless that exceeds their service rate, in which case the
/// lowest such index is treated as filling up and the system is re-solved.
pub fn resolve_flows(
    routing: &RoutingMatrix,
    lambda: &[f64],
    x: &[f64],
    zeta: &[f64],
    threshold: f64,
) -> Result<FlowResolution> {
    let n = x.len();
    if lambda.len() != n || zeta.len() != n || routing.dim() != n {
        return Err(Error::Dimension(format!(
            "state has {n} cells, inflow {}, service {}, routing {}",
            lambda.len(),
            zeta.len(),
            routing.dim()
        )));
    }
    let mut filled: Vec<bool> = x.iter().map(|&v| v > threshold).collect();
    let mut z = zeta.to_vec();
    loop {
        let empty: Vec<usize> = (0..n).filter(|&i| !filled[i]).collect();
        if empty.is_empty() {
            return Ok(FlowResolution {
                z,
                active_empty: empty,
            });
        }
        let rhs: Vec<f64> = empty
            .iter()
            .map(|&i| {
                let upstream: f64 = (0..n)
                    .filter(|&j| filled[j])
                    .map(|j| routing.get(j, i) * zeta[j])
                    .sum();
                lambda[i] + upstream
            })
            .collect();
        let z_empty = lu_solve(identity_minus_rt(routing, &empty), &rhs)
            .ok_or(Error::SingularSubsystem { size: empty.len() })?;
        let overflow = empty
            .iter()
            .zip(&z_empty)
            .find(|(&i, &zi)| zi > zeta[i] + 1e-13 * (1.0 + zeta[i]));
        match overflow {
            Some((&i, _)) => filled[i] = true,
            None => {
                for (&i, &zi) in empty.iter().zip(&z_empty) {
                    z[i] = zi.clamp(0.0, zeta[i]);
                }
                for (i, zi) in z.iter_mut().enumerate() {
                    if filled[i] {
                        *zi = zeta[i];
                    }
                }
                return Ok(FlowResolution {
                    z,
                    active_empty: empty,
                });
            }
        }
    }
}

/// `lambda - (I - R^T) z`.
pub fn volume_rate(routing: &RoutingMatrix, lambda: &[f64], z: &[f64]) -> Vec<f64> {
    let routed = routing.transpose_mul(z);
    (0..z.len()).map(|i| lambda[i] - z[i] + routed[i]).collect()
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub x: Vec<f64>,
    pub allocation: ControlAllocation,
    pub zeta: Vec<f64>,
    pub flows: FlowResolution,
}

/// Control, flow resolution and flows at `x`, without advancing.
pub fn evaluate(
    spec: &NetworkSpec,
    routing: &RoutingMatrix,
    lambda: &[f64],
    x: &[f64],
    controller: &ControllerConfig,
    threshold: f64,
) -> Result<(ControlAllocation, Vec<f64>, FlowResolution)> {
    let u = controller.allocate(spec, x, routing)?;
    let zeta = service_rate(spec, &u);
    let flows = resolve_flows(routing, lambda, x, &zeta, threshold)?;
    Ok((u, zeta, flows))
}

/// One projected Euler step of length `dt`.
pub fn step(
    spec: &NetworkSpec,
    routing: &RoutingMatrix,
    lambda: &[f64],
    x: &[f64],
    controller: &ControllerConfig,
    dt: f64,
    threshold: f64,
) -> Result<StepOutput> {
    let (allocation, zeta, flows) = evaluate(spec, routing, lambda, x, controller, threshold)?;
    let rate = volume_rate(routing, lambda, &flows.z);
    let next = x
        .iter()
        .zip(&rate)
        .map(|(xi, r)| (xi + dt * r).max(0.0))
        .collect();
    Ok(StepOutput {
        x: next,
        allocation,
        zeta,
        flows,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationOptions {
    pub horizon: f64,
    pub dt: f64,
    pub sample_stride: usize,
    pub empty_threshold: f64,
    /// Evaluate `V` and `W` at every sample.
    pub lyapunov: bool,
}

impl SimulationOptions {
    pub fn new(horizon: f64) -> Self {
        Self {
            horizon,
            dt: DEFAULT_DT,
            sample_stride: DEFAULT_SAMPLE_STRIDE,
            empty_threshold: DEFAULT_EMPTY_THRESHOLD,
            lyapunov: false,
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.dt > 0.0 && self.dt <= self.horizon)
            || self.sample_stride == 0
            || !(self.empty_threshold >= 0.0)
        {
            return Err(Error::NotApplicable(format!(
                "need 0 < dt <= horizon, sample_stride >= 1 and empty_threshold >= 0 \
                 (horizon {}, dt {}, stride {}, threshold {})",
                self.horizon, self.dt, self.sample_stride, self.empty_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: ControlAllocation,
    pub zeta: Vec<f64>,
    pub z: Vec<f64>,
    /// Index of the demand piece active at `t`.
    pub piece: usize,
    /// NaN unless Lyapunov diagnostics are on and the piece is Interior.
    pub v: f64,
    pub w: f64,
}

/// Time integrals over an interval of the run.
#[derive(Clone, Debug, Default, Serialize)]
pub struct FlowIntegrals {
    pub time: f64,
    /// `int z`
    pub outflow: Vec<f64>,
    /// `int zeta`
    pub service: Vec<f64>,
    /// `int (lambda + R^T z)`, everything arriving at each cell.
    pub inflow: Vec<f64>,
    /// `int lambda`
    pub exogenous: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    /// Over the whole run.
    pub integrals: FlowIntegrals,
    /// One entry per demand piece, restricted to the part of the run inside it.
    pub per_piece: Vec<FlowIntegrals>,
    pub steps: usize,
}

impl Trajectory {
    pub fn last(&self) -> &Sample {
        self.samples.last().expect("a trajectory has at least one sample")
    }

    pub fn max_inf_norm(&self) -> f64 {
        self.samples
            .iter()
            .flat_map(|s| s.x.iter())
            .fold(0.0, |m, &v| m.max(v))
    }
}

struct PieceContexts {
    cache: Vec<Option<Option<LyapunovContext>>>,
}

impl PieceContexts {
    fn get(&mut self, spec: &NetworkSpec, demand: &DemandProfile, piece: usize) -> Result<Option<&LyapunovContext>> {
        if self.cache[piece].is_none() {
            let p = &demand.pieces[piece];
            let ctx = match lyapunov::build_context(spec, &p.lambda, &p.routing) {
                Ok(ctx) => Some(ctx),
                Err(Error::NotInterior { .. } | Error::NodeInfeasible { .. }) => None,
                Err(e) => return Err(e),
            };
            self.cache[piece] = Some(ctx);
        }
        Ok(self.cache[piece].as_ref().and_then(Option::as_ref))
    }
}

/// Fixed-step integration from `x0` over `[0, horizon]`.
///
/// Steps are shortened so that demand piece boundaries and the horizon are
/// hit exactly. A sample is taken every `sample_stride` steps and at the end.
pub fn simulate(
    spec: &NetworkSpec,
    demand: &DemandProfile,
    controller: &ControllerConfig,
    x0: &[f64],
    opts: &SimulationOptions,
) -> Result<Trajectory> {
    opts.check()?;
    controller.check(spec)?;
    let n = spec.num_cells();
    if x0.len() != n {
        return Err(Error::Dimension(format!("x0 has {} entries for {n} cells", x0.len())));
    }
    if x0.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::NotApplicable("initial state must be nonnegative".into()));
    }
    let mut contexts = PieceContexts {
        cache: vec![None; demand.pieces.len()],
    };
    let mut sample = |t: f64,
                      x: &[f64],
                      u: ControlAllocation,
                      zeta: Vec<f64>,
                      z: Vec<f64>,
                      piece: usize|
     -> Result<Sample> {
        let (mut v, mut w) = (f64::NAN, f64::NAN);
        if opts.lyapunov {
            if let Some(ctx) = contexts.get(spec, demand, piece)? {
                let p = &demand.pieces[piece];
                let report = lyapunov::drift_w(spec, ctx, &p.routing, &p.lambda, x, opts.empty_threshold)?;
                v = report.v;
                w = report.w_drift;
            }
        }
        Ok(Sample {
            t,
            x: x.to_vec(),
            u,
            zeta,
            z,
            piece,
            v,
            w,
        })
    };

    let zero = FlowIntegrals {
        time: 0.0,
        outflow: vec![0.0; n],
        service: vec![0.0; n],
        inflow: vec![0.0; n],
        exogenous: vec![0.0; n],
    };
    let mut integrals = zero.clone();
    let mut per_piece = vec![zero; demand.pieces.len()];
    let mut samples = Vec::new();
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut steps = 0usize;
    // Remaining intervals shorter than this are absorbed into the previous step.
    let snap = 1e-9 * opts.dt;
    while opts.horizon - t > snap {
        let piece = demand.piece_index_at(t);
        let p = &demand.pieces[piece];
        let end = demand.piece_end(piece).min(opts.horizon);
        let mut h = opts.dt.min(end - t);
        if end - (t + h) <= snap {
            h = end - t;
        }
        let out = step(spec, &p.routing, &p.lambda, &x, controller, h, opts.empty_threshold)?;
        let routed = p.routing.transpose_mul(&out.flows.z);
        for acc in [&mut integrals, &mut per_piece[piece]] {
            acc.time += h;
            for i in 0..n {
                acc.outflow[i] += h * out.flows.z[i];
                acc.service[i] += h * out.zeta[i];
                acc.inflow[i] += h * (p.lambda[i] + routed[i]);
                acc.exogenous[i] += h * p.lambda[i];
            }
        }
        if steps % opts.sample_stride == 0 {
            samples.push(sample(t, &x, out.allocation, out.zeta, out.flows.z, piece)?);
        }
        x = out.x;
        t = if end - (t + h) <= snap { end } else { t + h };
        steps += 1;
    }
    let piece = demand.piece_index_at(t);
    let p = &demand.pieces[piece];
    let (u, zeta, flows) = evaluate(spec, &p.routing, &p.lambda, &x, controller, opts.empty_threshold)?;
    samples.push(sample(t, &x, u, zeta, flows.z, piece)?);
    Ok(Trajectory {
        samples,
        integrals,
        per_piece,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkBuilder;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn all_cells_filled_discharge_at_service_rate() {
        let r = RoutingMatrix::from_entries(2, &[(0, 1, 0.5)]);
        let f = resolve_flows(&r, &[0.1, 0.1], &[1.0, 2.0], &[0.4, 0.3], 1e-9).unwrap();
        assert_eq!(f.z, vec![0.4, 0.3]);
        assert!(f.active_empty.is_empty());
    }

    #[test]
    fn isolated_empty_cell_passes_its_inflow() {
        let r = RoutingMatrix::zeros(1);
        let f = resolve_flows(&r, &[0.2], &[0.0], &[0.7], 1e-9).unwrap();
        assert_eq!(f.z, vec![0.2]);
        assert_eq!(f.active_empty, vec![0]);
    }

    #[test]
    fn empty_cells_in_series() {
        let r = RoutingMatrix::from_entries(2, &[(0, 1, 1.0)]);
        let f = resolve_flows(&r, &[0.3, 0.0], &[0.0, 0.0], &[0.5, 0.5], 1e-9).unwrap();
        assert!(close(&f.z, &[0.3, 0.3], 1e-15), "{:?}", f.z);
    }

    #[test]
    fn overloaded_empty_cell_starts_filling() {
        // cell 1 receives 0.3 but can only serve 0.2; the downstream cell then
        // only sees the capped flow.
        let r = RoutingMatrix::from_entries(2, &[(0, 1, 1.0)]);
        let f = resolve_flows(&r, &[0.3, 0.0], &[0.0, 0.0], &[0.2, 0.5], 1e-9).unwrap();
        assert!(close(&f.z, &[0.2, 0.2], 1e-15), "{:?}", f.z);
        assert_eq!(f.active_empty, vec![1]);
    }

    fn single_cell() -> NetworkSpec {
        let mut b = NetworkBuilder::new();
        let o = b.node("o", None);
        let k = b.node("k", Some(1.0));
        let c = b.cell("c", o, k, 1.0);
        b.phase(k, &[c]);
        b.build().unwrap()
    }

    #[test]
    fn zero_state_without_inflow_stays_put() {
        let spec = single_cell();
        let out = step(&spec, &RoutingMatrix::zeros(1), &[0.0], &[0.0], &ControllerConfig::gpa(), 1e-3, 1e-9).unwrap();
        assert_eq!(out.x, vec![0.0]);
    }

    #[test]
    fn single_cell_euler_step() {
        let spec = single_cell();
        let dt = 1e-3;
        let out = step(&spec, &RoutingMatrix::zeros(1), &[0.5], &[0.5], &ControllerConfig::gpa(), dt, 1e-9).unwrap();
        assert!((out.zeta[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((out.x[0] - (0.5 + dt / 6.0)).abs() < 1e-15);
    }

    #[test]
    fn piece_boundaries_and_horizon_are_hit() {
        let spec = single_cell();
        let mut demand = DemandProfile::constant(vec![0.5], RoutingMatrix::zeros(1));
        demand.pieces.push(crate::network::DemandPiece {
            start: 0.10005,
            lambda: vec![0.25],
            routing: RoutingMatrix::zeros(1),
        });
        let mut opts = SimulationOptions::new(0.3);
        opts.dt = 1e-3;
        opts.sample_stride = 1;
        let traj = simulate(&spec, &demand, &ControllerConfig::gpa(), &[0.5], &opts).unwrap();
        assert!(traj.samples.iter().any(|s| s.t == 0.10005));
        assert_eq!(traj.last().t, 0.3);
        assert!(traj.samples.windows(2).all(|w| w[0].t < w[1].t));
        assert!((traj.integrals.exogenous[0] - (0.5 * 0.10005 + 0.25 * (0.3 - 0.10005))).abs() < 1e-12);
    }
}
