//! Lyapunov diagnostics for the GPA closed loop.
//!
//! `V(x) = sum_i x_i log(zeta_i / a_i) + sum_k xi_k log((1 - 1^T u^(k)) / b_k)`
//! evaluated at the GPA allocation, its gradient `w_i = log(zeta_i / a_i)`,
//! and the drift `W` along the reduced network obtained by eliminating
//! empty cells.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::controllers::{service_rate, ControllerConfig};
use crate::error::{Error, Result};
use crate::graph::AggregateDemand;
use crate::linalg::{identity_minus_rt, lu_solve, rt_block};
use crate::network::{ControlAllocation, NetworkSpec, RoutingMatrix};
use crate::stability::{check_necessary_condition, node_slack, Verdict};

#[derive(Clone, Debug, Serialize)]
pub struct LyapunovContext {
    pub a: AggregateDemand,
    /// Spare time fraction per node; 1 at nodes without incoming cells.
    pub b: Vec<f64>,
    pub margin: f64,
}

/// Aggregate demand and node slacks, provided the demand is Interior.
pub fn build_context(spec: &NetworkSpec, lambda: &[f64], routing: &RoutingMatrix) -> Result<LyapunovContext> {
    let (a, cert) = check_necessary_condition(spec, lambda, routing)?;
    if cert.verdict != Verdict::Interior {
        return Err(Error::NotInterior { margin: cert.margin });
    }
    let b = (0..spec.num_nodes())
        .map(|k| node_slack(spec, &a.a, k))
        .collect::<Result<Vec<_>>>()?;
    if let Some(k) = b.iter().position(|&bk| !(bk > 0.0)) {
        return Err(Error::NodeInfeasible {
            node: spec.nodes()[k].clone(),
            required: 1.0 - b[k],
        });
    }
    Ok(LyapunovContext {
        a,
        b,
        margin: cert.margin,
    })
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// `H~(x, u)` with the convention `0 log(.) = 0`.
pub fn h_tilde(spec: &NetworkSpec, ctx: &LyapunovContext, x: &[f64], u: &ControlAllocation) -> f64 {
    let zeta = service_rate(spec, u);
    let mut h: f64 = (0..x.len()).map(|i| xlogy(x[i], zeta[i] / ctx.a.a[i])).sum();
    for k in spec.controlled_nodes() {
        let spare = 1.0 - u.per_node[k].iter().sum::<f64>();
        h += spec.xi(k) * (spare / ctx.b[k]).ln();
    }
    h
}

fn gpa_allocation(spec: &NetworkSpec, x: &[f64]) -> Result<ControlAllocation> {
    ControllerConfig::gpa().allocate(spec, x, &RoutingMatrix::zeros(spec.num_cells()))
}

/// `V(x)`, using the same GPA selection as the controller.
pub fn v_value(spec: &NetworkSpec, ctx: &LyapunovContext, x: &[f64]) -> Result<f64> {
    let u = gpa_allocation(spec, x)?;
    Ok(h_tilde(spec, ctx, x, &u))
}

/// `w_i = log(zeta_i / a_i)` at the GPA allocation.
pub fn gradient_w(spec: &NetworkSpec, ctx: &LyapunovContext, x: &[f64]) -> Result<Vec<f64>> {
    let zeta = service_rate(spec, &gpa_allocation(spec, x)?);
    Ok(log_ratio(&zeta, &ctx.a.a))
}

fn log_ratio(zeta: &[f64], a: &[f64]) -> Vec<f64> {
    zeta.iter().zip(a).map(|(z, ai)| (z / ai).ln()).collect()
}

/// The network seen by the non-empty cells `J` once the empty cells `I`
/// are eliminated.
#[derive(Clone, Debug)]
pub struct Reduction {
    pub empty: Vec<usize>,
    pub nonempty: Vec<usize>,
    /// `lambda_J + (R^T)_JI M^{-1} lambda_I` with `M = I - R^T_II`.
    pub lambda_tilde: Vec<f64>,
    /// `R~^T = R^T_JJ + (R^T)_JI M^{-1} (R^T)_IJ`, indexed over `J`.
    pub rt_tilde: DMatrix<f64>,
}

fn partition(x: &[f64], threshold: f64) -> (Vec<usize>, Vec<usize>) {
    (0..x.len()).partition(|&i| x[i] <= threshold)
}

/// `M^{-1} B` column by column.
fn solve_columns(m: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(b.nrows(), b.ncols());
    for c in 0..b.ncols() {
        let col: Vec<f64> = b.column(c).iter().copied().collect();
        let sol = lu_solve(m.clone(), &col).ok_or(Error::SingularSubsystem { size: m.nrows() })?;
        out.set_column(c, &DVector::from_vec(sol));
    }
    Ok(out)
}

fn reduced_routing(routing: &RoutingMatrix, empty: &[usize], nonempty: &[usize]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let rt_jj = rt_block(routing, nonempty, nonempty);
    let rt_ji = rt_block(routing, nonempty, empty);
    if empty.is_empty() {
        return Ok((rt_jj, rt_ji));
    }
    let m = identity_minus_rt(routing, empty);
    let rt_ij = rt_block(routing, empty, nonempty);
    let rt_tilde = &rt_jj + &rt_ji * solve_columns(&m, &rt_ij)?;
    Ok((rt_tilde, rt_ji))
}

pub fn reduce(routing: &RoutingMatrix, lambda: &[f64], x: &[f64], threshold: f64) -> Result<Reduction> {
    let (empty, nonempty) = partition(x, threshold);
    let (rt_tilde, rt_ji) = reduced_routing(routing, &empty, &nonempty)?;
    let mut lambda_tilde: Vec<f64> = nonempty.iter().map(|&j| lambda[j]).collect();
    if !empty.is_empty() {
        let lambda_i: Vec<f64> = empty.iter().map(|&i| lambda[i]).collect();
        let through = lu_solve(identity_minus_rt(routing, &empty), &lambda_i)
            .ok_or(Error::SingularSubsystem { size: empty.len() })?;
        let extra = &rt_ji * DVector::from_vec(through);
        for (l, e) in lambda_tilde.iter_mut().zip(extra.iter()) {
            *l += e;
        }
    }
    Ok(Reduction {
        empty,
        nonempty,
        lambda_tilde,
        rt_tilde,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DriftReport {
    pub v: f64,
    /// The drift `W(x)`.
    pub w_drift: f64,
    /// `log(zeta_i / a_i)` for every cell.
    pub w: Vec<f64>,
    pub zeta_gap: Vec<f64>,
    /// Distance-like defect from the limit set `{zeta >= a, x^T (zeta - a) >= 0}`:
    /// `max(||[a - zeta]_+||_inf, [-x^T (zeta - a)]_+)`.
    pub x_star_residual: f64,
    /// `max |zeta_i - a_i|` over cells above the empty threshold.
    pub served_gap: f64,
    pub empty: Vec<usize>,
}

/// `V`, `W`, `w` and the limit-set residual at `x`.
pub fn drift_w(
    spec: &NetworkSpec,
    ctx: &LyapunovContext,
    routing: &RoutingMatrix,
    lambda: &[f64],
    x: &[f64],
    threshold: f64,
) -> Result<DriftReport> {
    let u = gpa_allocation(spec, x)?;
    let v = h_tilde(spec, ctx, x, &u);
    let zeta = service_rate(spec, &u);
    let a = &ctx.a.a;
    let w = log_ratio(&zeta, a);
    let red = reduce(routing, lambda, x, threshold)?;
    let zeta_j = DVector::from_iterator(red.nonempty.len(), red.nonempty.iter().map(|&j| zeta[j]));
    let nj = red.nonempty.len();
    let leaving = (DMatrix::identity(nj, nj) - &red.rt_tilde) * &zeta_j;
    let w_drift = -red
        .nonempty
        .iter()
        .enumerate()
        .map(|(b, &j)| w[j] * (red.lambda_tilde[b] - leaving[b]))
        .sum::<f64>();
    let zeta_gap: Vec<f64> = zeta.iter().zip(a).map(|(z, ai)| z - ai).collect();
    let shortfall = zeta_gap.iter().fold(0.0f64, |m, g| m.max(-g));
    let weighted: f64 = x.iter().zip(&zeta_gap).map(|(xi, g)| xi * g).sum();
    let served_gap = red.nonempty.iter().fold(0.0f64, |m, &j| m.max(zeta_gap[j].abs()));
    Ok(DriftReport {
        v,
        w_drift,
        w,
        zeta_gap,
        x_star_residual: shortfall.max(-weighted),
        served_gap,
        empty: red.empty,
    })
}

/// `sum_j lambda~_j F_j` with
/// `F = (I - R~)^{-1} diag((I - R~) w_J) (e^{w_J} - 1)`.
///
/// The reduced inflow is taken as `(I - R~^T) a_J`, so this evaluation does
/// not go through `lambda` at all.
pub fn oracle_f(
    spec: &NetworkSpec,
    ctx: &LyapunovContext,
    routing: &RoutingMatrix,
    x: &[f64],
    threshold: f64,
) -> Result<f64> {
    let w = gradient_w(spec, ctx, x)?;
    let (empty, nonempty) = partition(x, threshold);
    let (rt_tilde, _) = reduced_routing(routing, &empty, &nonempty)?;
    let nj = nonempty.len();
    if nj == 0 {
        return Ok(0.0);
    }
    let w_j = DVector::from_iterator(nj, nonempty.iter().map(|&j| w[j]));
    let a_j = DVector::from_iterator(nj, nonempty.iter().map(|&j| ctx.a.a[j]));
    let id = DMatrix::identity(nj, nj);
    let r_tilde = rt_tilde.transpose();
    let lambda_tilde = (&id - &rt_tilde) * a_j;
    let scaled = ((&id - &r_tilde) * &w_j).component_mul(&w_j.map(f64::exp_m1));
    let f = lu_solve(&id - &r_tilde, scaled.as_slice()).ok_or(Error::SingularSubsystem { size: nj })?;
    Ok(lambda_tilde.iter().zip(&f).map(|(l, fj)| l * fj).sum())
}

/// Unique equilibrium when every phase serves exactly one cell: per node,
/// `(C^(k) - a^(k) 1^T) x^(k) = xi_k a^(k)`.
pub fn equilibrium_single_cell_phases(spec: &NetworkSpec, ctx: &LyapunovContext) -> Result<Vec<f64>> {
    if !spec.has_single_cell_phases() || !spec.is_orthogonal() {
        return Err(Error::NotApplicable(
            "equilibrium formula needs every cell to have exactly one phase of its own".into(),
        ));
    }
    let a = &ctx.a.a;
    let mut x = vec![0.0; spec.num_cells()];
    for k in spec.controlled_nodes() {
        let cells = spec.incoming(k);
        let n = cells.len();
        let m = DMatrix::from_fn(n, n, |r, c| {
            let diag = if r == c { spec.cells()[cells[r]].capacity } else { 0.0 };
            diag - a[cells[r]]
        });
        let rhs: Vec<f64> = cells.iter().map(|&i| spec.xi(k) * a[i]).collect();
        let sol = lu_solve(m, &rhs).ok_or_else(|| {
            Error::SingularSystem(format!("equilibrium system at node {} is singular", spec.nodes()[k]))
        })?;
        for (&i, v) in cells.iter().zip(sol) {
            x[i] = v;
        }
    }
    Ok(x)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WebsterReport {
    /// Time fraction left unallocated at the GPA equilibrium.
    pub lost_fraction: f64,
    /// `(1.5 L + 5) / (1 - rho_1 - rho_2)`.
    pub webster_t: f64,
    pub equilibrium: [f64; 2],
}

/// Two single-cell phases with unit capacity and clearance; compares the GPA
/// equilibrium's lost time with Webster's cycle length.
pub fn webster_check(rho1: f64, rho2: f64, lost_time: f64) -> Result<WebsterReport> {
    let total = rho1 + rho2;
    if total >= 1.0 {
        return Err(Error::Unstable(total));
    }
    if !(rho1 >= 0.0 && rho2 >= 0.0 && lost_time > 0.0) {
        return Err(Error::NotApplicable(format!(
            "need rho >= 0 and L > 0, got rho = ({rho1}, {rho2}), L = {lost_time}"
        )));
    }
    let xi = 1.0;
    let spec = crate::network::two_phase_junction(xi, [1.0, 1.0])?;
    let lambda = vec![rho1, rho2];
    let ctx = build_context(&spec, &lambda, &RoutingMatrix::zeros(2))?;
    let x = equilibrium_single_cell_phases(&spec, &ctx)?;
    Ok(WebsterReport {
        lost_fraction: xi / (x[0] + x[1] + xi),
        webster_t: (1.5 * lost_time + 5.0) / (1.0 - total),
        equilibrium: [x[0], x[1]],
    })
}
