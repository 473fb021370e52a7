//! Feedback allocation policies: generalized proportional allocation (GPA),
//! MaxPressure, and fixed allocations.
//!
//! GPA picks, per node, the maximizer of
//! `sum_i x_i log (C P nu)_i + xi_k log(1 - 1^T nu)` over the local control
//! set. With orthogonal phases the maximizer has a closed form; otherwise it
//! is found numerically by [`gpa_node`].

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{ControlAllocation, NetworkSpec, RoutingMatrix};

pub const DEFAULT_EPSILON_REG: f64 = 1e-9;
pub const DEFAULT_SOLVER_TOL: f64 = 1e-10;
pub const MAX_SOLVER_ITERATIONS: usize = 10_000;
const ARMIJO: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    Gpa,
    MaxPressure,
    Static(ControlAllocation),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ControllerConfig {
    pub kind: ControllerKind,
    /// Added to every volume before the numerical GPA solve, which selects
    /// one element of the optimizer set at boundary states.
    pub epsilon_reg: f64,
    /// Projected-gradient norm at which the GPA solver stops.
    pub solver_tol: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self::gpa()
    }
}

impl ControllerConfig {
    pub fn gpa() -> Self {
        Self {
            kind: ControllerKind::Gpa,
            epsilon_reg: DEFAULT_EPSILON_REG,
            solver_tol: DEFAULT_SOLVER_TOL,
        }
    }

    pub fn max_pressure() -> Self {
        Self {
            kind: ControllerKind::MaxPressure,
            ..Self::gpa()
        }
    }

    pub fn fixed(u: ControlAllocation) -> Self {
        Self {
            kind: ControllerKind::Static(u),
            ..Self::gpa()
        }
    }

    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        if !(self.epsilon_reg >= 0.0) || !(self.solver_tol > 0.0) {
            return Err(Error::NotApplicable(format!(
                "controller needs epsilon_reg >= 0 and solver_tol > 0, got {} and {}",
                self.epsilon_reg, self.solver_tol
            )));
        }
        if let ControllerKind::Static(u) = &self.kind {
            if !u.matches_shape(spec) {
                return Err(Error::Dimension(
                    "static allocation does not match the phases of the network".into(),
                ));
            }
            if !u.is_feasible(1e-12) {
                return Err(Error::NotApplicable(
                    "static allocation is outside the control set".into(),
                ));
            }
        }
        Ok(())
    }

    /// Allocation at state `x`. GPA uses the closed form at orthogonal nodes
    /// and the numerical solver elsewhere.
    pub fn allocate(
        &self,
        spec: &NetworkSpec,
        x: &[f64],
        routing: &RoutingMatrix,
    ) -> Result<ControlAllocation> {
        match &self.kind {
            ControllerKind::Gpa => {
                let mut per_node = Vec::with_capacity(spec.num_nodes());
                for k in 0..spec.num_nodes() {
                    if spec.node_is_orthogonal(k) {
                        per_node.push(gpa_node_orthogonal(spec, k, x));
                    } else {
                        per_node.push(gpa_node(spec, k, x, self.epsilon_reg, self.solver_tol)?);
                    }
                }
                Ok(ControlAllocation { per_node })
            }
            ControllerKind::MaxPressure => Ok(max_pressure(spec, x, routing)),
            ControllerKind::Static(u) => Ok(u.clone()),
        }
    }
}

/// Closed-form GPA for one node with orthogonal phases:
/// `u_p = (sum of x over phase p) / (xi_k + sum of x over incoming cells)`.
pub fn gpa_node_orthogonal(spec: &NetworkSpec, k: usize, x: &[f64]) -> Vec<f64> {
    let phases = spec.node_phases(k);
    if phases.is_empty() {
        return Vec::new();
    }
    let total: f64 = spec.incoming(k).iter().map(|&i| x[i]).sum();
    let denom = spec.xi(k) + total;
    phases
        .iter()
        .map(|p| p.iter().map(|&i| x[i]).sum::<f64>() / denom)
        .collect()
}

/// Closed-form GPA over the whole network. Only the GPA maximizer when
/// every node has orthogonal phases.
pub fn gpa_orthogonal(spec: &NetworkSpec, x: &[f64]) -> ControlAllocation {
    ControlAllocation {
        per_node: (0..spec.num_nodes())
            .map(|k| gpa_node_orthogonal(spec, k, x))
            .collect(),
    }
}

/// Numerical GPA at every node, orthogonal or not.
pub fn gpa_general(
    spec: &NetworkSpec,
    x: &[f64],
    cfg: &ControllerConfig,
) -> Result<ControlAllocation> {
    let per_node = (0..spec.num_nodes())
        .map(|k| gpa_node(spec, k, x, cfg.epsilon_reg, cfg.solver_tol))
        .collect::<Result<_>>()?;
    Ok(ControlAllocation { per_node })
}

/// Local GPA problem at one node: rows are incoming cells, columns phases.
#[derive(Clone, Debug)]
pub struct NodeProblem {
    /// `C^(k) P^(k)`, one row per incoming cell.
    pub service: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub xi: f64,
}

impl NodeProblem {
    pub fn new(spec: &NetworkSpec, k: usize, x: &[f64], epsilon_reg: f64) -> Self {
        let phases = spec.node_phases(k);
        let service = spec
            .incoming(k)
            .iter()
            .map(|&i| {
                let c = spec.cells()[i].capacity;
                phases
                    .iter()
                    .map(|p| if p.contains(&i) { c } else { 0.0 })
                    .collect()
            })
            .collect();
        let weights = spec.incoming(k).iter().map(|&i| x[i] + epsilon_reg).collect();
        Self {
            service,
            weights,
            xi: spec.xi(k),
        }
    }

    pub fn num_phases(&self) -> usize {
        self.service.first().map_or(0, Vec::len)
    }

    fn served(&self, nu: &[f64]) -> Vec<f64> {
        self.service
            .iter()
            .map(|row| row.iter().zip(nu).map(|(a, v)| a * v).sum())
            .collect()
    }

    /// Objective value, or `None` outside the domain.
    pub fn value(&self, nu: &[f64]) -> Option<f64> {
        if nu.iter().any(|&v| v < 0.0) {
            return None;
        }
        let slack = 1.0 - nu.iter().sum::<f64>();
        if !(slack > 0.0) {
            return None;
        }
        let mut f = self.xi * slack.ln();
        for (w, z) in self.weights.iter().zip(self.served(nu)) {
            if *w > 0.0 {
                if !(z > 0.0) {
                    return None;
                }
                f += w * z.ln();
            }
        }
        Some(f)
    }

    pub fn gradient(&self, nu: &[f64]) -> Vec<f64> {
        let slack = 1.0 - nu.iter().sum::<f64>();
        let mut g = vec![-self.xi / slack; nu.len()];
        for ((row, w), z) in self.service.iter().zip(&self.weights).zip(self.served(nu)) {
            if *w > 0.0 {
                for (gq, a) in g.iter_mut().zip(row) {
                    *gq += w * a / z;
                }
            }
        }
        g
    }

    /// Negated Hessian (positive semidefinite).
    fn neg_hessian(&self, nu: &[f64]) -> DMatrix<f64> {
        let p = nu.len();
        let slack = 1.0 - nu.iter().sum::<f64>();
        let mut h = DMatrix::from_element(p, p, self.xi / (slack * slack));
        for ((row, w), z) in self.service.iter().zip(&self.weights).zip(self.served(nu)) {
            if *w > 0.0 {
                let s = w / (z * z);
                for q in 0..p {
                    for r in 0..p {
                        h[(q, r)] += s * row[q] * row[r];
                    }
                }
            }
        }
        h
    }
}

fn projected_gradient(nu: &[f64], g: &[f64]) -> Vec<f64> {
    nu.iter()
        .zip(g)
        .map(|(&v, &gq)| if v > 0.0 { gq } else { gq.max(0.0) })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Numerical GPA at node `k`.
///
/// Feasible-start ascent from `nu = 1/(2 p)` on the volumes `x + epsilon_reg`.
/// Each iteration takes a projected Newton direction (free phases get the
/// Newton step, phases pinned at zero a scaled gradient step), followed by a
/// halving line search along the projection arc with Armijo constant `1e-4`.
/// Stops once the projected-gradient norm is at most `tol`.
pub fn gpa_node(
    spec: &NetworkSpec,
    k: usize,
    x: &[f64],
    epsilon_reg: f64,
    tol: f64,
) -> Result<Vec<f64>> {
    let problem = NodeProblem::new(spec, k, x, epsilon_reg);
    solve_node(&problem, tol).map_err(|(iterations, gradient)| Error::SolverStall {
        node: spec.nodes()[k].clone(),
        iterations,
        gradient,
    })
}

/// Solver core; the error carries the iteration count and the final
/// projected-gradient norm.
pub fn solve_node(problem: &NodeProblem, tol: f64) -> std::result::Result<Vec<f64>, (usize, f64)> {
    let p = problem.num_phases();
    if p == 0 {
        return Ok(Vec::new());
    }
    let mut nu = vec![1.0 / (2.0 * p as f64); p];
    let Some(mut f) = problem.value(&nu) else {
        return Err((0, f64::INFINITY));
    };
    let mut pg_norm = f64::INFINITY;
    for iter in 0..MAX_SOLVER_ITERATIONS {
        let g = problem.gradient(&nu);
        pg_norm = norm(&projected_gradient(&nu, &g));
        if pg_norm <= tol {
            return Ok(nu);
        }
        let h = problem.neg_hessian(&nu);
        let step_probe: Vec<f64> = nu
            .iter()
            .zip(&g)
            .enumerate()
            .map(|(q, (&v, &gq))| v - (v + gq / h[(q, q)]).max(0.0))
            .collect();
        let eps_active = norm(&step_probe).min(1e-6);
        let active: Vec<bool> = nu
            .iter()
            .zip(&g)
            .map(|(&v, &gq)| v <= eps_active && gq < 0.0)
            .collect();
        let newton = newton_direction(&h, &g, &active);
        let gradient_dir: Vec<f64> = (0..p).map(|q| g[q] / h[(q, q)]).collect();
        let accepted = line_search(problem, &nu, f, &g, pg_norm, &newton)
            .or_else(|| line_search(problem, &nu, f, &g, pg_norm, &gradient_dir));
        match accepted {
            Some((next, fnext)) => {
                nu = next;
                f = fnext;
            }
            None => return Err((iter + 1, pg_norm)),
        }
    }
    Err((MAX_SOLVER_ITERATIONS, pg_norm))
}

fn newton_direction(h: &DMatrix<f64>, g: &[f64], active: &[bool]) -> Vec<f64> {
    let p = g.len();
    let free: Vec<usize> = (0..p).filter(|&q| !active[q]).collect();
    let mut d: Vec<f64> = (0..p)
        .map(|q| if active[q] { g[q] / h[(q, q)] } else { 0.0 })
        .collect();
    if free.is_empty() {
        return d;
    }
    let m = free.len();
    let hf = DMatrix::from_fn(m, m, |a, b| h[(free[a], free[b])]);
    let rhs = nalgebra::DVector::from_iterator(m, free.iter().map(|&q| g[q]));
    let scale = (0..m).map(|a| hf[(a, a)]).fold(0.0f64, f64::max).max(1e-300);
    let mut mu = 0.0;
    loop {
        let shifted = &hf + DMatrix::identity(m, m) * mu;
        if let Some(chol) = shifted.cholesky() {
            let sol = chol.solve(&rhs);
            for (a, &q) in free.iter().enumerate() {
                d[q] = sol[a];
            }
            return d;
        }
        mu = if mu == 0.0 { 1e-12 * scale } else { mu * 100.0 };
    }
}

fn line_search(
    problem: &NodeProblem,
    nu: &[f64],
    f: f64,
    g: &[f64],
    pg_norm: f64,
    dir: &[f64],
) -> Option<(Vec<f64>, f64)> {
    let noise = 1e-14 * (1.0 + f.abs());
    let mut alpha = 1.0;
    while alpha > 1e-20 {
        let cand: Vec<f64> = nu
            .iter()
            .zip(dir)
            .map(|(&v, &d)| (v + alpha * d).max(0.0))
            .collect();
        if let Some(fc) = problem.value(&cand) {
            let ascent: f64 = g.iter().zip(cand.iter().zip(nu)).map(|(gq, (c, v))| gq * (c - v)).sum();
            if ascent > 0.0 && fc >= f + ARMIJO * ascent {
                return Some((cand, fc));
            }
            // Near the optimum the objective difference is below rounding;
            // accept steps that still shrink the projected gradient.
            if fc >= f - noise {
                let pg = norm(&projected_gradient(&cand, &problem.gradient(&cand)));
                if pg < pg_norm {
                    return Some((cand, fc));
                }
            }
        }
        alpha *= 0.5;
    }
    None
}

/// Phase pressures `s_p = sum_{i in p} (x_i - sum_j R_ij x_j)` at node `k`.
pub fn phase_pressures(spec: &NetworkSpec, k: usize, x: &[f64], routing: &RoutingMatrix) -> Vec<f64> {
    spec.node_phases(k)
        .iter()
        .map(|p| {
            p.iter()
                .map(|&i| {
                    let downstream: f64 = routing.row(i).iter().zip(x).map(|(r, v)| r * v).sum();
                    x[i] - downstream
                })
                .sum()
        })
        .collect()
}

/// MaxPressure: full time to the first phase of maximal pressure when that
/// pressure is positive, idle otherwise.
pub fn max_pressure(spec: &NetworkSpec, x: &[f64], routing: &RoutingMatrix) -> ControlAllocation {
    let per_node = (0..spec.num_nodes())
        .map(|k| {
            let s = phase_pressures(spec, k, x, routing);
            let mut u = vec![0.0; s.len()];
            let mut best: Option<usize> = None;
            for (q, &v) in s.iter().enumerate() {
                if best.map_or(true, |b| v > s[b]) {
                    best = Some(q);
                }
            }
            if let Some(b) = best {
                if s[b] > 0.0 {
                    u[b] = 1.0;
                }
            }
            u
        })
        .collect();
    ControlAllocation { per_node }
}

/// Service rates `zeta = C P u`.
pub fn service_rate(spec: &NetworkSpec, u: &ControlAllocation) -> Vec<f64> {
    let mut out = vec![0.0; spec.num_cells()];
    for (k, uk) in u.per_node.iter().enumerate() {
        for (q, phase) in spec.node_phases(k).iter().enumerate() {
            for &i in phase {
                out[i] += uk[q];
            }
        }
    }
    for (o, c) in out.iter_mut().zip(spec.cells()) {
        *o *= c.capacity;
    }
    out
}
