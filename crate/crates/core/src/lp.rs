//! Dense two-phase primal simplex with Bland's anti-cycling rule.
//!
//! Problems are `maximize c^T y` subject to linear rows and `y >= 0`. Sizes
//! here are tiny (tens of variables), so the tableau is kept dense and
//! reduced costs are recomputed from the basis every iteration.

/// Reduced-cost optimality tolerance.
pub const OPT_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-12;
const MAX_ITERATIONS: usize = 50_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Clone, Debug, Default)]
pub struct LinearProgram {
    /// Maximized objective coefficients; its length fixes the variable count.
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
    Unbounded,
    IterationLimit,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        Self {
            objective,
            constraints: Vec::new(),
        }
    }

    pub fn add(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) -> &mut Self {
        debug_assert_eq!(coeffs.len(), self.objective.len());
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
        self
    }

    pub fn solve(&self) -> LpOutcome {
        Tableau::build(self).run(&self.objective)
    }
}

struct Tableau {
    /// `rows x (cols + 1)`, last column is the right-hand side.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    n_orig: usize,
    /// Columns at or beyond this index are artificial.
    first_artificial: usize,
    cols: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let n = lp.objective.len();
        let rows: Vec<(Vec<f64>, Relation, f64)> = lp
            .constraints
            .iter()
            .map(|c| {
                if c.rhs < 0.0 {
                    let flipped = match c.relation {
                        Relation::Le => Relation::Ge,
                        Relation::Ge => Relation::Le,
                        Relation::Eq => Relation::Eq,
                    };
                    (c.coeffs.iter().map(|v| -v).collect(), flipped, -c.rhs)
                } else {
                    (c.coeffs.clone(), c.relation, c.rhs)
                }
            })
            .collect();
        let n_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
        let n_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
        let cols = n + n_slack + n_art;
        let first_artificial = n + n_slack;
        let mut t = Vec::with_capacity(rows.len());
        let mut basis = Vec::with_capacity(rows.len());
        let (mut s, mut a) = (n, first_artificial);
        for (coeffs, rel, rhs) in rows {
            let mut row = vec![0.0; cols + 1];
            row[..n].copy_from_slice(&coeffs);
            row[cols] = rhs;
            match rel {
                Relation::Le => {
                    row[s] = 1.0;
                    basis.push(s);
                    s += 1;
                }
                Relation::Ge => {
                    row[s] = -1.0;
                    s += 1;
                    row[a] = 1.0;
                    basis.push(a);
                    a += 1;
                }
                Relation::Eq => {
                    row[a] = 1.0;
                    basis.push(a);
                    a += 1;
                }
            }
            t.push(row);
        }
        Self {
            t,
            basis,
            n_orig: n,
            first_artificial,
            cols,
        }
    }

    fn run(mut self, objective: &[f64]) -> LpOutcome {
        if self.first_artificial < self.cols {
            let mut phase1 = vec![0.0; self.cols];
            for c in phase1.iter_mut().skip(self.first_artificial) {
                *c = -1.0;
            }
            match self.optimize(&phase1, self.cols) {
                Ok(()) => {}
                Err(outcome) => return outcome,
            }
            let infeasibility: f64 = self
                .basis
                .iter()
                .zip(&self.t)
                .filter(|(&b, _)| b >= self.first_artificial)
                .map(|(_, row)| row[self.cols])
                .sum();
            if infeasibility > OPT_TOL {
                return LpOutcome::Infeasible;
            }
            self.drive_out_artificials();
        }
        let mut cost = vec![0.0; self.cols];
        cost[..self.n_orig].copy_from_slice(objective);
        if let Err(outcome) = self.optimize(&cost, self.first_artificial) {
            return outcome;
        }
        let mut x = vec![0.0; self.n_orig];
        for (row, &b) in self.t.iter().zip(&self.basis) {
            if b < self.n_orig {
                x[b] = row[self.cols].max(0.0);
            }
        }
        let value = x.iter().zip(objective).map(|(a, b)| a * b).sum();
        LpOutcome::Optimal(LpSolution { x, value })
    }

    /// Primal simplex on `cost` using only columns below `allowed`.
    fn optimize(&mut self, cost: &[f64], allowed: usize) -> Result<(), LpOutcome> {
        for _ in 0..MAX_ITERATIONS {
            // Bland: lowest-index column with positive reduced cost enters.
            let entering = (0..allowed).find(|&j| {
                if self.basis.contains(&j) {
                    return false;
                }
                let d = cost[j]
                    - self
                        .t
                        .iter()
                        .zip(&self.basis)
                        .map(|(row, &b)| cost[b] * row[j])
                        .sum::<f64>();
                d > OPT_TOL
            });
            let Some(j) = entering else {
                return Ok(());
            };
            // Ratio test, ties to the lowest basic variable index.
            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.t.iter().enumerate() {
                if row[j] > PIVOT_TOL {
                    let ratio = row[self.cols] / row[j];
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - PIVOT_TOL
                                || (ratio <= lr + PIVOT_TOL && self.basis[i] < self.basis[li])
                            {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let Some((i, _)) = leave else {
                return Err(LpOutcome::Unbounded);
            };
            self.pivot(i, j);
        }
        Err(LpOutcome::IterationLimit)
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[r][c];
        for v in self.t[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pr) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pr;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// After phase one, swap zero-level artificials out of the basis; rows
    /// where that is impossible are redundant and dropped.
    fn drive_out_artificials(&mut self) {
        let mut i = 0;
        while i < self.t.len() {
            if self.basis[i] >= self.first_artificial {
                let col = (0..self.first_artificial).find(|&j| self.t[i][j].abs() > 1e-9);
                match col {
                    Some(j) => {
                        self.pivot(i, j);
                        i += 1;
                    }
                    None => {
                        self.t.remove(i);
                        self.basis.remove(i);
                    }
                }
            } else {
                i += 1;
            }
        }
    }
}
