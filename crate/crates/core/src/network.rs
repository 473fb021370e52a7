//! Static network description: cells, nodes, local phases, routing and demand.
//!
//! Cells are indexed by insertion order and every vector or matrix in the
//! crate uses that ordering. Phases are stored per node; the global phase
//! index runs over nodes in order and then over each node's local phases.
//! Exit flow is never a cell of its own: it is the row deficit
//! `1 - sum_j R_ij` of the routing matrix.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub id: String,
    pub tail: usize,
    pub head: usize,
    /// Outflow capacity, flow units per time.
    pub capacity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    nodes: Vec<String>,
    cells: Vec<Cell>,
    /// `phases[k][q]` lists the cells activated by local phase `q` of node `k`.
    phases: Vec<Vec<Vec<usize>>>,
    /// Clearance parameter per node. Nodes without incoming cells may omit it.
    clearance: Vec<Option<f64>>,
    incoming: Vec<Vec<usize>>,
    phase_offset: Vec<usize>,
}

impl NetworkSpec {
    /// Assembles a spec from index-resolved parts. Only structural consistency
    /// (lengths, index ranges) is checked here; modelling invariants are
    /// reported by [`validate`].
    pub fn new(
        nodes: Vec<String>,
        cells: Vec<Cell>,
        phases: Vec<Vec<Vec<usize>>>,
        clearance: Vec<Option<f64>>,
    ) -> Result<Self> {
        let m = nodes.len();
        if phases.len() != m || clearance.len() != m {
            return Err(Error::Dimension(format!(
                "{m} nodes but {} phase lists and {} clearance entries",
                phases.len(),
                clearance.len()
            )));
        }
        for c in &cells {
            if c.tail >= m || c.head >= m {
                return Err(Error::Dimension(format!("cell {} references a missing node", c.id)));
            }
        }
        let n = cells.len();
        if phases.iter().flatten().flatten().any(|&i| i >= n) {
            return Err(Error::Dimension("phase references a missing cell".into()));
        }
        let mut incoming = vec![Vec::new(); m];
        for (i, c) in cells.iter().enumerate() {
            incoming[c.head].push(i);
        }
        let mut phase_offset = Vec::with_capacity(m + 1);
        let mut acc = 0;
        for p in &phases {
            phase_offset.push(acc);
            acc += p.len();
        }
        phase_offset.push(acc);
        Ok(Self {
            nodes,
            cells,
            phases,
            clearance,
            incoming,
            phase_offset,
        })
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Total number of phases over all nodes.
    pub fn num_phases(&self) -> usize {
        self.phase_offset[self.nodes.len()]
    }

    pub fn node_phases(&self, k: usize) -> &[Vec<usize>] {
        &self.phases[k]
    }

    /// Global index of local phase `q` at node `k`.
    pub fn phase_index(&self, k: usize, q: usize) -> usize {
        self.phase_offset[k] + q
    }

    /// Cells whose head is node `k`, in cell order.
    pub fn incoming(&self, k: usize) -> &[usize] {
        &self.incoming[k]
    }

    pub fn clearance(&self, k: usize) -> Option<f64> {
        self.clearance[k]
    }

    /// Clearance of a node that has incoming cells; only meaningful on a
    /// validated spec.
    pub fn xi(&self, k: usize) -> f64 {
        self.clearance[k].unwrap_or(f64::NAN)
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.capacity).collect()
    }

    pub fn cell_index(&self, id: &str) -> Option<usize> {
        self.cells.iter().position(|c| c.id == id)
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == id)
    }

    /// Number of local phases containing each cell (`P 1`).
    pub fn phase_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.cells.len()];
        for &i in self.phases.iter().flatten().flatten() {
            counts[i] += 1;
        }
        counts
    }

    pub fn node_is_orthogonal(&self, k: usize) -> bool {
        let mut counts = vec![0usize; self.cells.len()];
        for &i in self.phases[k].iter().flatten() {
            counts[i] += 1;
        }
        self.incoming[k].iter().all(|&i| counts[i] == 1)
    }

    /// True iff every cell belongs to exactly one local phase.
    pub fn is_orthogonal(&self) -> bool {
        self.phase_counts().iter().all(|&c| c == 1)
    }

    /// True iff every phase consists of a single cell.
    pub fn has_single_cell_phases(&self) -> bool {
        self.phases.iter().flatten().all(|p| p.len() == 1)
    }

    /// Nodes that actually carry a control (at least one incoming cell).
    pub fn controlled_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&k| !self.incoming[k].is_empty())
    }
}

/// Incremental construction by identifier, handy for small hand-written
/// networks and tests.
#[derive(Default)]
pub struct NetworkBuilder {
    nodes: Vec<String>,
    cells: Vec<Cell>,
    phases: Vec<Vec<Vec<usize>>>,
    clearance: Vec<Option<f64>>,
}

impl NetworkBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node(&mut self, id: &str, clearance: Option<f64>) -> usize {
        self.nodes.push(id.to_string());
        self.phases.push(Vec::new());
        self.clearance.push(clearance);
        self.nodes.len() - 1
    }

    pub fn cell(&mut self, id: &str, tail: usize, head: usize, capacity: f64) -> usize {
        self.cells.push(Cell {
            id: id.to_string(),
            tail,
            head,
            capacity,
        });
        self.cells.len() - 1
    }

    pub fn phase(&mut self, node: usize, cells: &[usize]) -> &mut Self {
        self.phases[node].push(cells.to_vec());
        self
    }

    pub fn build(self) -> Result<NetworkSpec> {
        NetworkSpec::new(self.nodes, self.cells, self.phases, self.clearance)
    }
}

/// Dense `n x n` routing matrix. `R_ij` is the fraction of the outflow of
/// cell `i` that enters cell `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutingMatrix {
    n: usize,
    data: Vec<f64>,
}

impl RoutingMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_entries(n: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut r = Self::zeros(n);
        for &(i, j, f) in entries {
            r.set(i, j, f);
        }
        r
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.n + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).iter().sum()
    }

    /// Fraction of the outflow of `i` that leaves the network.
    pub fn exit_fraction(&self, i: usize) -> f64 {
        1.0 - self.row_sum(i)
    }

    /// Nonzero entries in row-major order.
    pub fn entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in 0..self.n {
                let v = self.get(i, j);
                if v != 0.0 {
                    out.push((i, j, v));
                }
            }
        }
        out
    }

    /// `R^T z`, i.e. the routed inflow into every cell.
    pub fn transpose_mul(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (i, &zi) in z.iter().enumerate() {
            if zi == 0.0 {
                continue;
            }
            for (o, &r) in out.iter_mut().zip(self.row(i)) {
                *o += r * zi;
            }
        }
        out
    }

    /// `R x`.
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).iter().zip(x).map(|(r, v)| r * v).sum())
            .collect()
    }
}

/// One constant piece of a demand profile, active on `[start, next start)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DemandPiece {
    pub start: f64,
    pub lambda: Vec<f64>,
    pub routing: RoutingMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemandProfile {
    pub pieces: Vec<DemandPiece>,
}

impl DemandProfile {
    pub fn constant(lambda: Vec<f64>, routing: RoutingMatrix) -> Self {
        Self {
            pieces: vec![DemandPiece {
                start: 0.0,
                lambda,
                routing,
            }],
        }
    }

    /// Index of the piece active at time `t`.
    pub fn piece_index_at(&self, t: f64) -> usize {
        self.pieces
            .iter()
            .rposition(|p| p.start <= t)
            .unwrap_or(0)
    }

    pub fn piece_at(&self, t: f64) -> &DemandPiece {
        &self.pieces[self.piece_index_at(t)]
    }

    /// End of piece `idx` (infinite for the last piece).
    pub fn piece_end(&self, idx: usize) -> f64 {
        self.pieces
            .get(idx + 1)
            .map_or(f64::INFINITY, |p| p.start)
    }

    /// Same profile with every inflow multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            pieces: self
                .pieces
                .iter()
                .map(|p| DemandPiece {
                    start: p.start,
                    lambda: p.lambda.iter().map(|l| l * factor).collect(),
                    routing: p.routing.clone(),
                })
                .collect(),
        }
    }
}

/// Per-node phase time fractions `u^(k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlAllocation {
    pub per_node: Vec<Vec<f64>>,
}

impl ControlAllocation {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self {
            per_node: (0..spec.num_nodes())
                .map(|k| vec![0.0; spec.node_phases(k).len()])
                .collect(),
        }
    }

    /// Stacked vector in global phase order.
    pub fn flat(&self) -> Vec<f64> {
        self.per_node.iter().flatten().copied().collect()
    }

    pub fn from_flat(spec: &NetworkSpec, flat: &[f64]) -> Self {
        Self {
            per_node: (0..spec.num_nodes())
                .map(|k| {
                    let lo = spec.phase_index(k, 0);
                    flat[lo..lo + spec.node_phases(k).len()].to_vec()
                })
                .collect(),
        }
    }

    /// Membership in `U`: nonnegative entries, each node summing to at most 1.
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.per_node.iter().all(|u| {
            u.iter().all(|&v| v >= -tol && v.is_finite()) && u.iter().sum::<f64>() <= 1.0 + tol
        })
    }

    pub fn matches_shape(&self, spec: &NetworkSpec) -> bool {
        self.per_node.len() == spec.num_nodes()
            && self
                .per_node
                .iter()
                .enumerate()
                .all(|(k, u)| u.len() == spec.node_phases(k).len())
    }
}

/// A junction `k` fed from a source node `o` by cells `1` and `2`, each
/// with a phase of its own.
pub fn two_phase_junction(xi: f64, capacity: [f64; 2]) -> Result<NetworkSpec> {
    let mut b = NetworkBuilder::new();
    let o = b.node("o", None);
    let k = b.node("k", Some(xi));
    let c1 = b.cell("1", o, k, capacity[0]);
    let c2 = b.cell("2", o, k, capacity[1]);
    b.phase(k, &[c1]).phase(k, &[c2]);
    b.build()
}

/// Same topology as [`two_phase_junction`] with both cells in one phase.
pub fn shared_phase_junction(xi: f64, capacity: [f64; 2]) -> Result<NetworkSpec> {
    let mut b = NetworkBuilder::new();
    let o = b.node("o", None);
    let k = b.node("k", Some(xi));
    let c1 = b.cell("1", o, k, capacity[0]);
    let c2 = b.cell("2", o, k, capacity[1]);
    b.phase(k, &[c1, c2]);
    b.build()
}

/// Binary `n x p` matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMatrix {
    pub rows: usize,
    pub cols: usize,
    data: Vec<u8>,
}

impl BinaryMatrix {
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.cols + j] != 0
    }

    pub fn row_sum(&self, i: usize) -> usize {
        self.data[i * self.cols..(i + 1) * self.cols]
            .iter()
            .map(|&b| b as usize)
            .sum()
    }
}

/// Global block-diagonal phase matrix `P`: entry `(i, q)` is set iff cell `i`
/// is activated by global phase `q`.
pub fn phase_matrix(spec: &NetworkSpec) -> BinaryMatrix {
    let rows = spec.num_cells();
    let cols = spec.num_phases();
    let mut data = vec![0u8; rows * cols];
    for k in 0..spec.num_nodes() {
        for (q, phase) in spec.node_phases(k).iter().enumerate() {
            let col = spec.phase_index(k, q);
            for &i in phase {
                data[i * cols + col] = 1;
            }
        }
    }
    BinaryMatrix { rows, cols, data }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    SelfLoop,
    Capacity,
    UncoveredCell,
    PhaseCell,
    EmptyPhase,
    Clearance,
    RoutingRange,
    RoutingTopology,
    RowSum,
    Dimension,
    DemandStart,
    NegativeInflow,
}

impl ViolationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationKind::SelfLoop => "self-loop",
            ViolationKind::Capacity => "capacity",
            ViolationKind::UncoveredCell => "uncovered-cell",
            ViolationKind::PhaseCell => "phase-cell",
            ViolationKind::EmptyPhase => "empty-phase",
            ViolationKind::Clearance => "clearance",
            ViolationKind::RoutingRange => "routing-range",
            ViolationKind::RoutingTopology => "routing-topology",
            ViolationKind::RowSum => "row-sum",
            ViolationKind::Dimension => "dimension",
            ViolationKind::DemandStart => "demand-start",
            ViolationKind::NegativeInflow => "negative-inflow",
        }
    }
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    fn push(&mut self, kind: ViolationKind, detail: String) {
        self.violations.push(Violation { kind, detail });
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::Validation(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  [{}] {}", v.kind, v.detail)?;
        }
        Ok(())
    }
}

const ROW_SUM_TOL: f64 = 1e-12;

/// Lists every violated invariant of the network and routing matrix.
pub fn validate(spec: &NetworkSpec, routing: &RoutingMatrix) -> ValidationReport {
    let mut report = ValidationReport::default();
    validate_spec_into(spec, &mut report);
    validate_routing_into(spec, routing, "", &mut report);
    report
}

/// Validates a demand profile against the network, including every piece's
/// routing matrix.
pub fn validate_demand(spec: &NetworkSpec, demand: &DemandProfile) -> ValidationReport {
    let mut report = ValidationReport::default();
    validate_spec_into(spec, &mut report);
    if demand.pieces.is_empty() {
        report.push(ViolationKind::DemandStart, "demand profile has no pieces".into());
        return report;
    }
    if demand.pieces[0].start != 0.0 {
        report.push(
            ViolationKind::DemandStart,
            format!("first piece starts at {} instead of 0", demand.pieces[0].start),
        );
    }
    for w in demand.pieces.windows(2) {
        if !(w[1].start > w[0].start) {
            report.push(
                ViolationKind::DemandStart,
                format!("piece start {} does not follow {}", w[1].start, w[0].start),
            );
        }
    }
    for (p, piece) in demand.pieces.iter().enumerate() {
        if piece.lambda.len() != spec.num_cells() {
            report.push(
                ViolationKind::Dimension,
                format!("piece {p}: inflow vector has {} entries", piece.lambda.len()),
            );
        }
        for (i, &l) in piece.lambda.iter().enumerate() {
            if !(l >= 0.0 && l.is_finite()) {
                let id = spec.cells().get(i).map_or("?", |c| c.id.as_str());
                report.push(
                    ViolationKind::NegativeInflow,
                    format!("piece {p}: inflow {l} on cell {id}"),
                );
            }
        }
        validate_routing_into(spec, &piece.routing, &format!("piece {p}: "), &mut report);
    }
    report
}

fn validate_spec_into(spec: &NetworkSpec, report: &mut ValidationReport) {
    for c in spec.cells() {
        if c.tail == c.head {
            report.push(
                ViolationKind::SelfLoop,
                format!("cell {} has tail and head {}", c.id, spec.nodes()[c.head]),
            );
        }
        if !(c.capacity > 0.0 && c.capacity.is_finite()) {
            report.push(
                ViolationKind::Capacity,
                format!("cell {} has capacity {}", c.id, c.capacity),
            );
        }
    }
    let counts = spec.phase_counts();
    for (i, c) in spec.cells().iter().enumerate() {
        if counts[i] == 0 {
            report.push(
                ViolationKind::UncoveredCell,
                format!("cell {} belongs to no phase", c.id),
            );
        }
    }
    for k in 0..spec.num_nodes() {
        let name = &spec.nodes()[k];
        for (q, phase) in spec.node_phases(k).iter().enumerate() {
            if phase.is_empty() {
                report.push(ViolationKind::EmptyPhase, format!("node {name} phase {q} is empty"));
            }
            for &i in phase {
                if spec.cells()[i].head != k {
                    report.push(
                        ViolationKind::PhaseCell,
                        format!(
                            "node {name} phase {q} contains cell {} whose head is {}",
                            spec.cells()[i].id,
                            spec.nodes()[spec.cells()[i].head]
                        ),
                    );
                }
            }
        }
        match spec.clearance(k) {
            Some(xi) if !(xi > 0.0 && xi.is_finite()) => {
                report.push(ViolationKind::Clearance, format!("node {name} has clearance {xi}"))
            }
            None if !spec.incoming(k).is_empty() => {
                report.push(ViolationKind::Clearance, format!("node {name} has no clearance"))
            }
            _ => {}
        }
    }
}

fn validate_routing_into(
    spec: &NetworkSpec,
    routing: &RoutingMatrix,
    prefix: &str,
    report: &mut ValidationReport,
) {
    let n = spec.num_cells();
    if routing.dim() != n {
        report.push(
            ViolationKind::Dimension,
            format!("{prefix}routing matrix is {0}x{0} for {n} cells", routing.dim()),
        );
        return;
    }
    let cells = spec.cells();
    for i in 0..n {
        for j in 0..n {
            let r = routing.get(i, j);
            if !(0.0..=1.0).contains(&r) {
                report.push(
                    ViolationKind::RoutingRange,
                    format!("{prefix}R[{}][{}] = {r}", cells[i].id, cells[j].id),
                );
            }
            if r > 0.0 && cells[i].head != cells[j].tail {
                report.push(
                    ViolationKind::RoutingTopology,
                    format!(
                        "{prefix}R[{}][{}] > 0 but cell {} does not start where {} ends",
                        cells[i].id, cells[j].id, cells[j].id, cells[i].id
                    ),
                );
            }
        }
        let s = routing.row_sum(i);
        if s > 1.0 + ROW_SUM_TOL {
            report.push(
                ViolationKind::RowSum,
                format!("{prefix}row of cell {} sums to {s}", cells[i].id),
            );
        }
    }
}
