//! Running a scenario and writing what it asks for.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use flownet_core::dynamics::{simulate, FlowIntegrals, Trajectory};
use flownet_core::lyapunov::{build_context, drift_w};
use flownet_core::stability::check_necessary_condition;
use flownet_core::{ControllerKind, NetworkSpec, Verdict};
use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::plot::plot_table;
use crate::table::TrajectoryTable;
use crate::tracker::{average_inflow_tracker, write_trace, InflowSample};

/// Per-cell time averages over an interval.
#[derive(Clone, Debug, Serialize)]
pub struct CellAverages {
    /// Everything arriving, exogenous plus routed.
    pub inflow: BTreeMap<String, f64>,
    pub outflow: BTreeMap<String, f64>,
    /// Allocated service rate `zeta`.
    pub service: BTreeMap<String, f64>,
    /// `min_i (service_i - inflow_i)`; nonnegative when every cell is offered
    /// at least what reaches it.
    pub service_minus_inflow: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PieceSummary {
    pub start: f64,
    pub end: f64,
    pub verdict: Verdict,
    pub margin: f64,
    /// Spare time fraction per controlled node; absent unless Interior.
    pub node_slack: Option<BTreeMap<String, f64>>,
    pub averages: CellAverages,
}

/// Lyapunov quantities at the last sample, under the last demand piece.
#[derive(Clone, Debug, Serialize)]
pub struct TerminalDiagnostics {
    pub v: f64,
    pub w: f64,
    pub x_star_residual: f64,
    pub served_gap: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub controller: String,
    pub horizon: f64,
    pub dt: f64,
    pub steps: usize,
    pub samples: usize,
    pub pieces: Vec<PieceSummary>,
    pub terminal_state: BTreeMap<String, f64>,
    pub max_inf_norm: f64,
    /// Absent when the last demand piece is not Interior.
    pub terminal: Option<TerminalDiagnostics>,
    pub averages: CellAverages,
}

#[derive(Clone, Debug)]
pub struct ScenarioRun {
    pub summary: RunSummary,
    pub trajectory: Trajectory,
    pub inflow_trace: Option<Vec<InflowSample>>,
}

fn by_cell(spec: &NetworkSpec, values: impl IntoIterator<Item = f64>) -> BTreeMap<String, f64> {
    spec.cells().iter().map(|c| c.id.clone()).zip(values).collect()
}

fn averages(spec: &NetworkSpec, integ: &FlowIntegrals) -> CellAverages {
    let scale = if integ.time > 0.0 { 1.0 / integ.time } else { 0.0 };
    let gap = integ
        .service
        .iter()
        .zip(&integ.inflow)
        .map(|(s, i)| scale * (s - i))
        .fold(f64::INFINITY, f64::min);
    CellAverages {
        inflow: by_cell(spec, integ.inflow.iter().map(|v| v * scale)),
        outflow: by_cell(spec, integ.outflow.iter().map(|v| v * scale)),
        service: by_cell(spec, integ.service.iter().map(|v| v * scale)),
        service_minus_inflow: gap,
    }
}

fn controller_name(kind: &ControllerKind) -> &'static str {
    match kind {
        ControllerKind::Gpa => "gpa",
        ControllerKind::MaxPressure => "max-pressure",
        ControllerKind::Static(_) => "static",
    }
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioRun> {
    let spec = &cfg.spec;
    let trajectory = simulate(spec, &cfg.demand, &cfg.controller, &cfg.x0, &cfg.options)?;

    let mut pieces = Vec::new();
    for (p, piece) in cfg.demand.pieces.iter().enumerate() {
        if piece.start >= cfg.options.horizon {
            break;
        }
        let (_, cert) = check_necessary_condition(spec, &piece.lambda, &piece.routing)?;
        let node_slack = match cert.verdict {
            Verdict::Interior => {
                let ctx = build_context(spec, &piece.lambda, &piece.routing)?;
                Some(spec.controlled_nodes().map(|k| (spec.nodes()[k].clone(), ctx.b[k])).collect())
            }
            _ => None,
        };
        pieces.push(PieceSummary {
            start: piece.start,
            end: cfg.demand.piece_end(p).min(cfg.options.horizon),
            verdict: cert.verdict,
            margin: cert.margin,
            node_slack,
            averages: averages(spec, &trajectory.per_piece[p]),
        });
    }

    let last = trajectory.last();
    let piece = &cfg.demand.pieces[last.piece];
    let terminal = if pieces.last().map(|p| p.verdict) == Some(Verdict::Interior) {
        let ctx = build_context(spec, &piece.lambda, &piece.routing)?;
        let rep = drift_w(spec, &ctx, &piece.routing, &piece.lambda, &last.x, cfg.options.empty_threshold)?;
        Some(TerminalDiagnostics {
            v: rep.v,
            w: rep.w_drift,
            x_star_residual: rep.x_star_residual,
            served_gap: rep.served_gap,
        })
    } else {
        None
    };

    let inflow_trace = if cfg.diagnostics.average_inflow {
        Some(average_inflow_tracker(spec, &trajectory, &cfg.demand)?)
    } else {
        None
    };

    let summary = RunSummary {
        name: cfg.name.clone(),
        controller: controller_name(&cfg.controller.kind).into(),
        horizon: cfg.options.horizon,
        dt: cfg.options.dt,
        steps: trajectory.steps,
        samples: trajectory.samples.len(),
        pieces,
        terminal_state: by_cell(spec, last.x.iter().copied()),
        max_inf_norm: trajectory.max_inf_norm(),
        terminal,
        averages: averages(spec, &trajectory.integrals),
    };
    Ok(ScenarioRun {
        summary,
        trajectory,
        inflow_trace,
    })
}

/// Runs every scenario on its own thread; results come back in input order.
pub fn run_many(configs: &[ScenarioConfig]) -> Vec<Result<ScenarioRun>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = configs.iter().map(|cfg| s.spawn(move || run_scenario(cfg))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scenario thread panicked"))
            .collect()
    })
}

/// Writes the trajectory CSV, report, plots and inflow trace named in the
/// scenario's outputs. Returns the files written.
pub fn write_outputs(cfg: &ScenarioConfig, run: &ScenarioRun) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let table = TrajectoryTable::from_trajectory(&cfg.spec, &run.trajectory);
    if let Some(path) = &cfg.outputs.trajectory_csv {
        table.write(path)?;
        written.push(path.clone());
    }
    if let Some(path) = &cfg.outputs.report {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let json = serde_json::to_string_pretty(&run.summary).expect("summary serializes");
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))?;
        written.push(path.clone());
    }
    if let Some(dir) = &cfg.outputs.plots {
        written.extend(plot_table(&table, &cfg.path, dir, Some(&cfg.spec))?);
    }
    if let (Some(path), Some(trace)) = (&cfg.outputs.average_inflow_csv, &run.inflow_trace) {
        write_trace(&cfg.spec, trace, path)?;
        written.push(path.clone());
    }
    Ok(written)
}
