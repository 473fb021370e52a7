use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flownet_core::graph::{is_in_connected, is_out_connected};
use flownet_core::lyapunov::{build_context, drift_w, equilibrium_single_cell_phases, LyapunovContext};
use flownet_core::stability::check_necessary_condition;
use flownet_core::{DemandProfile, NetworkSpec};
use flownet_scenarios::config::{load_demand, load_network};
use flownet_scenarios::plot::emit_plots;
use flownet_scenarios::table::{state_columns, TrajectoryTable};
use flownet_scenarios::{run_many, run_scenario, write_outputs, Error, Result, RunSummary, ScenarioConfig};

#[derive(Parser)]
#[command(name = "flownet", version, about = "Dynamical flow networks under GPA and MaxPressure control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stability-region certificate for every demand piece
    Check { network: PathBuf, demand: PathBuf },
    /// Run scenario files, concurrently when more than one is given
    Simulate {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        /// Write outputs under this directory instead of next to each scenario
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Closed-form GPA equilibrium (one phase per cell, orthogonal)
    Equilibrium {
        network: PathBuf,
        demand: PathBuf,
        /// Demand piece to use
        #[arg(long, default_value_t = 0)]
        piece: usize,
    },
    /// V, W and the limit-set residual along a trajectory or at one state
    ///
    /// INPUT is a scenario (.toml, which is run first), a trajectory CSV, or a
    /// state as a JSON map from cell id to volume. CSV and JSON inputs need
    /// --network and --demand.
    Lyapunov {
        input: PathBuf,
        #[arg(long)]
        network: Option<PathBuf>,
        #[arg(long)]
        demand: Option<PathBuf>,
        /// Output CSV; stdout when absent
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Volume and control plots from a trajectory CSV
    Plot {
        csv: PathBuf,
        out_dir: PathBuf,
        /// Group cells by the node they enter and scale by capacity
        #[arg(long)]
        network: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Check { network, demand } => check(&network, &demand),
        Command::Simulate { scenarios, out_dir } => simulate(&scenarios, out_dir.as_deref()),
        Command::Equilibrium { network, demand, piece } => equilibrium(&network, &demand, piece),
        Command::Lyapunov {
            input,
            network,
            demand,
            out,
        } => lyapunov(&input, network.as_deref(), demand.as_deref(), out.as_deref()),
        Command::Plot { csv, out_dir, network } => plot(&csv, &out_dir, network.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_pair(network: &Path, demand: &Path) -> Result<(NetworkSpec, DemandProfile)> {
    let spec = load_network(network)?;
    let demand = load_demand(&spec, demand)?;
    Ok((spec, demand))
}

fn fmt_cells(spec: &NetworkSpec, v: &[f64]) -> String {
    spec.cells()
        .iter()
        .zip(v)
        .map(|(c, x)| format!("{}={x:.6}", c.id))
        .collect::<Vec<_>>()
        .join(" ")
}

fn check(network: &Path, demand: &Path) -> Result<()> {
    let (spec, demand) = load_pair(network, demand)?;
    let mut out = String::new();
    for (p, piece) in demand.pieces.iter().enumerate() {
        let _ = writeln!(out, "piece {p} (t >= {}):", piece.start);
        let _ = writeln!(out, "  out-connected: {}", is_out_connected(&piece.lambda, &piece.routing));
        let _ = writeln!(out, "  in-connected: {}", is_in_connected(&piece.lambda, &piece.routing));
        let (a, cert) = check_necessary_condition(&spec, &piece.lambda, &piece.routing)?;
        let _ = writeln!(out, "  aggregate demand: {}", fmt_cells(&spec, &a.a));
        let _ = writeln!(out, "  margin: {:.9}", cert.margin);
        let _ = writeln!(out, "  verdict: {:?}", cert.verdict);
        for k in spec.controlled_nodes() {
            let u: Vec<String> = cert.witness.per_node[k].iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(out, "  witness {}: [{}]", spec.nodes()[k], u.join(", "));
        }
        match build_context(&spec, &piece.lambda, &piece.routing) {
            Ok(ctx) => {
                for k in spec.controlled_nodes() {
                    let _ = writeln!(out, "  slack {}: {:.6}", spec.nodes()[k], ctx.b[k]);
                }
            }
            Err(flownet_core::Error::NotInterior { .. } | flownet_core::Error::NodeInfeasible { .. }) => {}
            Err(e) => return Err(e.into()),
        }
    }
    print!("{out}");
    Ok(())
}

fn print_summary(s: &RunSummary) {
    let mut line = format!(
        "{}: {} steps, max |x|_inf {:.6}",
        s.name, s.steps, s.max_inf_norm
    );
    if let Some(t) = &s.terminal {
        let _ = write!(line, ", V {:.6e}, W {:.6e}, X* residual {:.3e}", t.v, t.w, t.x_star_residual);
    }
    for (p, piece) in s.pieces.iter().enumerate() {
        let _ = write!(line, ", piece {p} {:?} margin {:.6}", piece.verdict, piece.margin);
    }
    println!("{line}");
}

fn simulate(paths: &[PathBuf], out_dir: Option<&Path>) -> Result<()> {
    // each scenario gets its own directory under --out-dir
    let configs = paths
        .iter()
        .map(|p| {
            let root = out_dir.map(|d| d.join(p.file_stem().unwrap_or_default()));
            ScenarioConfig::load_with_root(p, root.as_deref())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut first_err: Option<Error> = None;
    for (cfg, run) in configs.iter().zip(run_many(&configs)) {
        let outcome = run.and_then(|run| {
            print_summary(&run.summary);
            for f in write_outputs(cfg, &run)? {
                println!("  wrote {}", f.display());
            }
            Ok(())
        });
        if let Err(e) = outcome {
            eprintln!("error: {}: {e}", cfg.path.display());
            first_err.get_or_insert(e);
        }
    }
    first_err.map_or(Ok(()), Err)
}

fn equilibrium(network: &Path, demand: &Path, piece: usize) -> Result<()> {
    let (spec, demand) = load_pair(network, demand)?;
    let Some(p) = demand.pieces.get(piece) else {
        return Err(flownet_core::Error::NotApplicable(format!(
            "demand has {} piece(s), asked for piece {piece}",
            demand.pieces.len()
        ))
        .into());
    };
    let ctx = build_context(&spec, &p.lambda, &p.routing)?;
    let x = equilibrium_single_cell_phases(&spec, &ctx)?;
    for (c, v) in spec.cells().iter().zip(&x) {
        println!("{} {v}", c.id);
    }
    Ok(())
}

/// Lyapunov contexts per demand piece; `None` where the piece is not Interior.
fn contexts(spec: &NetworkSpec, demand: &DemandProfile) -> Result<Vec<Option<LyapunovContext>>> {
    demand
        .pieces
        .iter()
        .map(|p| match build_context(spec, &p.lambda, &p.routing) {
            Ok(ctx) => Ok(Some(ctx)),
            Err(flownet_core::Error::NotInterior { .. } | flownet_core::Error::NodeInfeasible { .. }) => Ok(None),
            Err(e) => Err(e.into()),
        })
        .collect()
}

fn lyapunov_table(
    spec: &NetworkSpec,
    demand: &DemandProfile,
    table: &mut TrajectoryTable,
    source: &Path,
    threshold: f64,
) -> Result<()> {
    let cols = state_columns(table, spec, source)?;
    let ctxs = contexts(spec, demand)?;
    let n = spec.num_cells();
    let mut v = Vec::with_capacity(table.rows.len());
    let mut w = Vec::with_capacity(table.rows.len());
    let mut residual = Vec::with_capacity(table.rows.len());
    let mut grad = vec![Vec::with_capacity(table.rows.len()); n];
    let t_col = 0;
    for row in &table.rows {
        let x: Vec<f64> = cols.iter().map(|&c| row[c]).collect();
        let p = demand.piece_index_at(row[t_col]);
        let piece = &demand.pieces[p];
        match &ctxs[p] {
            Some(ctx) => {
                let rep = drift_w(spec, ctx, &piece.routing, &piece.lambda, &x, threshold)?;
                v.push(rep.v);
                w.push(rep.w_drift);
                residual.push(rep.x_star_residual);
                for (g, wi) in grad.iter_mut().zip(rep.w) {
                    g.push(wi);
                }
            }
            None => {
                v.push(f64::NAN);
                w.push(f64::NAN);
                residual.push(f64::NAN);
                for g in grad.iter_mut() {
                    g.push(f64::NAN);
                }
            }
        }
    }
    table.push_column("lyap.V".into(), v);
    table.push_column("lyap.W".into(), w);
    table.push_column("xstar_residual".into(), residual);
    for (c, g) in spec.cells().iter().zip(grad) {
        table.push_column(format!("w.{}", c.id), g);
    }
    Ok(())
}

fn missing(flag: &str, input: &Path) -> Error {
    flownet_core::Error::NotApplicable(format!("{} needs {flag}", input.display())).into()
}

fn lyapunov(input: &Path, network: Option<&Path>, demand: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let ext = input.extension().and_then(|e| e.to_str()).unwrap_or_default();
    let threshold = flownet_core::dynamics::DEFAULT_EMPTY_THRESHOLD;
    let (spec, demand, mut table) = match ext {
        "toml" => {
            let cfg = ScenarioConfig::load(input)?;
            let run = run_scenario(&cfg)?;
            let table = TrajectoryTable::from_trajectory(&cfg.spec, &run.trajectory);
            (cfg.spec, cfg.demand, table)
        }
        "json" => {
            let (spec, demand) = load_pair(
                network.ok_or_else(|| missing("--network", input))?,
                demand.ok_or_else(|| missing("--demand", input))?,
            )?;
            let text = fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
            let map: BTreeMap<String, f64> = serde_json::from_str(&text).map_err(|e| Error::Csv {
                path: input.to_path_buf(),
                message: e.to_string(),
            })?;
            let x = flownet_core::format::cell_vector_from_map(&spec, &map, &input.display().to_string(), "state")?;
            let mut header = vec!["t".to_string()];
            header.extend(spec.cells().iter().map(|c| format!("x.{}", c.id)));
            let mut row = vec![0.0];
            row.extend(x);
            (spec, demand, TrajectoryTable { header, rows: vec![row] })
        }
        _ => {
            let (spec, demand) = load_pair(
                network.ok_or_else(|| missing("--network", input))?,
                demand.ok_or_else(|| missing("--demand", input))?,
            )?;
            let table = TrajectoryTable::read(input)?;
            (spec, demand, table)
        }
    };
    lyapunov_table(&spec, &demand, &mut table, input, threshold)?;
    match out {
        Some(path) => table.write(path),
        None => {
            print!("{}", table.to_csv_string());
            Ok(())
        }
    }
}

fn plot(csv: &Path, out_dir: &Path, network: Option<&Path>) -> Result<()> {
    let spec = network.map(load_network).transpose()?;
    for f in emit_plots(csv, out_dir, spec.as_ref())? {
        println!("wrote {}", f.display());
    }
    Ok(())
}
