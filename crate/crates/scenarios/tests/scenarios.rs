use std::fs;
use std::path::{Path, PathBuf};

use flownet_core::{NetworkSpec, Verdict};
use flownet_scenarios::config::{load_demand, load_network};
use flownet_scenarios::fourjunction;
use flownet_scenarios::plot::emit_plots;
use flownet_scenarios::table::TrajectoryTable;
use flownet_scenarios::{run_many, run_scenario, write_outputs, Error, ScenarioConfig};

fn bundled(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(rel)
}

fn load(rel: &str, out: &Path) -> ScenarioConfig {
    ScenarioConfig::load_with_root(&bundled(rel), Some(out)).unwrap()
}

#[test]
fn bundled_four_junction_files_match_the_builder() {
    let spec = load_network(&bundled("four_junctions/network.json")).unwrap();
    let built = fourjunction::network();
    assert_eq!(spec.to_json_string(), built.to_json_string());
    let demand = load_demand(&spec, &bundled("four_junctions/demand.json")).unwrap();
    let expected = fourjunction::demand(fourjunction::HORIZON);
    assert_eq!(demand.to_json_string(&spec), expected.to_json_string(&built));
    let cfg = load("four_junctions/gpa.toml", Path::new("."));
    assert_eq!(cfg.x0, fourjunction::initial_state());
    assert_eq!(cfg.options.horizon, fourjunction::HORIZON);
}

#[test]
fn every_bundled_scenario_loads() {
    let root = bundled("");
    let mut count = 0;
    for dir in fs::read_dir(&root).unwrap() {
        for f in fs::read_dir(dir.unwrap().path()).unwrap() {
            let path = f.unwrap().path();
            if path.extension().is_some_and(|e| e == "toml") {
                ScenarioConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
                count += 1;
            }
        }
    }
    assert_eq!(count, 6);
}

#[test]
fn four_junction_run_is_bounded_and_adapts() {
    let out = tempfile::tempdir().unwrap();
    let cfg = load("four_junctions/gpa.toml", out.path());
    let run = run_scenario(&cfg).unwrap();
    let s = &run.summary;
    assert_eq!(s.pieces.len(), 2);
    assert!(s.pieces.iter().all(|p| p.verdict == Verdict::Interior && p.margin > 0.0));
    assert!(s.max_inf_norm.is_finite() && s.max_inf_norm < 10.0, "{}", s.max_inf_norm);
    let term = s.terminal.as_ref().unwrap();
    assert!(term.x_star_residual <= 1e-3, "{term:?}");
    // over the second piece every cell is offered at least its arrivals,
    // allowing for the volume built up after the routing change
    let second = &s.pieces[1].averages;
    assert!(second.service_minus_inflow > -0.01, "{}", second.service_minus_inflow);

    // the inflow average is constant, the margin changes with the routing
    let trace = run.inflow_trace.as_ref().unwrap();
    let lambda = fourjunction::inflow();
    assert!(trace.iter().all(|t| t.lambda_bar == lambda));
    let margins: Vec<f64> = trace.iter().map(|t| t.margin).collect();
    assert!(margins.first() != margins.last());
    assert_eq!(trace[0].margin, s.pieces[0].margin);
    assert_eq!(trace.last().unwrap().margin, s.pieces[1].margin);

    let written = write_outputs(&cfg, &run).unwrap();
    assert_eq!(written.len(), 5);
    for f in &written {
        assert!(f.starts_with(out.path()) && f.is_file(), "{}", f.display());
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&written[1]).unwrap()).unwrap();
    assert_eq!(report["pieces"][1]["verdict"], "Interior");
    assert_eq!(report["terminal_state"].as_object().unwrap().len(), 20);
}

#[test]
fn identical_configs_give_identical_csv() {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = load("four_junctions/gpa.toml", out.path());
    cfg.options.horizon = 30.0;
    cfg.demand = fourjunction::demand(30.0);
    let runs = run_many(&[cfg.clone(), cfg.clone()]);
    let csv: Vec<String> = runs
        .into_iter()
        .map(|r| TrajectoryTable::from_trajectory(&cfg.spec, &r.unwrap().trajectory).to_csv_string())
        .collect();
    assert_eq!(csv[0], csv[1]);
}

#[test]
fn halving_the_step_barely_moves_the_end_state() {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = load("four_junctions/gpa.toml", out.path());
    cfg.options.horizon = 60.0;
    cfg.demand = fourjunction::demand(60.0);
    cfg.options.lyapunov = false;
    cfg.diagnostics.average_inflow = false;
    let mut fine = cfg.clone();
    fine.options.dt = cfg.options.dt / 2.0;
    fine.options.sample_stride *= 2;
    let a = run_scenario(&cfg).unwrap();
    let b = run_scenario(&fine).unwrap();
    let gap = a
        .trajectory
        .last()
        .x
        .iter()
        .zip(&b.trajectory.last().x)
        .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
    assert!(gap < 1e-3, "{gap}");
}

#[test]
fn nonunique_limits_keep_their_ordering() {
    let out = tempfile::tempdir().unwrap();
    let upper = run_scenario(&load("shared_phase/upper.toml", out.path())).unwrap();
    let lower = run_scenario(&load("shared_phase/lower.toml", out.path())).unwrap();
    assert!(upper.trajectory.samples.iter().all(|s| s.x[0] > s.x[1]));
    assert!(lower.trajectory.samples.iter().all(|s| s.x[0] < s.x[1]));
    let (a, b) = (&upper.trajectory.last().x, &lower.trajectory.last().x);
    assert!((a[0] - 0.75).abs() < 1e-4 && (a[1] - 0.25).abs() < 1e-4, "{a:?}");
    assert!((b[0] - 0.4).abs() < 1e-4 && (b[1] - 0.6).abs() < 1e-4, "{b:?}");
}

#[test]
fn zero_demand_drains() {
    let out = tempfile::tempdir().unwrap();
    let cfg = load("zero_demand/zero_demand.toml", out.path());
    let run = run_scenario(&cfg).unwrap();
    let total = |x: &[f64]| x.iter().sum::<f64>();
    assert!(total(&run.trajectory.last().x) <= total(&cfg.x0));
    assert!(run.summary.terminal.is_some());
    assert!(run.summary.pieces[0].averages.inflow.values().all(|&v| v == 0.0));
}

fn panel_titles(svg: &str, suffix: &str) -> usize {
    svg.matches(suffix).count()
}

#[test]
fn four_junction_plots_have_a_panel_per_junction() {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = load("four_junctions/gpa.toml", out.path());
    cfg.options.horizon = 15.0;
    cfg.demand = fourjunction::demand(15.0);
    let run = run_scenario(&cfg).unwrap();
    let csv = out.path().join("run.csv");
    TrajectoryTable::from_trajectory(&cfg.spec, &run.trajectory).write(&csv).unwrap();
    for spec in [None, Some(&cfg.spec)] {
        let dir = out.path().join(if spec.is_some() { "with" } else { "without" });
        let files = emit_plots(&csv, &dir, spec).unwrap();
        assert_eq!(files.len(), 2);
        let volumes = fs::read_to_string(&files[0]).unwrap();
        let controls = fs::read_to_string(&files[1]).unwrap();
        assert_eq!(panel_titles(&volumes, ": volume"), 4);
        assert_eq!(panel_titles(&controls, ": control"), 4);
        assert_eq!(controls.matches("arrivals v").count(), 20);
    }
}

#[test]
fn empty_trajectory_is_rejected_without_output() {
    let out = tempfile::tempdir().unwrap();
    let csv = out.path().join("empty.csv");
    fs::write(&csv, "t,x.1,u.k.1,z.1,V,W\n").unwrap();
    let dir = out.path().join("plots");
    let err = emit_plots(&csv, &dir, None).unwrap_err();
    assert!(matches!(err, Error::Csv { .. }));
    assert!(!dir.exists());
}

#[test]
fn single_sample_plots() {
    let out = tempfile::tempdir().unwrap();
    let csv = out.path().join("one.csv");
    fs::write(&csv, "t,x.1,x.2,u.k.1,u.k.2,z.1,z.2,V,W\n0,1,1,0.33,0.33,0.33,0.33,NaN,NaN\n").unwrap();
    let files = emit_plots(&csv, &out.path().join("plots"), None).unwrap();
    assert!(files.iter().all(|f| f.is_file()));
}

#[test]
fn malformed_csv_names_the_row() {
    let out = tempfile::tempdir().unwrap();
    let csv = out.path().join("bad.csv");
    fs::write(&csv, "t,x.1\n0,1\n1,oops\n").unwrap();
    let err = emit_plots(&csv, out.path(), None).unwrap_err();
    assert!(err.to_string().contains("row 2"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

fn write_scenario(dir: &Path, body: &str) -> PathBuf {
    fs::copy(bundled("two_phase/network.json"), dir.join("network.json")).unwrap();
    fs::copy(bundled("two_phase/demand.json"), dir.join("demand.json")).unwrap();
    let path = dir.join("s.toml");
    fs::write(
        &path,
        format!("network_file = \"network.json\"\ndemand_file = \"demand.json\"\n{body}"),
    )
    .unwrap();
    path
}

fn load_err(body: &str) -> Error {
    let dir = tempfile::tempdir().unwrap();
    ScenarioConfig::load(&write_scenario(dir.path(), body)).unwrap_err()
}

#[test]
fn config_errors_carry_file_and_key() {
    let e = load_err("horizon = 1.0\n[controller]\nkind = \"fastest\"\n");
    assert!(e.to_string().contains("controller.kind"), "{e}");
    assert!(e.to_string().contains("s.toml"), "{e}");
    assert_eq!(e.exit_code(), 2);

    let e = load_err("horizon = -1.0\n");
    assert!(e.to_string().contains("horizon"), "{e}");

    let e = load_err("horizon = 1.0\n[x0]\n\"9\" = 1.0\n");
    assert!(e.to_string().contains("x0.9"), "{e}");

    let e = load_err("horizon = 1.0\nspeed = 2\n");
    assert!(e.to_string().contains("line 4"), "{e}");

    let e = load_err("horizon = 1.0\n[controller]\nkind = \"static\"\nallocation = { k = [0.5] }\n");
    assert!(e.to_string().contains("controller.allocation.k"), "{e}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.toml");
    fs::write(&path, "network_file = \"missing.json\"\ndemand_file = \"d.json\"\nhorizon = 1.0\n").unwrap();
    let e = ScenarioConfig::load(&path).unwrap_err();
    assert!(matches!(e, Error::Io { .. }));
    assert_eq!(e.exit_code(), 1);
}

#[test]
fn static_controller_runs_at_its_allocation() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(
        dir.path(),
        "horizon = 2.0\n[controller]\nkind = \"static\"\nallocation = { k = [0.5, 0.25] }\n[x0]\n\"1\" = 1.0\n\"2\" = 1.0\n",
    );
    let cfg = ScenarioConfig::load(&path).unwrap();
    let run = run_scenario(&cfg).unwrap();
    let last = run.trajectory.last();
    assert_eq!(last.u.per_node[1], vec![0.5, 0.25]);
    assert!((last.x[0] - (1.0 + 2.0 * (0.3 - 0.5))).abs() < 1e-9);
    assert!((last.x[1] - (1.0 + 2.0 * (0.2 - 0.25))).abs() < 1e-9);
}

#[test]
fn csv_round_trips() {
    let out = tempfile::tempdir().unwrap();
    let cfg = load("two_phase/two_phase.toml", out.path());
    let run = run_scenario(&cfg).unwrap();
    let table = TrajectoryTable::from_trajectory(&cfg.spec, &run.trajectory);
    let path = out.path().join("t.csv");
    table.write(&path).unwrap();
    let back = TrajectoryTable::read(&path).unwrap();
    assert_eq!(back.header, table.header);
    for (r, s) in back.rows.iter().zip(&table.rows) {
        for (a, b) in r.iter().zip(s) {
            assert!(a == b || (a.is_nan() && b.is_nan()));
        }
    }
    let spec: &NetworkSpec = &cfg.spec;
    assert_eq!(table.header.len(), 1 + 2 * spec.num_cells() + spec.num_phases() + 2);
}
