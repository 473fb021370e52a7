//! Scenario files (TOML).
//!
//! ```toml
//! network_file = "network.json"
//! demand_file = "demand.json"
//! horizon = 300.0
//! dt = 1e-3
//! sample_stride = 100
//! empty_threshold = 1e-9
//!
//! [controller]
//! kind = "gpa"            # or "max-pressure", "static"
//! epsilon_reg = 1e-9
//! solver_tol = 1e-10
//! # allocation = { v1 = [0.3, 0.3, 0.2] }   # static only
//!
//! [x0]
//! "v1.1" = 0.5
//!
//! [diagnostics]
//! lyapunov = true
//! average_inflow = true
//!
//! [outputs]
//! trajectory_csv = "out/run.csv"
//! report = "out/run.json"
//! plots = "out/plots"
//! average_inflow_csv = "out/inflow.csv"
//! ```
//!
//! Input paths are relative to the scenario file. Output paths are relative
//! to an output root, which defaults to the scenario's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use flownet_core::controllers::{ControllerConfig, ControllerKind, DEFAULT_EPSILON_REG, DEFAULT_SOLVER_TOL};
use flownet_core::dynamics::{SimulationOptions, DEFAULT_DT, DEFAULT_EMPTY_THRESHOLD, DEFAULT_SAMPLE_STRIDE};
use flownet_core::format::cell_vector_from_map;
use flownet_core::network::validate_demand;
use flownet_core::{ControlAllocation, DemandProfile, NetworkSpec};
use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    network_file: PathBuf,
    demand_file: PathBuf,
    horizon: f64,
    dt: Option<f64>,
    sample_stride: Option<usize>,
    empty_threshold: Option<f64>,
    #[serde(default)]
    controller: RawController,
    #[serde(default)]
    x0: BTreeMap<String, f64>,
    #[serde(default)]
    diagnostics: Diagnostics,
    #[serde(default)]
    outputs: Outputs,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawController {
    #[serde(default = "default_kind")]
    kind: String,
    epsilon_reg: Option<f64>,
    solver_tol: Option<f64>,
    allocation: Option<BTreeMap<String, Vec<f64>>>,
}

fn default_kind() -> String {
    "gpa".into()
}

impl Default for RawController {
    fn default() -> Self {
        Self {
            kind: default_kind(),
            epsilon_reg: None,
            solver_tol: None,
            allocation: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Diagnostics {
    #[serde(default)]
    pub lyapunov: bool,
    #[serde(default)]
    pub average_inflow: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    pub trajectory_csv: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub plots: Option<PathBuf>,
    pub average_inflow_csv: Option<PathBuf>,
}

impl Outputs {
    /// Same outputs re-rooted under `root`.
    pub fn rooted(&self, root: &Path) -> Outputs {
        let join = |p: &Option<PathBuf>| p.as_ref().map(|p| root.join(p));
        Outputs {
            trajectory_csv: join(&self.trajectory_csv),
            report: join(&self.report),
            plots: join(&self.plots),
            average_inflow_csv: join(&self.average_inflow_csv),
        }
    }
}

/// A fully resolved scenario: files loaded and validated.
#[derive(Clone, Debug)]
pub struct ScenarioConfig {
    pub name: String,
    pub path: PathBuf,
    pub spec: NetworkSpec,
    pub demand: DemandProfile,
    pub controller: ControllerConfig,
    pub x0: Vec<f64>,
    pub options: SimulationOptions,
    pub diagnostics: Diagnostics,
    /// Already joined with the output root.
    pub outputs: Outputs,
}

fn parse_err(file: &Path, key: &str, message: impl Into<String>) -> Error {
    flownet_core::Error::Parse {
        file: file.display().to_string(),
        key: key.into(),
        message: message.into(),
    }
    .into()
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_network(path: &Path) -> Result<NetworkSpec> {
    Ok(NetworkSpec::from_json_str(&read(path)?, &path.display().to_string())?)
}

/// Loads a demand file and validates it together with the network.
pub fn load_demand(spec: &NetworkSpec, path: &Path) -> Result<DemandProfile> {
    let demand = DemandProfile::from_json_str(&read(path)?, spec, &path.display().to_string())?;
    validate_demand(spec, &demand).into_result()?;
    Ok(demand)
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with_root(path, None)
    }

    /// Loads a scenario, writing outputs under `output_root` instead of the
    /// scenario's directory when given.
    pub fn load_with_root(path: &Path, output_root: Option<&Path>) -> Result<Self> {
        let text = read(path)?;
        let raw: RawScenario = toml::from_str(&text).map_err(|e| {
            let key = e
                .span()
                .map(|s| format!("line {}", text[..s.start].matches('\n').count() + 1))
                .unwrap_or_else(|| "-".into());
            parse_err(path, &key, e.message())
        })?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let spec = load_network(&dir.join(&raw.network_file))?;
        let demand = load_demand(&spec, &dir.join(&raw.demand_file))?;
        let x0 = cell_vector_from_map(&spec, &raw.x0, &path.display().to_string(), "x0")?;
        let controller = resolve_controller(&spec, &raw.controller, path)?;
        controller.check(&spec)?;
        let options = SimulationOptions {
            horizon: raw.horizon,
            dt: raw.dt.unwrap_or(DEFAULT_DT),
            sample_stride: raw.sample_stride.unwrap_or(DEFAULT_SAMPLE_STRIDE),
            empty_threshold: raw.empty_threshold.unwrap_or(DEFAULT_EMPTY_THRESHOLD),
            lyapunov: raw.diagnostics.lyapunov,
        };
        options.check().map_err(|e| parse_err(path, "horizon", e.to_string()))?;
        if x0.iter().any(|&v| !(v >= 0.0)) {
            return Err(parse_err(path, "x0", "initial volumes must be nonnegative"));
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(Self {
            name,
            path: path.to_path_buf(),
            spec,
            demand,
            controller,
            x0,
            options,
            diagnostics: raw.diagnostics,
            outputs: raw.outputs.rooted(output_root.unwrap_or(dir)),
        })
    }
}

fn resolve_controller(spec: &NetworkSpec, raw: &RawController, file: &Path) -> Result<ControllerConfig> {
    let kind = match raw.kind.as_str() {
        "gpa" => ControllerKind::Gpa,
        "max-pressure" | "maxpressure" => ControllerKind::MaxPressure,
        "static" => {
            let Some(map) = &raw.allocation else {
                return Err(parse_err(file, "controller.allocation", "static controller needs an allocation"));
            };
            let mut u = ControlAllocation::zeros(spec);
            for (node, values) in map {
                let k = spec
                    .node_index(node)
                    .ok_or_else(|| parse_err(file, &format!("controller.allocation.{node}"), "unknown node"))?;
                if values.len() != spec.node_phases(k).len() {
                    return Err(parse_err(
                        file,
                        &format!("controller.allocation.{node}"),
                        format!("expected {} phases, got {}", spec.node_phases(k).len(), values.len()),
                    ));
                }
                u.per_node[k] = values.clone();
            }
            ControllerKind::Static(u)
        }
        other => {
            return Err(parse_err(
                file,
                "controller.kind",
                format!("unknown controller {other:?} (gpa, max-pressure, static)"),
            ))
        }
    };
    if raw.allocation.is_some() && !matches!(kind, ControllerKind::Static(_)) {
        return Err(parse_err(file, "controller.allocation", "only a static controller takes an allocation"));
    }
    Ok(ControllerConfig {
        kind,
        epsilon_reg: raw.epsilon_reg.unwrap_or(DEFAULT_EPSILON_REG),
        solver_tol: raw.solver_tol.unwrap_or(DEFAULT_SOLVER_TOL),
    })
}
