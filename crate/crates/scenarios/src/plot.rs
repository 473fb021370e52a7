//! SVG line plots of a trajectory CSV: `volumes.svg` and `controls.svg`,
//! one panel per controlled node.
//!
//! Control panels carry a dashed line per incoming cell showing its average
//! arrival rate so far, `(x(t) - x(0) + int_0^t z) / t`, divided by the cell
//! capacity. A control signal sitting above the dashed line of each of its
//! cells means the node keeps up with its demand.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use flownet_core::NetworkSpec;
use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::table::TrajectoryTable;

const PANEL: (u32, u32) = (480, 320);
const COLORS: [RGBColor; 8] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
    RGBColor(227, 119, 194),
    RGBColor(127, 127, 127),
];

struct Line {
    label: String,
    points: Vec<(f64, f64)>,
    dashed: bool,
    color: usize,
}

struct Panel {
    title: String,
    lines: Vec<Line>,
}

pub fn emit_plots(csv: &Path, out_dir: &Path, spec: Option<&NetworkSpec>) -> Result<Vec<PathBuf>> {
    let table = TrajectoryTable::read(csv)?;
    plot_table(&table, csv, out_dir, spec)
}

/// Writes both plots for `table`; `source` names the table in errors.
pub fn plot_table(
    table: &TrajectoryTable,
    source: &Path,
    out_dir: &Path,
    spec: Option<&NetworkSpec>,
) -> Result<Vec<PathBuf>> {
    if table.rows.is_empty() {
        return Err(Error::Csv {
            path: source.to_path_buf(),
            message: "trajectory has no samples".into(),
        });
    }
    let groups = cell_groups(table, spec);
    let volumes: Vec<Panel> = groups
        .iter()
        .map(|(node, cells)| Panel {
            title: format!("{node}: volume"),
            lines: cells
                .iter()
                .enumerate()
                .map(|(c, cell)| Line {
                    label: format!("x.{cell}"),
                    points: series(table, &format!("x.{cell}")),
                    dashed: false,
                    color: c,
                })
                .collect(),
        })
        .collect();
    let controls: Vec<Panel> = groups
        .iter()
        .map(|(node, cells)| control_panel(table, spec, node, cells))
        .collect();

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for (name, panels) in [("volumes.svg", volumes), ("controls.svg", controls)] {
        let path = out_dir.join(name);
        draw(&path, &panels).map_err(|message| Error::Plot {
            path: path.clone(),
            message,
        })?;
        written.push(path);
    }
    Ok(written)
}

fn series(table: &TrajectoryTable, column: &str) -> Vec<(f64, f64)> {
    let t = table.times();
    let v = table.column(column).unwrap_or_default();
    t.into_iter().zip(v).collect()
}

/// Cells per node, in node order. With a network, a node owns the cells
/// entering it; without one, cells are matched to `u.<node>` columns by an
/// id prefix `<node>.` and the rest share a panel.
fn cell_groups(table: &TrajectoryTable, spec: Option<&NetworkSpec>) -> Vec<(String, Vec<String>)> {
    let cells = table.suffixes("x.");
    let mut nodes: Vec<String> = Vec::new();
    for s in table.suffixes("u.") {
        if let Some((node, _)) = s.rsplit_once('.') {
            if !nodes.iter().any(|n| n == node) {
                nodes.push(node.to_string());
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    let mut rest = Vec::new();
    for cell in cells {
        let owner = match spec {
            Some(spec) => spec
                .cell_index(&cell)
                .map(|i| &spec.nodes()[spec.cells()[i].head])
                .and_then(|head| nodes.iter().position(|n| n == head)),
            None => nodes.iter().position(|n| cell.starts_with(&format!("{n}."))),
        };
        match owner {
            Some(k) => groups.entry(k).or_default().push(cell),
            None => rest.push(cell),
        }
    }
    let mut out: Vec<(String, Vec<String>)> = groups.into_iter().map(|(k, c)| (nodes[k].clone(), c)).collect();
    if !rest.is_empty() {
        let title = if out.is_empty() && nodes.len() == 1 { nodes[0].clone() } else { "cells".into() };
        out.push((title, rest));
    }
    out
}

fn control_panel(table: &TrajectoryTable, spec: Option<&NetworkSpec>, node: &str, cells: &[String]) -> Panel {
    let prefix = format!("u.{node}.");
    let mut lines: Vec<Line> = table
        .suffixes(&prefix)
        .iter()
        .enumerate()
        .map(|(q, phase)| Line {
            label: format!("u{phase}"),
            points: series(table, &format!("{prefix}{phase}")),
            dashed: false,
            color: q,
        })
        .collect();
    let t = table.times();
    for (c, cell) in cells.iter().enumerate() {
        let (Some(x), Some(z)) = (table.column(&format!("x.{cell}")), table.column(&format!("z.{cell}"))) else {
            continue;
        };
        let capacity = spec
            .and_then(|s| s.cell_index(cell).map(|i| s.cells()[i].capacity))
            .unwrap_or(1.0);
        let mut outflow = 0.0;
        let mut points = Vec::new();
        for r in 1..t.len() {
            outflow += 0.5 * (t[r] - t[r - 1]) * (z[r] + z[r - 1]);
            let elapsed = t[r] - t[0];
            if elapsed > 0.0 {
                points.push((t[r], (x[r] - x[0] + outflow) / elapsed / capacity));
            }
        }
        lines.push(Line {
            label: format!("arrivals {cell}"),
            points,
            dashed: true,
            color: c,
        });
    }
    Panel {
        title: format!("{node}: control"),
        lines,
    }
}

/// Axis range covering every point, padded so that a constant series or a
/// single sample still gets a nonempty box.
fn bounds(panel: &Panel) -> (std::ops::Range<f64>, std::ops::Range<f64>) {
    let pts = panel.lines.iter().flat_map(|l| l.points.iter()).filter(|(a, b)| a.is_finite() && b.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(a, b) in pts {
        x0 = x0.min(a);
        x1 = x1.max(a);
        y0 = y0.min(b);
        y1 = y1.max(b);
    }
    if x0 > x1 {
        return (0.0..1.0, 0.0..1.0);
    }
    let pad = |lo: f64, hi: f64| {
        let span = hi - lo;
        if span > 0.0 {
            (lo - 0.05 * span)..(hi + 0.05 * span)
        } else {
            let d = 0.5 * lo.abs().max(1.0);
            (lo - d)..(hi + d)
        }
    };
    (pad(x0, x1), pad(y0.min(0.0), y1))
}

fn draw(path: &Path, panels: &[Panel]) -> std::result::Result<(), String> {
    let cols = (panels.len() as f64).sqrt().ceil().max(1.0) as usize;
    let rows = panels.len().div_ceil(cols).max(1);
    let size = (PANEL.0 * cols as u32, PANEL.1 * rows as u32);
    let root = SVGBackend::new(path, size).into_drawing_area();
    root.fill(&WHITE).map_err(|e| e.to_string())?;
    let areas = root.split_evenly((rows, cols));
    for (panel, area) in panels.iter().zip(&areas) {
        let (xr, yr) = bounds(panel);
        let mut chart = ChartBuilder::on(area)
            .caption(&panel.title, ("sans-serif", 16))
            .margin(8)
            .x_label_area_size(24)
            .y_label_area_size(44)
            .build_cartesian_2d(xr, yr)
            .map_err(|e| e.to_string())?;
        chart
            .configure_mesh()
            .x_desc("t")
            .light_line_style(RGBColor(235, 235, 235))
            .draw()
            .map_err(|e| e.to_string())?;
        for line in &panel.lines {
            let color = COLORS[line.color % COLORS.len()];
            let pts: Vec<(f64, f64)> = line.points.iter().copied().filter(|(a, b)| a.is_finite() && b.is_finite()).collect();
            let anno = if line.dashed {
                chart.draw_series(DashedLineSeries::new(pts, 6, 4, color.stroke_width(1)))
            } else {
                chart.draw_series(LineSeries::new(pts, color.stroke_width(2)))
            }
            .map_err(|e| e.to_string())?;
            anno.label(line.label.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| e.to_string())?;
    }
    root.present().map_err(|e| e.to_string())
}
