//! JSON network and demand files.
//!
//! Network file:
//! ```json
//! { "nodes": ["o", "k"],
//!   "cells": [{"id": "1", "tail": "o", "head": "k", "capacity": 1.0}],
//!   "phases": {"k": [["1"]]},
//!   "clearance": {"k": 1.0} }
//! ```
//! Demand file:
//! ```json
//! { "pieces": [{"start": 0.0, "lambda": {"1": 0.2},
//!               "routing": [{"from": "1", "to": "2", "fraction": 0.5}]}] }
//! ```
//! Cells omitted from `lambda` have zero inflow.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Cell, DemandPiece, DemandProfile, NetworkSpec, RoutingMatrix};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    nodes: Vec<String>,
    cells: Vec<CellRecord>,
    #[serde(default)]
    phases: BTreeMap<String, Vec<Vec<String>>>,
    #[serde(default)]
    clearance: BTreeMap<String, f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CellRecord {
    id: String,
    tail: String,
    head: String,
    capacity: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DemandFile {
    pieces: Vec<PieceRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PieceRecord {
    start: f64,
    #[serde(default)]
    lambda: BTreeMap<String, f64>,
    #[serde(default)]
    routing: Vec<RoutingRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoutingRecord {
    from: String,
    to: String,
    fraction: f64,
}

fn parse_err(file: &str, key: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        key: key.into(),
        message: message.into(),
    }
}

fn index_of(names: &[String], file: &str, what: &str) -> Result<HashMap<String, usize>> {
    let mut map = HashMap::with_capacity(names.len());
    for (i, n) in names.iter().enumerate() {
        if map.insert(n.clone(), i).is_some() {
            return Err(parse_err(file, what, format!("duplicate identifier '{n}'")));
        }
    }
    Ok(map)
}

impl NetworkSpec {
    /// Parses a network file. `file` labels error messages.
    pub fn from_json_str(text: &str, file: &str) -> Result<Self> {
        let raw: NetworkFile =
            serde_json::from_str(text).map_err(|e| parse_err(file, "<document>", e.to_string()))?;
        let node_ix = index_of(&raw.nodes, file, "nodes")?;
        let cell_ids: Vec<String> = raw.cells.iter().map(|c| c.id.clone()).collect();
        let cell_ix = index_of(&cell_ids, file, "cells")?;
        let lookup_node = |name: &str, key: String| {
            node_ix
                .get(name)
                .copied()
                .ok_or_else(|| parse_err(file, key, format!("unknown node '{name}'")))
        };
        let mut cells = Vec::with_capacity(raw.cells.len());
        for (i, c) in raw.cells.iter().enumerate() {
            cells.push(Cell {
                id: c.id.clone(),
                tail: lookup_node(&c.tail, format!("cells[{i}].tail"))?,
                head: lookup_node(&c.head, format!("cells[{i}].head"))?,
                capacity: c.capacity,
            });
        }
        let mut phases = vec![Vec::new(); raw.nodes.len()];
        for (node, list) in &raw.phases {
            let k = lookup_node(node, format!("phases.{node}"))?;
            for (q, phase) in list.iter().enumerate() {
                let mut ix = Vec::with_capacity(phase.len());
                for id in phase {
                    let i = cell_ix.get(id).copied().ok_or_else(|| {
                        parse_err(file, format!("phases.{node}[{q}]"), format!("unknown cell '{id}'"))
                    })?;
                    ix.push(i);
                }
                phases[k].push(ix);
            }
        }
        let mut clearance = vec![None; raw.nodes.len()];
        for (node, &xi) in &raw.clearance {
            let k = lookup_node(node, format!("clearance.{node}"))?;
            clearance[k] = Some(xi);
        }
        NetworkSpec::new(raw.nodes, cells, phases, clearance)
    }

    pub fn to_json_string(&self) -> String {
        let nodes = self.nodes().to_vec();
        let cells = self
            .cells()
            .iter()
            .map(|c| CellRecord {
                id: c.id.clone(),
                tail: nodes[c.tail].clone(),
                head: nodes[c.head].clone(),
                capacity: c.capacity,
            })
            .collect();
        let mut phases = BTreeMap::new();
        let mut clearance = BTreeMap::new();
        for (k, name) in nodes.iter().enumerate() {
            let list = self.node_phases(k);
            if !list.is_empty() {
                phases.insert(
                    name.clone(),
                    list.iter()
                        .map(|p| p.iter().map(|&i| self.cells()[i].id.clone()).collect())
                        .collect(),
                );
            }
            if let Some(xi) = self.clearance(k) {
                clearance.insert(name.clone(), xi);
            }
        }
        let file = NetworkFile {
            nodes,
            cells,
            phases,
            clearance,
        };
        serde_json::to_string_pretty(&file).expect("network serializes")
    }
}

impl DemandProfile {
    /// Parses a demand file against the cells of `spec`.
    pub fn from_json_str(text: &str, spec: &NetworkSpec, file: &str) -> Result<Self> {
        let raw: DemandFile =
            serde_json::from_str(text).map_err(|e| parse_err(file, "<document>", e.to_string()))?;
        let n = spec.num_cells();
        let cell = |id: &str, key: String| {
            spec.cell_index(id)
                .ok_or_else(|| parse_err(file, key, format!("unknown cell '{id}'")))
        };
        let mut pieces = Vec::with_capacity(raw.pieces.len());
        for (p, rec) in raw.pieces.iter().enumerate() {
            let mut lambda = vec![0.0; n];
            for (id, &rate) in &rec.lambda {
                lambda[cell(id, format!("pieces[{p}].lambda.{id}"))?] = rate;
            }
            let mut routing = RoutingMatrix::zeros(n);
            for (e, r) in rec.routing.iter().enumerate() {
                let key = format!("pieces[{p}].routing[{e}]");
                let i = cell(&r.from, key.clone())?;
                let j = cell(&r.to, key.clone())?;
                if routing.get(i, j) != 0.0 {
                    return Err(parse_err(
                        file,
                        key,
                        format!("duplicate entry {} -> {}", r.from, r.to),
                    ));
                }
                routing.set(i, j, r.fraction);
            }
            pieces.push(DemandPiece {
                start: rec.start,
                lambda,
                routing,
            });
        }
        Ok(DemandProfile { pieces })
    }

    pub fn to_json_string(&self, spec: &NetworkSpec) -> String {
        let id = |i: usize| spec.cells()[i].id.clone();
        let pieces = self
            .pieces
            .iter()
            .map(|p| PieceRecord {
                start: p.start,
                lambda: p
                    .lambda
                    .iter()
                    .enumerate()
                    .filter(|(_, &l)| l != 0.0)
                    .map(|(i, &l)| (id(i), l))
                    .collect(),
                routing: p
                    .routing
                    .entries()
                    .into_iter()
                    .map(|(i, j, f)| RoutingRecord {
                        from: id(i),
                        to: id(j),
                        fraction: f,
                    })
                    .collect(),
            })
            .collect();
        serde_json::to_string_pretty(&DemandFile { pieces }).expect("demand serializes")
    }
}

/// Parses a `{cell-id: value}` map into a dense per-cell vector.
pub fn cell_vector_from_map(
    spec: &NetworkSpec,
    map: &BTreeMap<String, f64>,
    file: &str,
    key: &str,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; spec.num_cells()];
    for (id, &v) in map {
        let i = spec
            .cell_index(id)
            .ok_or_else(|| parse_err(file, format!("{key}.{id}"), format!("unknown cell '{id}'")))?;
        out[i] = v;
    }
    Ok(out)
}
