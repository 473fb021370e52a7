//! The four-junction test network.
//!
//! Junctions `v1..v4` form two horizontal pairs (`v1`-`v2`, `v3`-`v4`) and two
//! vertical pairs (`v1`-`v3`, `v2`-`v4`). Every junction has five incoming
//! cells: two entry cells from an outside node `o<k>`, a turn cell and a
//! through cell from its horizontal partner, and one cell from its vertical
//! neighbour. Entry and vertical cells send a fraction `exit` out of the
//! network and the rest towards the partner, split between the partner's
//! turn and through cells. Through cells always leave; turn cells feed the
//! partner's vertical neighbour.

use flownet_core::{DemandPiece, DemandProfile, NetworkBuilder, NetworkSpec, RoutingMatrix};

pub const ENTRY_INFLOW: f64 = 0.2;
pub const CLEARANCE: f64 = 1.0;
pub const HORIZON: f64 = 300.0;
pub const EXIT_BEFORE: f64 = 0.65;
pub const EXIT_AFTER: f64 = 0.6;
pub const INITIAL_VOLUMES: [f64; 5] = [0.5, 0.4, 0.3, 0.2, 0.1];

/// Share of partner-bound flow taking the turn cell, indexed by source junction.
const TURN_SHARE: [f64; 4] = [0.2, 0.3, 0.4, 0.5];
const PARTNER: [usize; 4] = [1, 0, 3, 2];
const VERTICAL: [usize; 4] = [2, 3, 0, 1];

#[derive(Clone, Copy)]
enum Role {
    Entry,
    Through,
    Vertical,
    Turn,
}

/// Local numbering of the five cells: junctions `v1`, `v3` list
/// (entry, entry, through, vertical, turn); `v2`, `v4` list
/// (through, vertical, entry, entry, turn).
fn roles(k: usize) -> [Role; 5] {
    use Role::*;
    if k % 2 == 0 {
        [Entry, Entry, Through, Vertical, Turn]
    } else {
        [Through, Vertical, Entry, Entry, Turn]
    }
}

/// Cell index of local cell `local` (0-based) at junction `k`.
fn cell(k: usize, local: usize) -> usize {
    5 * k + local
}

fn local_of(k: usize, wanted: fn(&Role) -> bool) -> Vec<usize> {
    roles(k)
        .iter()
        .enumerate()
        .filter(|(_, r)| wanted(r))
        .map(|(q, _)| cell(k, q))
        .collect()
}

pub fn network() -> NetworkSpec {
    let mut b = NetworkBuilder::new();
    let junctions: Vec<usize> = (1..=4).map(|k| b.node(&format!("v{k}"), Some(CLEARANCE))).collect();
    let outside: Vec<usize> = (1..=4).map(|k| b.node(&format!("o{k}"), None)).collect();
    for k in 0..4 {
        for (q, role) in roles(k).iter().enumerate() {
            let tail = match role {
                Role::Entry => outside[k],
                Role::Through | Role::Turn => junctions[PARTNER[k]],
                Role::Vertical => junctions[VERTICAL[k]],
            };
            b.cell(&format!("v{}.{}", k + 1, q + 1), tail, junctions[k], 1.0);
        }
        // local phases {2, 3}, {1, 4}, {5}
        b.phase(junctions[k], &[cell(k, 1), cell(k, 2)])
            .phase(junctions[k], &[cell(k, 0), cell(k, 3)])
            .phase(junctions[k], &[cell(k, 4)]);
    }
    b.build().expect("four-junction network is well formed")
}

pub fn routing(exit: f64) -> RoutingMatrix {
    let mut r = RoutingMatrix::zeros(20);
    for k in 0..4 {
        let p = PARTNER[k];
        let turn_there = local_of(p, |r| matches!(r, Role::Turn))[0];
        let through_there = local_of(p, |r| matches!(r, Role::Through))[0];
        let share = TURN_SHARE[k];
        for i in local_of(k, |r| matches!(r, Role::Entry | Role::Vertical)) {
            r.set(i, turn_there, (1.0 - exit) * share);
            r.set(i, through_there, (1.0 - exit) * (1.0 - share));
        }
        let turn_here = local_of(k, |r| matches!(r, Role::Turn))[0];
        let vertical_there = local_of(VERTICAL[k], |r| matches!(r, Role::Vertical))[0];
        r.set(turn_here, vertical_there, 1.0);
    }
    r
}

pub fn inflow() -> Vec<f64> {
    let mut lambda = vec![0.0; 20];
    for k in 0..4 {
        for i in local_of(k, |r| matches!(r, Role::Entry)) {
            lambda[i] = ENTRY_INFLOW;
        }
    }
    lambda
}

/// Constant inflow, with the exit share dropping at a third of `horizon`.
pub fn demand(horizon: f64) -> DemandProfile {
    DemandProfile {
        pieces: vec![
            DemandPiece {
                start: 0.0,
                lambda: inflow(),
                routing: routing(EXIT_BEFORE),
            },
            DemandPiece {
                start: horizon / 3.0,
                lambda: inflow(),
                routing: routing(EXIT_AFTER),
            },
        ],
    }
}

pub fn initial_state() -> Vec<f64> {
    (0..4).flat_map(|_| INITIAL_VOLUMES).collect()
}
