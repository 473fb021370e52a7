//! Random networks and states for property checks and sweeps.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::Result;
use crate::graph::{aggregate_demand, reachable_set};
use crate::network::{DemandProfile, NetworkBuilder, NetworkSpec, RoutingMatrix};
use crate::stability::node_slack;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhaseStyle {
    /// Random partition of each node's incoming cells.
    Orthogonal,
    /// One phase per cell.
    SingleCell,
    /// A partition plus phases that overlap it.
    General,
}

#[derive(Clone, Debug)]
pub struct Instance {
    pub spec: NetworkSpec,
    pub lambda: Vec<f64>,
    pub routing: RoutingMatrix,
}

impl Instance {
    pub fn demand(&self) -> DemandProfile {
        DemandProfile::constant(self.lambda.clone(), self.routing.clone())
    }
}

fn random_partition<R: Rng>(rng: &mut R, cells: &[usize], max_groups: usize) -> Vec<Vec<usize>> {
    let groups = rng.gen_range(1..=cells.len().min(max_groups));
    let mut shuffled = cells.to_vec();
    shuffled.shuffle(rng);
    let mut phases = vec![Vec::new(); groups];
    for (g, &c) in shuffled.iter().enumerate() {
        // the first `groups` cells seed one group each
        let slot = if g < groups { g } else { rng.gen_range(0..groups) };
        phases[slot].push(c);
    }
    for p in phases.iter_mut() {
        p.sort_unstable();
    }
    phases
}

fn phases_for<R: Rng>(rng: &mut R, style: PhaseStyle, cells: &[usize], max_phases: usize) -> Vec<Vec<usize>> {
    match style {
        PhaseStyle::SingleCell => cells.iter().map(|&c| vec![c]).collect(),
        PhaseStyle::Orthogonal => random_partition(rng, cells, max_phases),
        PhaseStyle::General => {
            let mut phases = random_partition(rng, cells, max_phases.saturating_sub(1).max(1));
            // an extra phase overlapping at least two cells
            let mut extra: Vec<usize> = cells.to_vec();
            extra.shuffle(rng);
            extra.truncate(rng.gen_range(2..=cells.len().max(2)).min(cells.len()));
            extra.sort_unstable();
            if !phases.contains(&extra) {
                phases.push(extra);
            }
            phases
        }
    }
}

/// Source node `o` feeding one junction `k` with `cells` parallel cells.
pub fn random_single_node<R: Rng>(rng: &mut R, style: PhaseStyle, cells: usize, max_phases: usize) -> NetworkSpec {
    let mut b = NetworkBuilder::new();
    let o = b.node("o", None);
    let k = b.node("k", Some(rng.gen_range(0.5..2.0)));
    let ids: Vec<usize> = (0..cells)
        .map(|i| b.cell(&format!("c{}", i + 1), o, k, rng.gen_range(0.5..2.0)))
        .collect();
    for p in phases_for(rng, style, &ids, max_phases) {
        b.phase(k, &p);
    }
    b.build().expect("generated network is well formed")
}

/// Random multi-junction network with 2 to 4 junctions, 2 to 4 incoming
/// cells each, fed by a source node. Inflow is scaled so that the busiest
/// junction needs a fraction `load` of its time.
pub fn random_instance<R: Rng>(rng: &mut R, style: PhaseStyle, load: f64) -> Result<Instance> {
    let m = rng.gen_range(2..=4usize);
    let mut b = NetworkBuilder::new();
    let source = b.node("o", None);
    let junctions: Vec<usize> = (0..m)
        .map(|k| b.node(&format!("v{}", k + 1), Some(rng.gen_range(0.5..2.0))))
        .collect();
    let mut tails = Vec::new();
    let mut heads = Vec::new();
    let mut per_node: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (k, &node) in junctions.iter().enumerate() {
        let count = rng.gen_range(2..=4usize);
        for q in 0..count {
            let tail = if q == 0 || rng.gen_bool(0.3) {
                source
            } else {
                let mut other = rng.gen_range(0..m - 1);
                if other >= k {
                    other += 1;
                }
                junctions[other]
            };
            let id = b.cell(&format!("v{}.{}", k + 1, q + 1), tail, node, rng.gen_range(0.5..2.0));
            tails.push(tail);
            heads.push(node);
            per_node[k].push(id);
        }
    }
    for (k, cells) in per_node.iter().enumerate() {
        for p in phases_for(rng, style, cells, 4) {
            b.phase(junctions[k], &p);
        }
    }
    let spec = b.build()?;
    let n = spec.num_cells();

    let mut routing = RoutingMatrix::zeros(n);
    for i in 0..n {
        let next: Vec<usize> = (0..n).filter(|&j| tails[j] == heads[i]).collect();
        if next.is_empty() {
            continue;
        }
        let kept = 1.0 - rng.gen_range(0.2..0.8);
        let weights: Vec<f64> = next.iter().map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = weights.iter().sum();
        for (&j, w) in next.iter().zip(weights) {
            routing.set(i, j, kept * w / total);
        }
    }

    let mut lambda = vec![0.0; n];
    let mut covered = vec![false; n];
    for i in (0..n).filter(|&i| tails[i] == source) {
        lambda[i] = rng.gen_range(0.5..1.0);
        for (c, r) in covered.iter_mut().zip(reachable_set(&routing, i)) {
            *c |= r;
        }
    }
    for i in 0..n {
        if !covered[i] {
            lambda[i] = rng.gen_range(0.5..1.0);
            for (c, r) in covered.iter_mut().zip(reachable_set(&routing, i)) {
                *c |= r;
            }
        }
    }

    let a = aggregate_demand(&lambda, &routing)?;
    // Node slack is homogeneous in the demand, so one rescaling suffices.
    let busiest = spec
        .controlled_nodes()
        .map(|k| slack_demand(&spec, &a.a, k))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0f64, f64::max);
    let factor = load / busiest;
    lambda.iter_mut().for_each(|l| *l *= factor);
    Ok(Instance { spec, lambda, routing })
}

/// `min 1^T nu` over the covering LP, allowing values above 1.
fn slack_demand(spec: &NetworkSpec, a: &[f64], k: usize) -> Result<f64> {
    // Scale down until the LP is feasible within the unit budget.
    let peak = a.iter().fold(0.0f64, |m, &v| m.max(v));
    let shrink = if peak > 0.0 { 0.1 / peak } else { 1.0 };
    let scaled: Vec<f64> = a.iter().map(|v| v * shrink).collect();
    Ok((1.0 - node_slack(spec, &scaled, k)?) / shrink)
}

/// Nonnegative state; each cell is zero with probability `zero_prob`,
/// otherwise uniform in `(0, scale)`.
pub fn random_state<R: Rng>(rng: &mut R, n: usize, zero_prob: f64, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            if rng.gen_bool(zero_prob) {
                0.0
            } else {
                rng.gen_range(1e-3..1.0) * scale
            }
        })
        .collect()
}
