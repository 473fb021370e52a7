use flownet_core::dynamics::{simulate, step, SimulationOptions};
use flownet_core::network::{shared_phase_junction, two_phase_junction};
use flownet_core::random::{random_instance, random_state, PhaseStyle};
use flownet_core::{ControllerConfig, DemandProfile, RoutingMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn two_phase_node_equilibrium_is_a_fixed_point() {
    let spec = two_phase_junction(1.0, [1.0, 1.0]).unwrap();
    let x = [0.6, 0.4];
    let out = step(&spec, &RoutingMatrix::zeros(2), &[0.3, 0.2], &x, &ControllerConfig::gpa(), 1e-3, 1e-9).unwrap();
    assert!((out.x[0] - 0.6).abs() <= 1e-9 && (out.x[1] - 0.4).abs() <= 1e-9);
    assert!((out.allocation.per_node[1][0] - 0.3).abs() < 1e-15);
    assert!((out.zeta[1] - 0.2).abs() < 1e-15);
}

#[test]
fn sampled_states_respect_flow_constraints() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (style, controller) in [
        (PhaseStyle::Orthogonal, ControllerConfig::gpa()),
        (PhaseStyle::General, ControllerConfig::gpa()),
        (PhaseStyle::General, ControllerConfig::max_pressure()),
    ] {
        let inst = random_instance(&mut rng, style, 0.7).unwrap();
        let x0 = random_state(&mut rng, inst.spec.num_cells(), 0.5, 1.0);
        let mut opts = SimulationOptions::new(20.0);
        opts.sample_stride = 7;
        let traj = simulate(&inst.spec, &inst.demand(), &controller, &x0, &opts).unwrap();
        for s in &traj.samples {
            for i in 0..x0.len() {
                assert!(s.x[i] >= 0.0);
                assert!(s.z[i] >= 0.0 && s.z[i] <= s.zeta[i] + 1e-12);
                if s.x[i] > opts.empty_threshold {
                    assert!((s.z[i] - s.zeta[i]).abs() <= 1e-12);
                }
            }
        }
    }
}

#[test]
fn zero_demand_never_adds_mass() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let inst = random_instance(&mut rng, PhaseStyle::General, 0.5).unwrap();
    let n = inst.spec.num_cells();
    let demand = DemandProfile::constant(vec![0.0; n], inst.routing.clone());
    let x0 = random_state(&mut rng, n, 0.2, 2.0);
    let opts = SimulationOptions::new(10.0);
    let traj = simulate(&inst.spec, &demand, &ControllerConfig::gpa(), &x0, &opts).unwrap();
    let totals: Vec<f64> = traj.samples.iter().map(|s| s.x.iter().sum()).collect();
    assert!(totals.windows(2).all(|w| w[1] <= w[0] + 1e-12));
}

/// Difference between the volume change over `[0, T]` and the trapezoidal
/// integral of net inflow on the samples.
fn mass_balance_error(dt: f64) -> f64 {
    let spec = two_phase_junction(1.0, [1.0, 1.0]).unwrap();
    let demand = DemandProfile::constant(vec![0.3, 0.2], RoutingMatrix::zeros(2));
    let mut opts = SimulationOptions::new(2.0);
    opts.dt = dt;
    opts.sample_stride = 1;
    let traj = simulate(&spec, &demand, &ControllerConfig::gpa(), &[1.0, 1.0], &opts).unwrap();
    let net = |s: &flownet_core::dynamics::Sample| 0.5 - s.z.iter().sum::<f64>();
    let integral: f64 = traj
        .samples
        .windows(2)
        .map(|w| 0.5 * (w[1].t - w[0].t) * (net(&w[0]) + net(&w[1])))
        .sum();
    let first = &traj.samples[0];
    let change: f64 = traj.last().x.iter().sum::<f64>() - first.x.iter().sum::<f64>();
    (change - integral).abs()
}

#[test]
fn mass_balance_converges_first_order() {
    let coarse = mass_balance_error(1e-2);
    let fine = mass_balance_error(5e-3);
    let ratio = coarse / fine;
    assert!(coarse < 1e-2, "{coarse}");
    assert!((1.8..2.2).contains(&ratio), "error ratio {ratio} ({coarse} vs {fine})");
}

#[test]
fn shared_phase_keeps_volume_difference() {
    let spec = shared_phase_junction(1.0, [1.0, 1.0]).unwrap();
    let demand = DemandProfile::constant(vec![0.5, 0.5], RoutingMatrix::zeros(2));
    let mut opts = SimulationOptions::new(50.0);
    opts.dt = 1e-2;
    let traj = simulate(&spec, &demand, &ControllerConfig::gpa(), &[1.5, 1.0], &opts).unwrap();
    for s in &traj.samples {
        assert!((s.x[0] - s.x[1] - 0.5).abs() < 1e-9);
    }
}
