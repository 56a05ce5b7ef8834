mod common;

use common::{bump_fractions, dirichlet, equilibrium_setup, max_abs_diff, UD};
use pnpf_core::diagnostics::energy_inequality_check;
use pnpf_core::model::{free_energy, reaction_rates};
use pnpf_core::stepper::{self, Problem};
use pnpf_core::{BoundaryData, BoundaryKind, CellField, Error, Mesh, Reaction, SpeciesParams, StepperOptions};

fn unit_params(reaction: Reaction) -> SpeciesParams {
    SpeciesParams::new(vec![1.0, 1.0], vec![1.0, -1.0], 0.1, 0.1, reaction).unwrap()
}

fn ion_mass(mesh: &Mesh, u: &[CellField]) -> f64 {
    u[1..].iter().map(|f| mesh.integrate(f)).sum()
}

#[test]
fn free_energy_decays_with_equal_diffusivities() {
    let params = unit_params(Reaction::None);
    let (mesh, bd) = equilibrium_setup(100, &params);
    let problem = Problem::new(&mesh, &params, &bd);
    let u0 = bump_fractions(&mesh, &[0.25, 0.25], &[0.3, 0.1], 0.1);
    let opts = StepperOptions::new(1e-3);
    let traj = stepper::run(&u0, &problem, &opts, 0.2).unwrap();
    assert_eq!(traj.reports.len(), 200);
    let slack = 10.0 * opts.newton.abs_tol;
    let energies: Vec<f64> = traj.states.iter().map(|s| free_energy(s, &bd, &params, &mesh).unwrap()).collect();
    for k in 1..energies.len() {
        assert!(energies[k] <= energies[k - 1] + slack, "step {k}: {} > {}", energies[k], energies[k - 1]);
    }
    let checks = energy_inequality_check(&traj, &bd, &params, &mesh, opts.eps, slack).unwrap();
    assert!(checks.iter().all(|c| !c.violated));
    assert!(traj.states.iter().all(|s| s.within_bounds(1e-12)));
}

#[test]
fn energy_check_accepts_non_equilibrium_boundary_data() {
    let params = unit_params(Reaction::None);
    let mesh = Mesh::new(1.0, 60, BoundaryKind::Dirichlet, BoundaryKind::Dirichlet).unwrap();
    let bd = BoundaryData::new(
        &mesh,
        &params,
        dirichlet(&[0.5, 0.3, 0.2], 0.1),
        dirichlet(&[0.6, 0.15, 0.25], -0.1),
        CellField::zeros(60),
    )
    .unwrap();
    assert!(!bd.equilibrium);
    let problem = Problem::new(&mesh, &params, &bd);
    let u0 = bump_fractions(&mesh, &[0.2, 0.2], &[0.1, 0.05], 0.1);
    let opts = StepperOptions::new(2e-3);
    let traj = stepper::run(&u0, &problem, &opts, 0.1).unwrap();
    let checks = energy_inequality_check(&traj, &bd, &params, &mesh, opts.eps, 10.0 * opts.newton.abs_tol).unwrap();
    assert!(checks.iter().all(|c| !c.violated), "max excess {:e}", checks.iter().map(|c| c.excess).fold(f64::MIN, f64::max));
}

#[test]
fn equilibrium_is_a_fixed_point() {
    let params = unit_params(Reaction::None);
    let mesh = Mesh::new(1.0, 40, BoundaryKind::Dirichlet, BoundaryKind::Neumann).unwrap();
    let bd = BoundaryData::new(&mesh, &params, dirichlet(&UD, 0.3), None, CellField::constant(40, -0.2)).unwrap();
    let problem = Problem::new(&mesh, &params, &bd);
    let opts = StepperOptions::new(1e-2);
    let eq = stepper::equilibrium_state(&problem, &opts.newton).unwrap();
    let traj = stepper::run_from(eq.clone(), &problem, &opts, 0.5).unwrap();
    for s in &traj.states {
        for k in 0..3 {
            assert!(max_abs_diff(&s.u[k], &eq.u[k]) <= 1e-10);
        }
    }
}

/// Starting from equilibrium, annihilation is the only source of change:
/// the ion mass decreases and each decrease is bounded by the reaction sink,
/// the boundary being able only to resupply.
#[test]
fn annihilation_consumes_ions() {
    let params = unit_params(Reaction::BinaryAnnihilation { rate: 2.0, i: 1, j: 2 });
    let (mesh, bd) = equilibrium_setup(50, &params);
    let problem = Problem::new(&mesh, &params, &bd);
    let opts = StepperOptions::new(1e-3);
    let start = stepper::equilibrium_state(&problem, &opts.newton).unwrap();
    let traj = stepper::run_from(start, &problem, &opts, 0.05).unwrap();
    for pair in traj.states.windows(2) {
        let (prev, next) = (&pair[0], &pair[1]);
        let tau = next.time - prev.time;
        let sink: f64 = (0..mesh.n_cells())
            .map(|j| mesh.h() * reaction_rates(&next.cell_u(j), &params).iter().sum::<f64>())
            .sum();
        assert!(sink <= 0.0);
        let change = ion_mass(&mesh, &next.u) - ion_mass(&mesh, &prev.u);
        assert!(change <= 1e-12, "ion mass grew by {change:e}");
        assert!(change >= tau * sink - 1e-10, "change {change:e} below sink {:e}", tau * sink);
    }
}

fn coarsen(f: &[f64]) -> Vec<f64> {
    f.chunks(2).map(|c| 0.5 * (c[0] + c[1])).collect()
}

#[test]
fn refinement_converges_at_first_order() {
    let params = unit_params(Reaction::None);
    let mut finals = Vec::new();
    for (n, tau) in [(100, 1e-3), (200, 5e-4), (400, 2.5e-4)] {
        let (mesh, bd) = equilibrium_setup(n, &params);
        let problem = Problem::new(&mesh, &params, &bd);
        let u0 = bump_fractions(&mesh, &[0.25, 0.25], &[0.3, 0.1], 0.1);
        let traj = stepper::run(&u0, &problem, &StepperOptions::new(tau), 0.1).unwrap();
        assert!((traj.last().time - 0.1).abs() < 1e-12);
        finals.push((mesh, traj.last().u.clone()));
    }
    let diff = |coarse: usize| {
        let (mesh, u) = &finals[coarse];
        let fine = &finals[coarse + 1].1;
        (0..3)
            .map(|k| {
                let d: Vec<f64> = u[k].iter().zip(coarsen(&fine[k])).map(|(a, b)| a - b).collect();
                mesh.l2_norm(&d).powi(2)
            })
            .sum::<f64>()
            .sqrt()
    };
    let (e1, e2) = (diff(0), diff(1));
    let order = (e1 / e2).log2();
    assert!(e1 < 1e-2, "difference {e1:e}");
    assert!(order >= 0.9, "order {order} ({e1:e}, {e2:e})");
}

#[test]
fn runs_are_deterministic() {
    let params = unit_params(Reaction::None);
    let (mesh, bd) = equilibrium_setup(40, &params);
    let problem = Problem::new(&mesh, &params, &bd);
    let u0 = bump_fractions(&mesh, &[0.25, 0.25], &[0.3, 0.1], 0.1);
    let opts = StepperOptions::new(5e-3);
    let a = stepper::run(&u0, &problem, &opts, 0.05).unwrap();
    let b = stepper::run(&u0, &problem, &opts, 0.05).unwrap();
    assert_eq!(a, b);
}

#[test]
fn degenerate_initial_data_is_clipped_into_the_simplex() {
    let params = unit_params(Reaction::None);
    let (mesh, bd) = equilibrium_setup(30, &params);
    let problem = Problem::new(&mesh, &params, &bd);
    // Species 2 is absent everywhere and species 1 fills the left half.
    let ion1 = mesh.sample(|x| if x < 0.5 { 1.0 } else { 0.0 });
    let solvent = mesh.sample(|x| if x < 0.5 { 0.0 } else { 1.0 });
    let u0 = vec![solvent, ion1, CellField::zeros(30)];
    let traj = stepper::run(&u0, &problem, &StepperOptions::new(1e-3), 0.01).unwrap();
    assert!(traj.states.iter().all(|s| s.within_bounds(1e-12)));
    assert!(traj.states[0].u[2].min() > 0.0);
}

#[test]
fn zero_horizon_returns_the_initial_state() {
    let params = unit_params(Reaction::None);
    let (mesh, bd) = equilibrium_setup(10, &params);
    let problem = Problem::new(&mesh, &params, &bd);
    let u0 = bump_fractions(&mesh, &[0.25, 0.25], &[0.1, 0.1], 0.1);
    let traj = stepper::run(&u0, &problem, &StepperOptions::new(1e-3), 0.0).unwrap();
    assert_eq!(traj.states.len(), 1);
    assert!(traj.reports.is_empty());
}

#[test]
fn exhausted_halvings_report_a_step_failure() {
    let params = unit_params(Reaction::None);
    let (mesh, bd) = equilibrium_setup(30, &params);
    let problem = Problem::new(&mesh, &params, &bd);
    let u0 = bump_fractions(&mesh, &[0.25, 0.25], &[0.45, 0.0], 0.05);
    let mut opts = StepperOptions::new(1.0);
    opts.newton.max_iter = 1;
    opts.max_step_halvings = 1;
    let err = stepper::run(&u0, &problem, &opts, 1.0).unwrap_err();
    assert!(matches!(err, Error::StepFailure { halvings: 1, .. }), "{err:?}");
}
