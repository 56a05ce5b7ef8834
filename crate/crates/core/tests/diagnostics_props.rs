mod common;

use common::{bump_fractions, equilibrium_setup, pair_params};
use pnpf_core::diagnostics::{
    energy_inequality_check, extended_matrices, mat_vec, project_l, project_lperp, relative_entropy,
    relative_entropy_lower_bound, scaled_matrix_g,
};
use pnpf_core::stepper::{self, Problem};
use pnpf_core::{BoundaryKind, CellField, Mesh, Reaction, SpeciesParams, State, StepperOptions};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn simplex_point(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..=n).map(|_| rng.gen_range(0.01..1.0)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Random state on `mesh` whose potential matches `phi_d` on Dirichlet ends.
fn random_state(rng: &mut ChaCha8Rng, mesh: &Mesh, n: usize, split: bool) -> State {
    let cells = mesh.n_cells();
    let mut u = vec![CellField::zeros(cells); n + 1];
    for j in 0..cells {
        for (k, v) in simplex_point(rng, n).into_iter().enumerate() {
            u[k][j] = v;
        }
    }
    let phi: CellField = (0..cells).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let phi_free: CellField = if split {
        (0..cells).map(|_| rng.gen_range(-1.0..1.0)).collect()
    } else {
        phi.clone()
    };
    State {
        u,
        w: vec![CellField::zeros(cells); n],
        phi,
        phi_free,
        time: 0.0,
    }
}

proptest! {
    #[test]
    fn relative_entropy_dominates_its_quadratic_bound(seed in any::<u64>(), cells in 2usize..30, ell in prop::sample::select(vec![0.0, 0.05, 0.5])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = SpeciesParams::new(vec![1.0, 3.0], vec![1.0, -2.0], 0.7, ell, Reaction::None).unwrap();
        let mesh = Mesh::new(1.0, cells, BoundaryKind::Dirichlet, BoundaryKind::Neumann).unwrap();
        let a = random_state(&mut rng, &mesh, 2, ell > 0.0);
        let b = random_state(&mut rng, &mesh, 2, ell > 0.0);
        let re = relative_entropy(&a, &b, &params, &mesh).unwrap();
        prop_assert!(re.h1 >= 0.0 && re.h2 >= 0.0);
        let bound = relative_entropy_lower_bound(&a, &b, &params, &mesh);
        prop_assert!(re.total() >= bound - 1e-14, "{} < {}", re.total(), bound);
        let same = relative_entropy(&b, &b, &params, &mesh).unwrap();
        prop_assert!(same.total().abs() <= 1e-15);
    }

    /// `G` annihilates `√u`, and the projections split any vector.
    #[test]
    fn kernel_and_projection_identities(seed in any::<u64>(), n in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..10.0)).collect();
        let params = SpeciesParams::new(d, vec![1.0; n], 1.0, 0.0, Reaction::None).unwrap();
        let u = simplex_point(&mut rng, n);
        let sqrt_u: Vec<f64> = u.iter().map(|v| v.sqrt()).collect();
        let g = scaled_matrix_g(&u, &params);
        let scale = g.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(mat_vec(&g, &sqrt_u).iter().all(|v| v.abs() <= 1e-14 * scale));
        let a = extended_matrices(&u, &params).a;
        prop_assert!(mat_vec(&a, &vec![1.0; n + 1]).iter().all(|v| v.abs() <= 1e-14));
        let y: Vec<f64> = (0..=n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (pl, pp) = (project_l(&y, &u), project_lperp(&y, &u));
        for k in 0..=n {
            prop_assert!((pl[k] + pp[k] - y[k]).abs() <= 1e-14);
        }
        let along: f64 = pl.iter().zip(&sqrt_u).map(|(a, b)| a * b).sum();
        prop_assert!(along.abs() <= 1e-14);
    }
}

/// Negative control: swapping a late state for the initial one makes the
/// free energy jump up, which the checker has to flag.
#[test]
fn corrupted_trajectory_is_flagged() {
    let params = pair_params(0.1);
    let (mesh, bd) = equilibrium_setup(50, &params);
    let problem = Problem::new(&mesh, &params, &bd);
    let u0 = bump_fractions(&mesh, &[0.25, 0.25], &[0.3, 0.1], 0.1);
    let opts = StepperOptions::new(1e-3);
    let mut traj = stepper::run(&u0, &problem, &opts, 0.02).unwrap();
    let slack = 10.0 * opts.newton.abs_tol;
    let clean = energy_inequality_check(&traj, &bd, &params, &mesh, opts.eps, slack).unwrap();
    assert!(clean.iter().all(|c| !c.violated));
    let mut rewound = traj.states[0].clone();
    rewound.time = traj.states[15].time;
    traj.states[15] = rewound;
    let checks = energy_inequality_check(&traj, &bd, &params, &mesh, opts.eps, slack).unwrap();
    let flagged: Vec<usize> = checks.iter().filter(|c| c.violated).map(|c| c.step).collect();
    assert_eq!(flagged, vec![15]);
}
