//! Steady potentials for a list of correlation lengths, compared against
//! the classical `ℓ = 0` potential.

use pnpf_core::linalg::norm_inf;
use pnpf_core::stepper::{self, Problem};
use pnpf_core::State;
use serde::Serialize;

use crate::config::{RunConfig, Setup};
use crate::error::AppError;
use crate::output::{fmt_real, write_table};
use crate::scenario::initial_state;

/// Pseudo-time steps allowed when the boundary data is out of equilibrium.
const MAX_PSEUDO_STEPS: usize = 400;
const STEADY_TOL: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EllRow {
    pub ell: f64,
    /// `‖Φ_ℓ - Φ_0‖_{L²}`.
    pub difference: f64,
    /// Observed order against the next larger nonzero `ℓ`.
    pub order: Option<f64>,
}

/// Steady state of the configured problem: the equilibrium state for
/// equilibrium boundary data, otherwise the limit of implicit steps with a
/// growing step size.
pub fn steady_state(cfg: &RunConfig, setup: &Setup) -> Result<State, AppError> {
    let problem = Problem::new(&setup.mesh, &setup.params, &setup.bd);
    if setup.bd.equilibrium {
        return Ok(stepper::equilibrium_state(&problem, &setup.opts.newton)?);
    }
    let mut state = initial_state(cfg, setup)?;
    let mut opts = setup.opts;
    for _ in 0..MAX_PSEUDO_STEPS {
        let (next, _) = stepper::step(&state, &problem, &opts)?;
        let change = next
            .u
            .iter()
            .zip(&state.u)
            .map(|(a, b)| norm_inf(&a.iter().zip(b.iter()).map(|(x, y)| x - y).collect::<Vec<_>>()))
            .fold(0.0, f64::max);
        state = next;
        if change < STEADY_TOL {
            return Ok(state);
        }
        opts.tau = (2.0 * opts.tau).min(1e6);
    }
    Err(AppError::Solver(pnpf_core::Error::NotConverged {
        residual: f64::NAN,
        iterations: MAX_PSEUDO_STEPS,
    }))
}

pub fn run_ell_sweep(cfg: &RunConfig, ells: &[f64]) -> Result<Vec<EllRow>, AppError> {
    if !ells.contains(&0.0) {
        return Err(AppError::Usage("the correlation-length list must include 0".into()));
    }
    if ells.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(AppError::Usage("correlation lengths must be non-negative".into()));
    }
    let mut potentials = Vec::with_capacity(ells.len());
    let mut mesh = None;
    for &ell in ells {
        let mut c = cfg.clone();
        c.species.ell = ell;
        let setup = c.build()?;
        potentials.push(steady_state(&c, &setup)?.phi);
        mesh = Some(setup.mesh);
    }
    let mesh = mesh.expect("non-empty list");
    let zero = potentials[ells.iter().position(|l| *l == 0.0).expect("checked")].clone();
    let mut rows: Vec<EllRow> = ells
        .iter()
        .zip(&potentials)
        .map(|(&ell, phi)| {
            let d: Vec<f64> = phi.iter().zip(zero.iter()).map(|(a, b)| a - b).collect();
            EllRow {
                ell,
                difference: mesh.l2_norm(&d),
                order: None,
            }
        })
        .collect();
    let mut nonzero: Vec<usize> = (0..rows.len()).filter(|&k| rows[k].ell > 0.0).collect();
    nonzero.sort_by(|&a, &b| rows[b].ell.total_cmp(&rows[a].ell));
    for pair in nonzero.windows(2) {
        let (a, b) = (&rows[pair[0]], &rows[pair[1]]);
        let order = (a.difference / b.difference).ln() / (a.ell / b.ell).ln();
        rows[pair[1]].order = Some(order);
    }
    Ok(rows)
}

pub fn write_rows(path: &std::path::Path, rows: &[EllRow]) -> Result<(), AppError> {
    let header: Vec<String> = ["ell", "phi_difference_l2", "order"].iter().map(|s| s.to_string()).collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![fmt_real(r.ell), fmt_real(r.difference), r.order.map(fmt_real).unwrap_or_default()])
        .collect();
    write_table(path, &header, &body)
}
