//! Pointwise matrix structure of the extended (solvent-including) system,
//! relative entropy, and per-step energy and dissipation checks.

use crate::error::{Error, Result};
use crate::mesh::{CellField, Mesh};
use crate::model::{bregman_scalar, face_means, free_energy, reaction_rates, BoundaryData, SpeciesParams, State};
use crate::stepper::{regularization_variables, Trajectory};

/// Dense square matrix stored row-major.
pub type Matrix = Vec<Vec<f64>>;

/// Mobility matrix `A` and drift-coupling matrix `Q` with the solvent at index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedMatrices {
    pub a: Matrix,
    pub q: Matrix,
}

pub fn extended_matrices(u: &[f64], params: &SpeciesParams) -> ExtendedMatrices {
    let n = params.n();
    let mut a = vec![vec![0.0; n + 1]; n + 1];
    let mut q = vec![vec![0.0; n + 1]; n + 1];
    for i in 1..=n {
        let du = params.diffusivities[i - 1] * u[i];
        a[i][i] = du;
        a[0][i] = -du;
        a[i][0] = -du;
        a[0][0] += du;
        let zdu = params.valences[i - 1] * du;
        q[i][i] = zdu;
        q[0][0] -= zdu;
    }
    ExtendedMatrices { a, q }
}

/// `G_ij = A_ij / sqrt(u_i u_j)`, zero where the product vanishes.
pub fn scaled_matrix_g(u: &[f64], params: &SpeciesParams) -> Matrix {
    let a = extended_matrices(u, params).a;
    scale_by_sqrt(&a, u)
}

fn scale_by_sqrt(a: &Matrix, u: &[f64]) -> Matrix {
    let m = a.len();
    let mut g = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            let p = u[i] * u[j];
            if p > 0.0 {
                g[i][j] = a[i][j] / p.sqrt();
            }
        }
    }
    g
}

/// Comparison matrix: `G` with every diffusivity replaced by `D_* = min D_i`.
pub fn comparison_matrix(u: &[f64], params: &SpeciesParams) -> Matrix {
    let d = params.d_min();
    let n = params.n();
    let mut a = vec![vec![0.0; n + 1]; n + 1];
    for i in 1..=n {
        let du = d * u[i];
        a[i][i] = du;
        a[0][i] = -du;
        a[i][0] = -du;
        a[0][0] += du;
    }
    scale_by_sqrt(&a, u)
}

fn sqrt_dot(y: &[f64], u: &[f64]) -> f64 {
    y.iter().zip(u).map(|(a, b)| b.sqrt() * a).sum()
}

/// `(P_L Y)_i = Y_i - sqrt(u_i) Σ_j sqrt(u_j) Y_j`.
pub fn project_l(y: &[f64], u: &[f64]) -> Vec<f64> {
    let s = sqrt_dot(y, u);
    y.iter().zip(u).map(|(a, b)| a - b.sqrt() * s).collect()
}

/// `(P_L⊥ Y)_i = sqrt(u_i) Σ_j sqrt(u_j) Y_j`.
pub fn project_lperp(y: &[f64], u: &[f64]) -> Vec<f64> {
    let s = sqrt_dot(y, u);
    u.iter().map(|b| b.sqrt() * s).collect()
}

pub fn quadratic_form(m: &Matrix, y: &[f64]) -> f64 {
    m.iter()
        .zip(y)
        .map(|(row, yi)| yi * row.iter().zip(y).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

pub fn mat_vec(m: &Matrix, y: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(y).map(|(a, b)| a * b).sum()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubspaceCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Coercivity of `G` on `L`: `(P_L Y)ᵀ G (P_L Y) ≥ D_* (|(P_L Y)_0|²/u_0 + Σ_i |(P_L Y)_i|²)`.
pub fn check_subspace_pd(u: &[f64], params: &SpeciesParams, y: &[f64]) -> Result<SubspaceCheck> {
    if !(u[0] > 0.0) {
        return Err(Error::NonPositiveConcentration {
            species: 0,
            cell: 0,
            value: u[0],
        });
    }
    let p = project_l(y, u);
    let g = scaled_matrix_g(u, params);
    let lhs = quadratic_form(&g, &p);
    let rhs = params.d_min() * (p[0] * p[0] / u[0] + p[1..].iter().map(|v| v * v).sum::<f64>());
    Ok(SubspaceCheck {
        lhs,
        rhs,
        holds: lhs >= rhs - 1e-12 * lhs.max(1.0),
    })
}

/// Bregman distance between two states, split into concentration and
/// potential parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeEntropyBreakdown {
    pub h1: f64,
    pub h2: f64,
}

impl RelativeEntropyBreakdown {
    pub fn total(&self) -> f64 {
        self.h1 + self.h2
    }
}

/// `∇_h(Φ - Φ̄)` with zero difference on Dirichlet faces, both states
/// sharing the same boundary potential.
fn potential_difference_gradient(state: &State, reference: &State, mesh: &Mesh) -> Vec<f64> {
    let d: Vec<f64> = state.phi.iter().zip(reference.phi.iter()).map(|(a, b)| a - b).collect();
    let zero = |s| if mesh.is_dirichlet(s) { Some(0.0) } else { None };
    mesh.face_gradient_unchecked(&d, zero(crate::mesh::Side::Left), zero(crate::mesh::Side::Right))
        .0
}

pub fn relative_entropy(
    state: &State,
    reference: &State,
    params: &SpeciesParams,
    mesh: &Mesh,
) -> Result<RelativeEntropyBreakdown> {
    let min = reference.u.iter().map(|f| f.min()).fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::ReferenceNotInterior { min });
    }
    let h = mesh.h();
    let mut h1 = 0.0;
    for (k, (a, b)) in state.u.iter().zip(&reference.u).enumerate() {
        for j in 0..mesh.n_cells() {
            if a[j] < 0.0 {
                return Err(Error::NonPositiveConcentration {
                    species: k,
                    cell: j,
                    value: a[j],
                });
            }
            let term = if a[j] == 0.0 { b[j] } else { bregman_scalar(a[j], b[j]) };
            h1 += h * term;
        }
    }
    let lam2 = params.lambda * params.lambda;
    let g = potential_difference_gradient(state, reference, mesh);
    let mut h2 = 0.5 * lam2 * mesh.face_energy(&g);
    if params.ell > 0.0 {
        let l2 = params.ell * params.ell;
        let lap: Vec<f64> = (0..mesh.n_cells())
            .map(|j| {
                ((state.phi[j] - state.phi_free[j]) - (reference.phi[j] - reference.phi_free[j])) / l2
            })
            .collect();
        h2 += 0.5 * lam2 * l2 * mesh.l2_norm(&lap).powi(2);
    }
    Ok(RelativeEntropyBreakdown { h1, h2 })
}

/// Right-hand side of the Csiszár–Kullback-type bound:
/// `½ (Σ_i ‖u_i - ū_i‖² + λ² ‖∇(Φ - Φ̄)‖²)`; never exceeds the relative entropy.
pub fn relative_entropy_lower_bound(state: &State, reference: &State, params: &SpeciesParams, mesh: &Mesh) -> f64 {
    let conc: f64 = state
        .u
        .iter()
        .zip(&reference.u)
        .map(|(a, b)| {
            let d: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
            mesh.l2_norm(&d).powi(2)
        })
        .sum();
    let g = potential_difference_gradient(state, reference, mesh);
    0.5 * (conc + params.lambda * params.lambda * mesh.face_energy(&g))
}

/// `Σ_i D_i Σ_f w_f û_i ∇w_i · ∇(w_i - w^D_i)`, the dissipation paired with
/// the test function `w - w^D`. Equals the plain dissipation for equilibrium data.
pub fn paired_dissipation(state: &State, bd: &BoundaryData, params: &SpeciesParams, mesh: &Mesh) -> f64 {
    (0..params.n())
        .map(|i| {
            let (ul, ur) = bd.u_bc(i + 1);
            let (wl, wr) = bd.w_bc(i);
            let means = face_means(&state.u[i + 1], ul, ur);
            let g = mesh.face_gradient_unchecked(&state.w[i], wl, wr);
            let gd = mesh.face_gradient_unchecked(&bd.w_d[i], wl, wr);
            let d = params.diffusivities[i];
            (0..mesh.n_faces())
                .map(|f| mesh.face_weight(f) * d * means[f] * g[f] * (g[f] - gd[f]))
                .sum::<f64>()
        })
        .sum()
}

/// `‖v‖² + |v|₁²` summed over ions with `v = w - w^D` and zero Dirichlet values.
pub fn regularization_norm(state: &State, bd: &BoundaryData, mesh: &Mesh) -> f64 {
    let zero = |s| if mesh.is_dirichlet(s) { Some(0.0) } else { None };
    regularization_variables(state, bd)
        .iter()
        .map(|v| {
            let g = mesh.face_gradient_unchecked(v, zero(crate::mesh::Side::Left), zero(crate::mesh::Side::Right));
            mesh.l2_norm(v).powi(2) + mesh.face_energy(&g)
        })
        .sum()
}

/// `∫ Σ_i r_i(u) (w_i - w^D_i)`, evaluated at the new state.
pub fn reaction_pairing(state: &State, bd: &BoundaryData, params: &SpeciesParams, mesh: &Mesh) -> f64 {
    crate::model::reaction_production(state, bd, params, mesh)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyStepCheck {
    pub step: usize,
    pub energy_before: f64,
    pub energy_after: f64,
    pub tau: f64,
    pub dissipation: f64,
    pub regularization: f64,
    pub reaction: f64,
    /// `H^k - H^{k-1} + τ D^k + τ ε R^k - τ P^k`; non-positive up to slack.
    pub excess: f64,
    pub violated: bool,
}

/// Checks the discrete free-energy inequality on every step of a trajectory.
///
/// For each step the quantity `H^k - H^{k-1} + τ Σ_i D_i ∫ û_i ∇w_i·∇(w_i - w^D_i)
/// + τ ε (‖v‖² + |v|₁²) - τ ∫ Σ_i r_i (w_i - w^D_i)` must not exceed `slack`.
/// With equilibrium data and no reactions this is the plain decay statement
/// `H^k + τ D^k + τ ε ‖v‖² ≤ H^{k-1}`.
pub fn energy_inequality_check(
    traj: &Trajectory,
    bd: &BoundaryData,
    params: &SpeciesParams,
    mesh: &Mesh,
    eps: f64,
    slack: f64,
) -> Result<Vec<EnergyStepCheck>> {
    let mut out = Vec::with_capacity(traj.reports.len());
    let mut before = match traj.states.first() {
        Some(s) => free_energy(s, bd, params, mesh)?,
        None => return Ok(out),
    };
    for (k, pair) in traj.states.windows(2).enumerate() {
        let (prev, next) = (&pair[0], &pair[1]);
        let tau = next.time - prev.time;
        let after = free_energy(next, bd, params, mesh)?;
        let dissipation = paired_dissipation(next, bd, params, mesh);
        let regularization = eps * regularization_norm(next, bd, mesh);
        let reaction = reaction_pairing(next, bd, params, mesh);
        let excess = after - before + tau * (dissipation + regularization - reaction);
        out.push(EnergyStepCheck {
            step: k + 1,
            energy_before: before,
            energy_after: after,
            tau,
            dissipation,
            regularization,
            reaction,
            excess,
            violated: !(excess <= slack),
        });
        before = after;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DissipationBound {
    pub dissipation: f64,
    pub lower_bound: f64,
}

impl DissipationBound {
    pub fn holds(&self, slack: f64) -> bool {
        self.dissipation >= self.lower_bound - slack
    }
}

/// Discrete dissipation and the lower bound
/// `(D_*/2) ∫ (Σ_i |∇√u_i|² + |∇log u_0|² + |∇u_0|²) - (Σ_i D_i z_i²) ∫ |∇Φ|²`,
/// all gradients taken as face differences with the boundary data on
/// Dirichlet faces.
pub fn dissipation_lower_bound(state: &State, bd: &BoundaryData, params: &SpeciesParams, mesh: &Mesh) -> DissipationBound {
    let n = params.n();
    let diss = crate::model::dissipation(state, bd, params, mesh);
    let face = |f: &CellField, l: Option<f64>, r: Option<f64>| mesh.face_energy(&mesh.face_gradient_unchecked(f, l, r));
    let mut positive = 0.0;
    for i in 1..=n {
        let (l, r) = bd.u_bc(i);
        let s: CellField = state.u[i].iter().map(|v| v.sqrt()).collect();
        positive += face(&s, l.map(f64::sqrt), r.map(f64::sqrt));
    }
    let (l0, r0) = bd.u_bc(0);
    let log0: CellField = state.u[0].iter().map(|v| v.ln()).collect();
    positive += face(&log0, l0.map(f64::ln), r0.map(f64::ln));
    positive += face(&state.u[0], l0, r0);
    let coupling: f64 = params
        .diffusivities
        .iter()
        .zip(&params.valences)
        .map(|(d, z)| d * z * z)
        .sum();
    let grad_phi = face(&state.phi, bd.phi_left(), bd.phi_right());
    DissipationBound {
        dissipation: diss,
        lower_bound: 0.5 * params.d_min() * positive - coupling * grad_phi,
    }
}

/// Per-step summary used by the CSV writers.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRecord {
    pub step: usize,
    pub time: f64,
    pub free_energy: f64,
    pub dissipation: f64,
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    pub saturation_error: f64,
    pub newton_iterations: usize,
    pub tau_used: f64,
    pub relative_entropy: Option<f64>,
}

impl DiagnosticsRecord {
    pub fn from_state(
        step: usize,
        state: &State,
        bd: &BoundaryData,
        params: &SpeciesParams,
        mesh: &Mesh,
        newton_iterations: usize,
        tau_used: f64,
    ) -> Result<Self> {
        Ok(Self {
            step,
            time: state.time,
            free_energy: free_energy(state, bd, params, mesh)?,
            dissipation: crate::model::dissipation(state, bd, params, mesh),
            u_min: state.u.iter().map(|f| f.min()).collect(),
            u_max: state.u.iter().map(|f| f.max()).collect(),
            saturation_error: state.max_saturation_error(),
            newton_iterations,
            tau_used,
            relative_entropy: None,
        })
    }
}

/// Records for every state of a trajectory; step 0 is the initial state.
pub fn trajectory_records(
    traj: &Trajectory,
    bd: &BoundaryData,
    params: &SpeciesParams,
    mesh: &Mesh,
) -> Result<Vec<DiagnosticsRecord>> {
    traj.states
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let (iters, tau) = if k == 0 {
                (0, 0.0)
            } else {
                let r = &traj.reports[k - 1];
                (r.newton_iterations, r.tau_used)
            };
            DiagnosticsRecord::from_state(k, s, bd, params, mesh, iters, tau)
        })
        .collect()
}

/// Simplex-sweep check of the reaction law: quasi-positivity and
/// non-positive total production. Returns the number of failing points.
pub fn reaction_class_violations(params: &SpeciesParams, resolution: usize) -> usize {
    let n = params.n();
    let mut failures = 0;
    let mut idx = vec![0usize; n];
    loop {
        let total: usize = idx.iter().sum();
        if total <= resolution {
            let mut u = vec![0.0; n + 1];
            for i in 0..n {
                u[i + 1] = idx[i] as f64 / resolution as f64;
            }
            u[0] = (resolution - total) as f64 / resolution as f64;
            let r = reaction_rates(&u, params);
            let quasi = (0..n).all(|i| u[i + 1] > 0.0 || r[i] == 0.0);
            let sign = r.iter().sum::<f64>() <= 0.0;
            if !(quasi && sign) {
                failures += 1;
            }
        }
        let mut k = 0;
        loop {
            if k == n {
                return failures;
            }
            idx[k] += 1;
            if idx[k] <= resolution {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}
