//! Implicit Euler time stepping in entropy variables.
//!
//! Each step solves, for the unknowns `w = v + w^D` and the potentials, the
//! finite-volume balance
//!
//! ```text
//! h (u_ij - u_ij^prev) / τ + F_i,j+1 - F_i,j + ε h (v_ij + (-Δ_h v_i)_j) = h r_i(u_j) + h s_ij
//! ```
//!
//! together with the split Poisson–Fermi rows, where `u = FD(w, Φ)`. Because
//! concentrations are always recovered from the Fermi–Dirac map, every
//! accepted state lies inside the simplex.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{newton_solve, norm_inf, BandedMatrix, NewtonOptions, NewtonResult};
use crate::mesh::{CellField, Mesh};
use crate::model::{
    dissipation, entropy_variables, fermi_dirac_into, free_energy, reaction_jacobian, reaction_rates,
    BoundaryData, SpeciesParams, State,
};
use crate::poisson_fermi::{charge_density, laplacian_row, solve_split, PotentialPair};

/// Lower clipping margin applied to initial volume fractions.
pub const INITIAL_CLIP: f64 = 1e-12;

/// Outer iterations allowed for the decoupled fixed-point solve.
const MAX_OUTER: usize = 200;

/// Additive source terms used by manufactured-solution studies.
pub trait SourceTerms {
    /// Volume source in the balance of ion `i` (0-based).
    fn mass(&self, i: usize, x: f64, t: f64) -> f64;
    /// Extra charge density on the right-hand side of the Poisson–Fermi equation.
    fn charge(&self, x: f64, t: f64) -> f64;
}

/// Everything that stays fixed over a run.
#[derive(Clone, Copy)]
pub struct Problem<'a> {
    pub mesh: &'a Mesh,
    pub params: &'a SpeciesParams,
    pub bd: &'a BoundaryData,
    pub sources: Option<&'a dyn SourceTerms>,
}

impl<'a> Problem<'a> {
    pub fn new(mesh: &'a Mesh, params: &'a SpeciesParams, bd: &'a BoundaryData) -> Self {
        Self {
            mesh,
            params,
            bd,
            sources: None,
        }
    }

    pub fn with_sources(mut self, sources: &'a dyn SourceTerms) -> Self {
        self.sources = Some(sources);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    #[default]
    FullyCoupled,
    FixedPointDecoupled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepperOptions {
    pub tau: f64,
    pub eps: f64,
    pub newton: NewtonOptions,
    pub coupling: Coupling,
    pub max_step_halvings: usize,
    /// Consecutive successful steps after which a reduced step is doubled.
    pub restore_after: usize,
}

impl StepperOptions {
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            eps: 1e-8,
            newton: NewtonOptions::default(),
            coupling: Coupling::FullyCoupled,
            max_step_halvings: 8,
            restore_after: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidParams(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidParams(format!("eps must be non-negative, got {}", self.eps)));
        }
        self.newton.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub newton_iterations: usize,
    pub residual_norm: f64,
    pub tau_used: f64,
    pub halvings: usize,
    pub energy_before: f64,
    pub energy_after: f64,
    pub dissipation: f64,
    pub accepted: bool,
}

/// States `states[0..=k]` and the reports of the steps between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub reports: Vec<StepReport>,
}

impl Trajectory {
    pub fn last(&self) -> &State {
        self.states.last().expect("trajectory holds the initial state")
    }
}

/// Placement of the per-cell unknowns `[w_1, …, w_n, (φ), Φ]`.
#[derive(Debug, Clone, Copy)]
struct Layout {
    n: usize,
    cells: usize,
    split: bool,
    m: usize,
}

impl Layout {
    fn new(params: &SpeciesParams, mesh: &Mesh) -> Self {
        let n = params.n();
        let split = params.ell > 0.0;
        Self {
            n,
            cells: mesh.n_cells(),
            split,
            m: n + 1 + usize::from(split),
        }
    }

    fn len(&self) -> usize {
        self.m * self.cells
    }

    fn w(&self, j: usize, i: usize) -> usize {
        j * self.m + i
    }

    fn phi_free(&self, j: usize) -> usize {
        debug_assert!(self.split);
        j * self.m + self.n
    }

    fn phi(&self, j: usize) -> usize {
        j * self.m + self.m - 1
    }

    /// Column of local derivative slot `c` (`c < n` for `w_{c+1}`, `c = n` for `Φ`).
    fn slot(&self, j: usize, c: usize) -> usize {
        if c < self.n {
            self.w(j, c)
        } else {
            self.phi(j)
        }
    }

    fn pack(&self, w: &[CellField], pot: &PotentialPair) -> Vec<f64> {
        let mut x = vec![0.0; self.len()];
        for j in 0..self.cells {
            for i in 0..self.n {
                x[self.w(j, i)] = w[i][j];
            }
            if self.split {
                x[self.phi_free(j)] = pot.phi_free[j];
            }
            x[self.phi(j)] = pot.phi[j];
        }
        x
    }

    fn unpack(&self, x: &[f64]) -> (Vec<CellField>, PotentialPair) {
        let w = (0..self.n)
            .map(|i| (0..self.cells).map(|j| x[self.w(j, i)]).collect())
            .collect();
        let phi: CellField = (0..self.cells).map(|j| x[self.phi(j)]).collect();
        let phi_free = if self.split {
            (0..self.cells).map(|j| x[self.phi_free(j)]).collect()
        } else {
            phi.clone()
        };
        (w, PotentialPair { phi_free, phi })
    }

    fn bandwidth(&self) -> usize {
        2 * self.m - 1
    }
}

/// Concentrations of one cell and their derivatives with respect to
/// `(w_1, …, w_n, Φ)`, stored row-major as `du[k * (n + 1) + c]`.
fn cell_eval(w: &[f64], phi: f64, z: &[f64], u: &mut [f64], du: &mut [f64]) {
    let n = w.len();
    fermi_dirac_into(w, phi, z, u);
    let zbar: f64 = (0..n).map(|k| z[k] * u[k + 1]).sum();
    let s = n + 1;
    for c in 0..n {
        du[c] = -u[0] * u[c + 1];
    }
    du[n] = u[0] * zbar;
    for i in 1..=n {
        for c in 0..n {
            let delta = if c + 1 == i { 1.0 } else { 0.0 };
            du[i * s + c] = u[i] * (delta - u[c + 1]);
        }
        du[i * s + n] = -u[i] * (z[i - 1] - zbar);
    }
}

struct StepContext<'a, 'b> {
    problem: &'b Problem<'a>,
    prev: &'b State,
    tau: f64,
    t_new: f64,
    eps: f64,
    layout: Layout,
    /// Background plus manufactured charge at `t_new`.
    fixed_charge: Vec<f64>,
    /// Manufactured mass sources at `t_new`, `[i][j]`.
    mass_source: Option<Vec<Vec<f64>>>,
}

impl<'a, 'b> StepContext<'a, 'b> {
    fn new(problem: &'b Problem<'a>, prev: &'b State, tau: f64, eps: f64, t_new: f64) -> Self {
        let mesh = problem.mesh;
        let layout = Layout::new(problem.params, mesh);
        let centers = mesh.centers();
        let mut fixed_charge = problem.bd.background.0.clone();
        let mut mass_source = None;
        if let Some(src) = problem.sources {
            for (j, x) in centers.iter().enumerate() {
                fixed_charge[j] += src.charge(*x, t_new);
            }
            mass_source = Some(
                (0..layout.n)
                    .map(|i| centers.iter().map(|x| src.mass(i, *x, t_new)).collect())
                    .collect(),
            );
        }
        Self {
            problem,
            prev,
            tau,
            t_new,
            eps,
            layout,
            fixed_charge,
            mass_source,
        }
    }

    fn cells(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let l = self.layout;
        let z = &self.problem.params.valences;
        let mut us = Vec::with_capacity(l.cells);
        let mut dus = Vec::with_capacity(l.cells);
        let mut wj = vec![0.0; l.n];
        for j in 0..l.cells {
            for i in 0..l.n {
                wj[i] = x[l.w(j, i)];
            }
            let mut u = vec![0.0; l.n + 1];
            let mut du = vec![0.0; (l.n + 1) * (l.n + 1)];
            cell_eval(&wj, x[l.phi(j)], z, &mut u, &mut du);
            us.push(u);
            dus.push(du);
        }
        (us, dus)
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let l = self.layout;
        let mesh = self.problem.mesh;
        let params = self.problem.params;
        let bd = self.problem.bd;
        let h = mesh.h();
        let nc = l.cells;
        let (us, _) = self.cells(x);
        let mut r = vec![0.0; l.len()];

        for i in 0..l.n {
            let d = params.diffusivities[i];
            let (ul, ur) = bd.u_bc(i + 1);
            let (wl, wr) = bd.w_bc(i);
            let mut flux = vec![0.0; nc + 1];
            for f in 1..nc {
                let (a, b) = (f - 1, f);
                let mean = 0.5 * (us[a][i + 1] + us[b][i + 1]);
                flux[f] = -d * mean * (x[l.w(b, i)] - x[l.w(a, i)]) / h;
            }
            if let (Some(ub), Some(wb)) = (ul, wl) {
                let mean = 0.5 * (ub + us[0][i + 1]);
                flux[0] = -d * mean * (x[l.w(0, i)] - wb) / (0.5 * h);
            }
            if let (Some(ub), Some(wb)) = (ur, wr) {
                let mean = 0.5 * (us[nc - 1][i + 1] + ub);
                flux[nc] = -d * mean * (wb - x[l.w(nc - 1, i)]) / (0.5 * h);
            }
            for j in 0..nc {
                let mut v = h * (us[j][i + 1] - self.prev.u[i + 1][j]) / self.tau + flux[j + 1] - flux[j];
                if self.eps > 0.0 {
                    let vj = x[l.w(j, i)] - bd.w_d[i][j];
                    let (lo, diag, up) = laplacian_row(mesh, j);
                    let mut lap = diag * vj;
                    if j > 0 {
                        lap += lo * (x[l.w(j - 1, i)] - bd.w_d[i][j - 1]);
                    }
                    if j + 1 < nc {
                        lap += up * (x[l.w(j + 1, i)] - bd.w_d[i][j + 1]);
                    }
                    v += self.eps * h * (vj + lap);
                }
                if let Some(src) = &self.mass_source {
                    v -= h * src[i][j];
                }
                r[l.w(j, i)] = v;
            }
        }
        if params.has_reactions() {
            for j in 0..nc {
                let rates = reaction_rates(&us[j], params);
                for i in 0..l.n {
                    r[l.w(j, i)] -= h * rates[i];
                }
            }
        }

        let ucells: Vec<CellField> = (0..=l.n).map(|k| us.iter().map(|u| u[k]).collect()).collect();
        let rho = charge_density(&ucells, &self.fixed_charge, params);
        let (_, pot) = l.unpack(x);
        let lam2 = params.lambda * params.lambda;
        let (pl, pr) = (bd.phi_left(), bd.phi_right());
        if l.split {
            let ell2 = params.ell * params.ell;
            let lap_free = crate::poisson_fermi::neg_laplacian_unchecked(mesh, &pot.phi_free, pl, pr);
            let lap = crate::poisson_fermi::neg_laplacian_unchecked(mesh, &pot.phi, pl, pr);
            for j in 0..nc {
                r[l.phi_free(j)] = h * (lam2 * lap_free[j] - rho[j]);
                r[l.phi(j)] = h * (ell2 * lap[j] + pot.phi[j] - pot.phi_free[j]);
            }
        } else {
            let lap = crate::poisson_fermi::neg_laplacian_unchecked(mesh, &pot.phi, pl, pr);
            for j in 0..nc {
                r[l.phi(j)] = h * (lam2 * lap[j] - rho[j]);
            }
        }
        r
    }

    fn jacobian(&self, x: &[f64]) -> BandedMatrix {
        let l = self.layout;
        let mesh = self.problem.mesh;
        let params = self.problem.params;
        let bd = self.problem.bd;
        let h = mesh.h();
        let nc = l.cells;
        let s = l.n + 1;
        let (us, dus) = self.cells(x);
        let bw = l.bandwidth();
        let mut jac = BandedMatrix::zeros(l.len(), bw, bw);

        for i in 0..l.n {
            let d = params.diffusivities[i];
            let (ul, ur) = bd.u_bc(i + 1);
            let (wl, wr) = bd.w_bc(i);
            for j in 0..nc {
                let row = l.w(j, i);
                for c in 0..s {
                    jac.add(row, l.slot(j, c), h / self.tau * dus[j][(i + 1) * s + c]);
                }
            }
            // Face f between cells a = f - 1 and b = f; row a gets +F, row b gets -F.
            for f in 1..nc {
                let (a, b) = (f - 1, f);
                let mean = 0.5 * (us[a][i + 1] + us[b][i + 1]);
                let dw = x[l.w(b, i)] - x[l.w(a, i)];
                let coef = d / h;
                let mut entries: Vec<(usize, f64)> = vec![
                    (l.w(b, i), -coef * mean),
                    (l.w(a, i), coef * mean),
                ];
                for c in 0..s {
                    entries.push((l.slot(a, c), -coef * dw * 0.5 * dus[a][(i + 1) * s + c]));
                    entries.push((l.slot(b, c), -coef * dw * 0.5 * dus[b][(i + 1) * s + c]));
                }
                for (col, val) in entries {
                    jac.add(l.w(a, i), col, val);
                    jac.add(l.w(b, i), col, -val);
                }
            }
            if let (Some(ub), Some(wb)) = (ul, wl) {
                let mean = 0.5 * (ub + us[0][i + 1]);
                let dw = x[l.w(0, i)] - wb;
                let coef = 2.0 * d / h;
                let row = l.w(0, i);
                jac.add(row, l.w(0, i), coef * mean);
                for c in 0..s {
                    jac.add(row, l.slot(0, c), coef * dw * 0.5 * dus[0][(i + 1) * s + c]);
                }
            }
            if let (Some(ub), Some(wb)) = (ur, wr) {
                let a = nc - 1;
                let mean = 0.5 * (us[a][i + 1] + ub);
                let dw = wb - x[l.w(a, i)];
                let coef = 2.0 * d / h;
                let row = l.w(a, i);
                jac.add(row, l.w(a, i), coef * mean);
                for c in 0..s {
                    jac.add(row, l.slot(a, c), -coef * dw * 0.5 * dus[a][(i + 1) * s + c]);
                }
            }
            if self.eps > 0.0 {
                for j in 0..nc {
                    let (lo, diag, up) = laplacian_row(mesh, j);
                    let row = l.w(j, i);
                    jac.add(row, l.w(j, i), self.eps * h * (1.0 + diag));
                    if j > 0 {
                        jac.add(row, l.w(j - 1, i), self.eps * h * lo);
                    }
                    if j + 1 < nc {
                        jac.add(row, l.w(j + 1, i), self.eps * h * up);
                    }
                }
            }
        }
        if params.has_reactions() {
            for j in 0..nc {
                let rj = reaction_jacobian(&us[j], params);
                for i in 0..l.n {
                    for c in 0..s {
                        let v: f64 = (0..s).map(|m| rj[i][m] * dus[j][m * s + c]).sum();
                        jac.add(l.w(j, i), l.slot(j, c), -h * v);
                    }
                }
            }
        }

        let lam2 = params.lambda * params.lambda;
        let charge_row = if l.split { Layout::phi_free } else { Layout::phi };
        for j in 0..nc {
            let row = charge_row(&l, j);
            let (lo, diag, up) = laplacian_row(mesh, j);
            let target = |jj: usize| if l.split { l.phi_free(jj) } else { l.phi(jj) };
            jac.add(row, target(j), h * lam2 * diag);
            if j > 0 {
                jac.add(row, target(j - 1), h * lam2 * lo);
            }
            if j + 1 < nc {
                jac.add(row, target(j + 1), h * lam2 * up);
            }
            for c in 0..s {
                let v: f64 = (0..l.n).map(|k| params.valences[k] * dus[j][(k + 1) * s + c]).sum();
                jac.add(row, l.slot(j, c), -h * v);
            }
            if l.split {
                let ell2 = params.ell * params.ell;
                let row = l.phi(j);
                jac.add(row, l.phi(j), h * (ell2 * diag + 1.0));
                jac.add(row, l.phi_free(j), -h);
                if j > 0 {
                    jac.add(row, l.phi(j - 1), h * ell2 * lo);
                }
                if j + 1 < nc {
                    jac.add(row, l.phi(j + 1), h * ell2 * up);
                }
            }
        }
        jac
    }

    fn solve(&self, x0: &[f64], opts: &StepperOptions) -> NewtonResult {
        match opts.coupling {
            Coupling::FullyCoupled => newton_solve(
                |x: &[f64]| self.residual(x),
                |x: &[f64]| self.jacobian(x),
                x0,
                &opts.newton,
            ),
            Coupling::FixedPointDecoupled => self.solve_decoupled(x0, &opts.newton),
        }
    }

    fn potential_slots(&self) -> Vec<usize> {
        (self.layout.n..self.layout.m).collect()
    }

    fn entropy_slots(&self) -> Vec<usize> {
        (0..self.layout.n).collect()
    }

    fn solve_decoupled(&self, x0: &[f64], newton: &NewtonOptions) -> NewtonResult {
        let mut x = x0.to_vec();
        let mut iterations = 0;
        let pot = self.potential_slots();
        let ent = self.entropy_slots();
        for _ in 0..MAX_OUTER {
            let rnorm = norm_inf(&self.residual(&x));
            if rnorm <= newton.abs_tol || !rnorm.is_finite() {
                return NewtonResult {
                    solution: x,
                    iterations,
                    residual_norm: rnorm,
                    converged: rnorm <= newton.abs_tol,
                };
            }
            for slots in [&pot, &ent] {
                let sub = solve_subsystem(self, &x, slots, newton);
                iterations += sub.iterations;
                if !sub.converged {
                    return NewtonResult {
                        solution: x,
                        iterations,
                        residual_norm: rnorm,
                        converged: false,
                    };
                }
                x = sub.solution;
            }
        }
        let rnorm = norm_inf(&self.residual(&x));
        NewtonResult {
            solution: x,
            iterations,
            residual_norm: rnorm,
            converged: rnorm <= newton.abs_tol,
        }
    }
}

/// Newton on the unknowns in local block slots `slots`, all others frozen at `x`.
fn solve_subsystem(ctx: &StepContext, x: &[f64], slots: &[usize], newton: &NewtonOptions) -> NewtonResult {
    let l = ctx.layout;
    let k = slots.len();
    let map: Vec<usize> = (0..l.cells)
        .flat_map(|j| slots.iter().map(move |&c| j * l.m + c))
        .collect();
    let embed = |y: &[f64]| {
        let mut full = x.to_vec();
        for (a, &g) in map.iter().enumerate() {
            full[g] = y[a];
        }
        full
    };
    let y0: Vec<f64> = map.iter().map(|&g| x[g]).collect();
    let bw = 2 * k - 1;
    let res = newton_solve(
        |y: &[f64]| {
            let r = ctx.residual(&embed(y));
            map.iter().map(|&g| r[g]).collect()
        },
        |y: &[f64]| {
            let jf = ctx.jacobian(&embed(y));
            let mut js = BandedMatrix::zeros(map.len(), bw, bw);
            for (a, &ga) in map.iter().enumerate() {
                let lo = a.saturating_sub(bw);
                let hi = (a + bw + 1).min(map.len());
                for (b, &gb) in map.iter().enumerate().take(hi).skip(lo) {
                    let v = jf.get(ga, gb);
                    if v != 0.0 {
                        js.set(a, b, v);
                    }
                }
            }
            js
        },
        &y0,
        newton,
    );
    NewtonResult {
        solution: embed(&res.solution),
        iterations: res.iterations,
        residual_norm: res.residual_norm,
        converged: res.converged,
    }
}

fn check_shapes(problem: &Problem, w: &[CellField]) -> Result<()> {
    let n = problem.params.n();
    if w.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: w.len(),
        });
    }
    if let Some(bad) = w.iter().find(|f| f.len() != problem.mesh.n_cells()) {
        return Err(Error::DimensionMismatch {
            expected: problem.mesh.n_cells(),
            got: bad.len(),
        });
    }
    Ok(())
}

/// Residual of one implicit step at `w = v + w^D` and the given potentials.
///
/// Rows are grouped per cell as `[ion balances, (φ row), Φ row]`.
pub fn assemble_residual(
    v: &[CellField],
    potentials: &PotentialPair,
    prev: &State,
    problem: &Problem,
    opts: &StepperOptions,
) -> Result<Vec<f64>> {
    check_shapes(problem, v)?;
    let ctx = StepContext::new(problem, prev, opts.tau, opts.eps, prev.time + opts.tau);
    let w = add_reference(v, &problem.bd.w_d);
    Ok(ctx.residual(&ctx.layout.pack(&w, potentials)))
}

/// Jacobian of [`assemble_residual`] with respect to `(w, φ, Φ)`.
pub fn assemble_jacobian(
    v: &[CellField],
    potentials: &PotentialPair,
    prev: &State,
    problem: &Problem,
    opts: &StepperOptions,
) -> Result<BandedMatrix> {
    check_shapes(problem, v)?;
    let ctx = StepContext::new(problem, prev, opts.tau, opts.eps, prev.time + opts.tau);
    let w = add_reference(v, &problem.bd.w_d);
    Ok(ctx.jacobian(&ctx.layout.pack(&w, potentials)))
}

/// Largest column-relative gap between the analytic step Jacobian and
/// central differences at the given point.
pub fn step_jacobian_mismatch(
    v: &[CellField],
    potentials: &PotentialPair,
    prev: &State,
    problem: &Problem,
    opts: &StepperOptions,
) -> Result<f64> {
    check_shapes(problem, v)?;
    let ctx = StepContext::new(problem, prev, opts.tau, opts.eps, prev.time + opts.tau);
    let w = add_reference(v, &problem.bd.w_d);
    let x = ctx.layout.pack(&w, potentials);
    Ok(crate::linalg::jacobian_mismatch(
        &mut |y: &[f64]| ctx.residual(y),
        &mut |y: &[f64]| ctx.jacobian(y),
        &x,
    ))
}

fn add_reference(v: &[CellField], w_d: &[CellField]) -> Vec<CellField> {
    v.iter()
        .zip(w_d)
        .map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| x + y).collect())
        .collect()
}

/// `v = w - w^D` for every ion.
pub fn regularization_variables(state: &State, bd: &BoundaryData) -> Vec<CellField> {
    state
        .w
        .iter()
        .zip(&bd.w_d)
        .map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| x - y).collect())
        .collect()
}

/// One attempt at step size `tau`; `None` when the nonlinear solve fails.
fn try_step(prev: &State, problem: &Problem, opts: &StepperOptions, tau: f64) -> Option<(State, NewtonResult)> {
    let ctx = StepContext::new(problem, prev, tau, opts.eps, prev.time + tau);
    let x0 = ctx.layout.pack(&prev.w, &prev.potential_pair());
    let res = ctx.solve(&x0, opts);
    if !res.converged {
        return None;
    }
    let (w, pot) = ctx.layout.unpack(&res.solution);
    let state = State::from_entropy(w, pot, problem.params, ctx.t_new);
    if !state.within_bounds(1e-12) {
        return None;
    }
    Some((state, res))
}

fn step_with(prev: &State, problem: &Problem, opts: &StepperOptions, tau: f64) -> Result<(State, StepReport)> {
    let mut tau_try = tau;
    for halvings in 0..=opts.max_step_halvings {
        if let Some((state, res)) = try_step(prev, problem, opts, tau_try) {
            let energy_before = free_energy(prev, problem.bd, problem.params, problem.mesh)?;
            let energy_after = free_energy(&state, problem.bd, problem.params, problem.mesh)?;
            let report = StepReport {
                newton_iterations: res.iterations,
                residual_norm: res.residual_norm,
                tau_used: tau_try,
                halvings,
                energy_before,
                energy_after,
                dissipation: dissipation(&state, problem.bd, problem.params, problem.mesh),
                accepted: true,
            };
            return Ok((state, report));
        }
        if halvings < opts.max_step_halvings {
            tau_try *= 0.5;
        }
    }
    Err(Error::StepFailure {
        time: prev.time,
        tau: tau_try,
        halvings: opts.max_step_halvings,
    })
}

/// Advances `prev` by one implicit step of size `opts.tau`, halving on
/// solver failure.
pub fn step(prev: &State, problem: &Problem, opts: &StepperOptions) -> Result<(State, StepReport)> {
    opts.validate()?;
    check_shapes(problem, &prev.w)?;
    step_with(prev, problem, opts, opts.tau)
}

/// Clips the initial volume fractions into the open simplex, renormalizes,
/// and builds the matching potentials and entropy variables.
pub fn initial_state(u0: &[CellField], problem: &Problem, time: f64) -> Result<State> {
    let n = problem.params.n();
    let cells = problem.mesh.n_cells();
    if u0.len() != n + 1 {
        return Err(Error::DimensionMismatch {
            expected: n + 1,
            got: u0.len(),
        });
    }
    let mut u: Vec<CellField> = vec![CellField::zeros(cells); n + 1];
    for j in 0..cells {
        let mut sum = 0.0;
        for k in 0..=n {
            if u0[k].len() != cells {
                return Err(Error::DimensionMismatch {
                    expected: cells,
                    got: u0[k].len(),
                });
            }
            let v = u0[k][j];
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParams(format!(
                    "initial u_{k} in cell {j} is {v}, expected a value in [0, 1]"
                )));
            }
            let c = v.max(INITIAL_CLIP);
            u[k][j] = c;
            sum += c;
        }
        for k in 0..=n {
            u[k][j] /= sum;
        }
    }
    let mut charge = problem.bd.background.0.clone();
    if let Some(src) = problem.sources {
        for (j, x) in problem.mesh.centers().iter().enumerate() {
            charge[j] += src.charge(*x, time);
        }
    }
    let rho = charge_density(&u, &charge, problem.params);
    let pot = solve_split(&rho, problem.bd.phi_left(), problem.bd.phi_right(), problem.params, problem.mesh)?;
    let mut w = vec![CellField::zeros(cells); n];
    for j in 0..cells {
        let uj: Vec<f64> = u.iter().map(|f| f[j]).collect();
        let wj = entropy_variables(&uj, pot.phi[j], problem.params)?;
        for i in 0..n {
            w[i][j] = wj[i];
        }
    }
    Ok(State::from_entropy(w, pot, problem.params, time))
}

/// Potentials consistent with frozen entropy variables `w`, i.e. the
/// nonlinear Poisson–Fermi problem with `u = FD(w, Φ)`.
pub fn solve_potentials_for(
    w: &[CellField],
    guess: &PotentialPair,
    problem: &Problem,
    newton: &NewtonOptions,
    time: f64,
) -> Result<PotentialPair> {
    check_shapes(problem, w)?;
    // Only the potential rows are solved; they involve neither the previous
    // state nor the step size.
    let dummy = State::from_entropy(w.to_vec(), guess.clone(), problem.params, time);
    let ctx = StepContext::new(problem, &dummy, 1.0, 0.0, time);
    let x = ctx.layout.pack(w, guess);
    let res = solve_subsystem(&ctx, &x, &ctx.potential_slots(), newton);
    if !res.converged {
        return Err(Error::NotConverged {
            residual: res.residual_norm,
            iterations: res.iterations,
        });
    }
    Ok(ctx.layout.unpack(&res.solution).1)
}

/// Thermal equilibrium: `w ≡ w^D` with self-consistent potentials.
pub fn equilibrium_state(problem: &Problem, newton: &NewtonOptions) -> Result<State> {
    let pot = solve_potentials_for(&problem.bd.w_d, &problem.bd.potential, problem, newton, 0.0)?;
    Ok(State::from_entropy(problem.bd.w_d.clone(), pot, problem.params, 0.0))
}

/// Steps from `initial` until `t_end`, reducing the step on solver failure
/// and restoring it after `restore_after` consecutive successes.
pub fn run_from(initial: State, problem: &Problem, opts: &StepperOptions, t_end: f64) -> Result<Trajectory> {
    opts.validate()?;
    check_shapes(problem, &initial.w)?;
    let mut states = vec![initial];
    let mut reports = Vec::new();
    let mut tau = opts.tau;
    let mut streak = 0;
    let t0 = states[0].time;
    let guard = 1e-9 * opts.tau;
    let mut uniform = true;
    loop {
        let prev = states.last().expect("non-empty");
        let remaining = t_end - prev.time;
        if remaining <= guard {
            break;
        }
        let this_tau = if remaining < tau + guard { remaining } else { tau };
        let (mut state, report) = step_with(prev, problem, opts, this_tau)?;
        if report.halvings > 0 {
            tau = report.tau_used;
            streak = 0;
        } else if tau < opts.tau {
            streak += 1;
            if streak >= opts.restore_after {
                tau = (2.0 * tau).min(opts.tau);
                streak = 0;
            }
        }
        // Uniform runs get times free of accumulated rounding.
        uniform &= report.tau_used == opts.tau;
        if uniform {
            state.time = t0 + (reports.len() + 1) as f64 * opts.tau;
        }
        debug_assert!(state.within_bounds(1e-12));
        reports.push(report);
        states.push(state);
    }
    Ok(Trajectory { states, reports })
}

/// Builds the initial state from `u0` and steps until `t_end`.
pub fn run(u0: &[CellField], problem: &Problem, opts: &StepperOptions, t_end: f64) -> Result<Trajectory> {
    let initial = initial_state(u0, problem, 0.0)?;
    run_from(initial, problem, opts, t_end)
}
