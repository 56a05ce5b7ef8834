//! Manufactured-solution convergence studies.
//!
//! All studies live on `(0, 1)` with a Dirichlet end at `x = 0` and a
//! Neumann end at `x = 1`, using the species of the configuration.

use std::f64::consts::PI;
use std::str::FromStr;

use pnpf_core::model::reaction_rates;
use pnpf_core::poisson_fermi::{solve_helmholtz, solve_poisson, solve_split};
use pnpf_core::stepper::{self, Problem, SourceTerms};
use pnpf_core::{BoundaryData, BoundaryKind, CellField, DirichletData, Mesh, SpeciesParams, StepperOptions};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::AppError;
use crate::output::{fmt_real, write_table};

pub const GRIDS: [usize; 3] = [50, 100, 200];
pub const TIME_STEPS: [f64; 3] = [0.01, 0.005, 0.0025];
pub const TIME_GRID: usize = 400;
pub const SPACE_HORIZON: f64 = 0.1;
pub const TIME_HORIZON: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmsCase {
    /// Poisson, Helmholtz and composed fourth-order solves.
    Elliptic,
    /// Coupled transport with a time-dependent solution.
    Parabolic,
    /// Constant solution in thermal equilibrium; errors sit at solver tolerance.
    Equilibrium,
}

impl FromStr for MmsCase {
    type Err = AppError;

    fn from_str(s: &str) -> Result<Self, AppError> {
        match s {
            "elliptic" | "elliptic-only" => Ok(MmsCase::Elliptic),
            "parabolic" | "parabolic-coupled" => Ok(MmsCase::Parabolic),
            "equilibrium" => Ok(MmsCase::Equilibrium),
            other => Err(AppError::Usage(format!(
                "unknown manufactured solution `{other}` (expected elliptic, parabolic or equilibrium)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub study: String,
    pub n_cells: usize,
    pub h: f64,
    pub tau: f64,
    pub error: f64,
    /// Observed order against the previous row of the same study.
    pub order: Option<f64>,
}

fn mixed_mesh(n: usize) -> Mesh {
    Mesh::new(1.0, n, BoundaryKind::Dirichlet, BoundaryKind::Neumann).expect("valid study mesh")
}

fn l2_error(mesh: &Mesh, got: &[f64], exact: impl Fn(f64) -> f64) -> f64 {
    let d: Vec<f64> = got.iter().zip(mesh.centers()).map(|(g, x)| g - exact(x)).collect();
    mesh.l2_norm(&d)
}

/// Fills in observed orders `log(e_prev / e) / log(r_prev / r)` where `r` is
/// `h` for spatial studies and `τ` for temporal ones.
fn attach_orders(rows: &mut [ConvergenceRow], by_tau: bool) {
    for k in 1..rows.len() {
        if rows[k].study != rows[k - 1].study {
            continue;
        }
        let (a, b) = (&rows[k - 1], &rows[k]);
        let (ra, rb) = if by_tau { (a.tau, b.tau) } else { (a.h, b.h) };
        rows[k].order = Some((a.error / b.error).ln() / (ra / rb).ln());
    }
}

/// Elliptic studies: `-λ²φ'' = ρ` with `φ* = cos πx`, `-ℓ²Φ'' + Φ = φ` with
/// `Φ* = cos πx`, and the composed fourth-order solve with `Φ* = 1 + sin(πx/2)`.
pub fn elliptic_study(params: &SpeciesParams) -> Result<Vec<ConvergenceRow>, AppError> {
    let lam2 = params.lambda * params.lambda;
    let ell = if params.ell > 0.0 { params.ell } else { 0.1 };
    let k = 0.5 * PI;
    let mut rows = Vec::new();
    for n in GRIDS {
        let mesh = mixed_mesh(n);
        let rho = mesh.sample(|x| lam2 * PI * PI * (PI * x).cos());
        let phi = solve_poisson(&rho, Some(1.0), None, &mesh, params.lambda)?;
        rows.push(ConvergenceRow {
            study: "poisson".into(),
            n_cells: n,
            h: mesh.h(),
            tau: 0.0,
            error: l2_error(&mesh, &phi, |x| (PI * x).cos()),
            order: None,
        });
    }
    for n in GRIDS {
        let mesh = mixed_mesh(n);
        let src = mesh.sample(|x| (1.0 + ell * ell * PI * PI) * (PI * x).cos());
        let big = solve_helmholtz(&src, Some(1.0), None, &mesh, ell)?;
        rows.push(ConvergenceRow {
            study: "helmholtz".into(),
            n_cells: n,
            h: mesh.h(),
            tau: 0.0,
            error: l2_error(&mesh, &big, |x| (PI * x).cos()),
            order: None,
        });
    }
    for n in GRIDS {
        let mesh = mixed_mesh(n);
        let l2 = params.ell * params.ell;
        let rho = mesh.sample(|x| lam2 * (l2 * k.powi(4) + k * k) * (k * x).sin());
        let pair = solve_split(&rho, Some(1.0), None, params, &mesh)?;
        let e_big = l2_error(&mesh, &pair.phi, |x| 1.0 + (k * x).sin());
        let e_free = l2_error(&mesh, &pair.phi_free, |x| 1.0 + (1.0 + l2 * k * k) * (k * x).sin());
        rows.push(ConvergenceRow {
            study: "composed".into(),
            n_cells: n,
            h: mesh.h(),
            tau: 0.0,
            error: (e_big * e_big + e_free * e_free).sqrt(),
            order: None,
        });
    }
    attach_orders(&mut rows, false);
    Ok(rows)
}

/// `u_i = c_i + b_i g(t) sin²(kx)`, `Φ = p g(t) sin(kx)` with `g = cos ωt`,
/// `k = π/2`. The profile is flat at `x = 0` in time and has zero slope at
/// `x = 1`, matching Dirichlet–Neumann data; `ΔΦ` vanishes at `x = 0` and
/// its slope vanishes at `x = 1`.
#[derive(Debug, Clone)]
pub struct ManufacturedTransport {
    pub params: SpeciesParams,
    pub c: Vec<f64>,
    pub b: Vec<f64>,
    pub p: f64,
    pub omega: f64,
}

const K: f64 = 0.5 * PI;

impl ManufacturedTransport {
    pub fn new(params: &SpeciesParams) -> Self {
        let n = params.n();
        let nf = n as f64;
        Self {
            params: params.clone(),
            c: vec![0.4 / nf; n],
            b: (0..n).map(|i| if i % 2 == 0 { 0.15 / nf } else { -0.1 / nf }).collect(),
            p: 0.3,
            omega: 3.0,
        }
    }

    pub fn stationary(params: &SpeciesParams) -> Self {
        let mut s = Self::new(params);
        s.b.iter_mut().for_each(|v| *v = 0.0);
        s.p = 0.0;
        s
    }

    fn g(&self, t: f64) -> f64 {
        (self.omega * t).cos()
    }

    fn dg(&self, t: f64) -> f64 {
        -self.omega * (self.omega * t).sin()
    }

    /// `(u_0, …, u_n)` and their first and second `x`-derivatives.
    fn profile(&self, x: f64, t: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.c.len();
        let g = self.g(t);
        let s = (K * x).sin().powi(2);
        let s1 = K * (2.0 * K * x).sin();
        let s2 = 2.0 * K * K * (2.0 * K * x).cos();
        let mut u = vec![0.0; n + 1];
        let mut u1 = vec![0.0; n + 1];
        let mut u2 = vec![0.0; n + 1];
        for i in 0..n {
            u[i + 1] = self.c[i] + self.b[i] * g * s;
            u1[i + 1] = self.b[i] * g * s1;
            u2[i + 1] = self.b[i] * g * s2;
        }
        u[0] = 1.0 - u[1..].iter().sum::<f64>();
        u1[0] = -u1[1..].iter().sum::<f64>();
        u2[0] = -u2[1..].iter().sum::<f64>();
        (u, u1, u2)
    }

    pub fn u(&self, k: usize, x: f64, t: f64) -> f64 {
        self.profile(x, t).0[k]
    }

    pub fn phi(&self, x: f64, t: f64) -> f64 {
        self.p * self.g(t) * (K * x).sin()
    }

    fn boundary_fractions(&self) -> Vec<f64> {
        self.profile(0.0, 0.0).0
    }
}

impl SourceTerms for ManufacturedTransport {
    fn mass(&self, i: usize, x: f64, t: f64) -> f64 {
        let (u, u1, u2) = self.profile(x, t);
        let d = self.params.diffusivities[i];
        let z = self.params.valences[i];
        let pg = self.p * self.g(t);
        let f1 = pg * K * (K * x).cos();
        let f2 = -pg * K * K * (K * x).sin();
        let ui = u[i + 1];
        let ui1 = u1[i + 1];
        let ui2 = u2[i + 1];
        let dj = -d
            * (ui2 - (ui1 * u1[0] + ui * u2[0]) / u[0] + ui * u1[0] * u1[0] / (u[0] * u[0])
                + z * (ui1 * f1 + ui * f2));
        let dt = self.b[i] * self.dg(t) * (K * x).sin().powi(2);
        dt + dj - reaction_rates(&u, &self.params)[i]
    }

    fn charge(&self, x: f64, t: f64) -> f64 {
        let u = self.profile(x, t).0;
        let lam2 = self.params.lambda * self.params.lambda;
        let l2 = self.params.ell * self.params.ell;
        let free: f64 = self.params.valences.iter().enumerate().map(|(i, z)| z * u[i + 1]).sum();
        lam2 * (l2 * K.powi(4) + K * K) * self.phi(x, t) - free
    }
}

/// Combined `L²` error of all volume fractions and `Φ` after running the
/// manufactured problem to `t_end`.
pub fn transport_error(
    sol: &ManufacturedTransport,
    n_cells: usize,
    tau: f64,
    t_end: f64,
    base: &StepperOptions,
) -> Result<f64, AppError> {
    let mesh = mixed_mesh(n_cells);
    let params = &sol.params;
    let bd = BoundaryData::new(
        &mesh,
        params,
        Some(DirichletData {
            u: sol.boundary_fractions(),
            phi: 0.0,
        }),
        None,
        CellField::zeros(n_cells),
    )?;
    let problem = Problem::new(&mesh, params, &bd).with_sources(sol);
    let u0: Vec<CellField> = (0..=params.n()).map(|k| mesh.sample(|x| sol.u(k, x, 0.0))).collect();
    let mut opts = *base;
    opts.tau = tau;
    let start = stepper::initial_state(&u0, &problem, 0.0)?;
    let traj = stepper::run_from(start, &problem, &opts, t_end)?;
    let last = traj.last();
    let t = last.time;
    let mut sq = 0.0;
    for k in 0..=params.n() {
        sq += l2_error(&mesh, &last.u[k], |x| sol.u(k, x, t)).powi(2);
    }
    sq += l2_error(&mesh, &last.phi, |x| sol.phi(x, t)).powi(2);
    Ok(sq.sqrt())
}

/// Spatial study with `τ = h²` on [`GRIDS`] and temporal study on a
/// [`TIME_GRID`]-cell mesh with [`TIME_STEPS`].
pub fn parabolic_study(params: &SpeciesParams, base: &StepperOptions) -> Result<Vec<ConvergenceRow>, AppError> {
    let sol = ManufacturedTransport::new(params);
    let mut space = Vec::new();
    for n in GRIDS {
        let h = 1.0 / n as f64;
        let tau = h * h;
        space.push(ConvergenceRow {
            study: "space".into(),
            n_cells: n,
            h,
            tau,
            error: transport_error(&sol, n, tau, SPACE_HORIZON, base)?,
            order: None,
        });
    }
    attach_orders(&mut space, false);
    let mut time = Vec::new();
    for tau in TIME_STEPS {
        time.push(ConvergenceRow {
            study: "time".into(),
            n_cells: TIME_GRID,
            h: 1.0 / TIME_GRID as f64,
            tau,
            error: transport_error(&sol, TIME_GRID, tau, TIME_HORIZON, base)?,
            order: None,
        });
    }
    attach_orders(&mut time, true);
    space.extend(time);
    Ok(space)
}

/// Stationary manufactured solution; errors reflect solver tolerance only.
pub fn equilibrium_study(params: &SpeciesParams, base: &StepperOptions) -> Result<Vec<ConvergenceRow>, AppError> {
    let sol = ManufacturedTransport::stationary(params);
    GRIDS
        .iter()
        .map(|&n| {
            let tau = 0.01;
            Ok(ConvergenceRow {
                study: "equilibrium".into(),
                n_cells: n,
                h: 1.0 / n as f64,
                tau,
                error: transport_error(&sol, n, tau, 0.1, base)?,
                order: None,
            })
        })
        .collect()
}

pub fn run_mms(cfg: &RunConfig, case: MmsCase) -> Result<Vec<ConvergenceRow>, AppError> {
    let params = cfg.build_params()?;
    let opts = cfg.build_options()?;
    match case {
        MmsCase::Elliptic => elliptic_study(&params),
        MmsCase::Parabolic => parabolic_study(&params, &opts),
        MmsCase::Equilibrium => equilibrium_study(&params, &opts),
    }
}

pub fn write_convergence(path: &std::path::Path, rows: &[ConvergenceRow]) -> Result<(), AppError> {
    let header: Vec<String> = ["study", "n_cells", "h", "tau", "error_l2", "order"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.study.clone(),
                r.n_cells.to_string(),
                fmt_real(r.h),
                fmt_real(r.tau),
                fmt_real(r.error),
                r.order.map(fmt_real).unwrap_or_default(),
            ]
        })
        .collect();
    write_table(path, &header, &body)
}
