//! Thermodynamic core of the Poisson–Nernst–Planck–Fermi model.
//!
//! Index convention used throughout the crate: concentration vectors carry
//! the solvent first, `u[0] = u_0`, followed by the ions `u[1..=n]`. Entropy
//! variables, diffusivities, valences and reaction rates are indexed by ion
//! only, so `w[i - 1]` belongs to `u[i]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{CellField, FaceField, Mesh, Side};
use crate::poisson_fermi::{self, PotentialPair};

/// Cap on `|w_i - z_i Φ|` before exponentiation. Keeps every component of
/// the Fermi–Dirac map a positive normal double.
pub const EXPONENT_CAP: f64 = 350.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reaction {
    #[default]
    None,
    /// `r_i = r_j = -rate * u_i * u_j` for two distinct ions `i`, `j` (1-based).
    BinaryAnnihilation { rate: f64, i: usize, j: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesParams {
    pub diffusivities: Vec<f64>,
    pub valences: Vec<f64>,
    /// Scaled Debye length.
    pub lambda: f64,
    /// Correlation length; zero gives the classical Poisson equation.
    pub ell: f64,
    #[serde(default)]
    pub reaction: Reaction,
}

impl SpeciesParams {
    pub fn new(
        diffusivities: Vec<f64>,
        valences: Vec<f64>,
        lambda: f64,
        ell: f64,
        reaction: Reaction,
    ) -> Result<Self> {
        let p = Self {
            diffusivities,
            valences,
            lambda,
            ell,
            reaction,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.diffusivities.len();
        if n == 0 {
            return Err(Error::InvalidParams("need at least one ion species".into()));
        }
        if self.valences.len() != n {
            return Err(Error::InvalidParams(format!(
                "{} diffusivities but {} valences",
                n,
                self.valences.len()
            )));
        }
        if let Some(d) = self.diffusivities.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(Error::InvalidParams(format!("diffusivity must be positive, got {d}")));
        }
        if self.valences.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidParams("valences must be finite".into()));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidParams(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.ell.is_finite() && self.ell >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "ell must be non-negative, got {}",
                self.ell
            )));
        }
        if let Reaction::BinaryAnnihilation { rate, i, j } = self.reaction {
            if !(rate.is_finite() && rate >= 0.0) {
                return Err(Error::InvalidParams(format!(
                    "reaction rate must be non-negative, got {rate}"
                )));
            }
            if i == 0 || j == 0 || i > n || j > n || i == j {
                return Err(Error::InvalidParams(format!(
                    "annihilation needs two distinct ions in 1..={n}, got ({i}, {j})"
                )));
            }
        }
        Ok(())
    }

    /// Number of ion species.
    pub fn n(&self) -> usize {
        self.diffusivities.len()
    }

    pub fn d_min(&self) -> f64 {
        self.diffusivities.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn has_reactions(&self) -> bool {
        !matches!(self.reaction, Reaction::None)
    }
}

/// Fermi–Dirac map evaluated in log-sum-exp form, writing `(u_0, …, u_n)`
/// into `out`.
pub fn fermi_dirac_into(w: &[f64], phi: f64, z: &[f64], out: &mut [f64]) {
    let n = w.len();
    debug_assert_eq!(out.len(), n + 1);
    let mut m = 0.0f64;
    for i in 0..n {
        let a = (w[i] - z[i] * phi).clamp(-EXPONENT_CAP, EXPONENT_CAP);
        out[i + 1] = a;
        m = m.max(a);
    }
    out[0] = (-m).exp();
    let mut denom = out[0];
    for v in out[1..].iter_mut() {
        *v = (*v - m).exp();
        denom += *v;
    }
    for v in out.iter_mut() {
        *v /= denom;
    }
}

/// `u_i = exp(w_i - z_i Φ) / (1 + Σ_j exp(w_j - z_j Φ))`, `u_0 = 1 - Σ u_i`.
pub fn fermi_dirac(w: &[f64], phi: f64, params: &SpeciesParams) -> Vec<f64> {
    let mut out = vec![0.0; w.len() + 1];
    fermi_dirac_into(w, phi, &params.valences, &mut out);
    out
}

/// `w_i = log(u_i / u_0) + z_i Φ`.
pub fn entropy_variables(u: &[f64], phi: f64, params: &SpeciesParams) -> Result<Vec<f64>> {
    let n = params.n();
    if u.len() != n + 1 {
        return Err(Error::DimensionMismatch {
            expected: n + 1,
            got: u.len(),
        });
    }
    if let Some((k, &v)) = u.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NonPositiveConcentration {
            species: k,
            cell: 0,
            value: v,
        });
    }
    let log_u0 = u[0].ln();
    Ok((1..=n)
        .map(|i| u[i].ln() - log_u0 + params.valences[i - 1] * phi)
        .collect())
}

/// Diagonal of the mobility matrix, `B_ii = D_i u_i`.
pub fn mobility_b(u: &[f64], params: &SpeciesParams) -> Vec<f64> {
    params
        .diffusivities
        .iter()
        .enumerate()
        .map(|(k, d)| d * u[k + 1])
        .collect()
}

pub fn reaction_rates(u: &[f64], params: &SpeciesParams) -> Vec<f64> {
    let mut r = vec![0.0; params.n()];
    if let Reaction::BinaryAnnihilation { rate, i, j } = params.reaction {
        let v = -rate * u[i] * u[j];
        r[i - 1] = v;
        r[j - 1] = v;
    }
    r
}

/// `∂r_k/∂u_m` for ion rows `k` and full concentration columns `m = 0..=n`.
pub fn reaction_jacobian(u: &[f64], params: &SpeciesParams) -> Vec<Vec<f64>> {
    let n = params.n();
    let mut jac = vec![vec![0.0; n + 1]; n];
    if let Reaction::BinaryAnnihilation { rate, i, j } = params.reaction {
        for row in [i - 1, j - 1] {
            jac[row][i] = -rate * u[j];
            jac[row][j] = -rate * u[i];
        }
    }
    jac
}

/// Dirichlet data at one endpoint: all `n + 1` volume fractions and `Φ^D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletData {
    pub u: Vec<f64>,
    pub phi: f64,
}

/// Dirichlet data completed with the boundary entropy variables.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointData {
    pub u: Vec<f64>,
    pub phi: f64,
    pub w: Vec<f64>,
}

/// Boundary data and its interior extension.
///
/// `Φ^D` is extended by the fourth-order boundary problem with the background
/// charge as source. The entropy variables `w^D` are extended linearly between
/// Dirichlet endpoints (constant with a single one), and `u^D` is defined in
/// the interior through the Fermi–Dirac map of `(w^D, Φ^D)`, so that
/// `w^D = log(u^D_i / u^D_0) + z_i Φ^D` holds everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryData {
    pub left: Option<EndpointData>,
    pub right: Option<EndpointData>,
    /// Background charge density `f`.
    pub background: CellField,
    /// `Φ^D` and its split companion `φ^D`.
    pub potential: PotentialPair,
    pub w_d: Vec<CellField>,
    pub u_d: Vec<CellField>,
    /// True iff every `w^D_i` is spatially constant.
    pub equilibrium: bool,
}

fn endpoint(data: &DirichletData, params: &SpeciesParams, side: Side) -> Result<EndpointData> {
    let n = params.n();
    if data.u.len() != n + 1 {
        return Err(Error::InvalidBoundary(format!(
            "{} endpoint: expected {} volume fractions, got {}",
            side.name(),
            n + 1,
            data.u.len()
        )));
    }
    if data.u.iter().any(|v| !(*v > 0.0 && *v < 1.0)) {
        return Err(Error::InvalidBoundary(format!(
            "{} endpoint: volume fractions must lie in (0, 1)",
            side.name()
        )));
    }
    let sum: f64 = data.u.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidBoundary(format!(
            "{} endpoint: volume fractions sum to {sum}, not 1",
            side.name()
        )));
    }
    if !data.phi.is_finite() {
        return Err(Error::InvalidBoundary(format!("{} endpoint: non-finite potential", side.name())));
    }
    let w = entropy_variables(&data.u, data.phi, params)?;
    Ok(EndpointData {
        u: data.u.clone(),
        phi: data.phi,
        w,
    })
}

impl BoundaryData {
    pub fn new(
        mesh: &Mesh,
        params: &SpeciesParams,
        left: Option<DirichletData>,
        right: Option<DirichletData>,
        background: CellField,
    ) -> Result<Self> {
        params.validate()?;
        let n = params.n();
        let left = match (mesh.is_dirichlet(Side::Left), left) {
            (true, Some(d)) => Some(endpoint(&d, params, Side::Left)?),
            (true, None) => return Err(Error::MissingBoundaryValue("left")),
            (false, None) => None,
            (false, Some(_)) => return Err(Error::UnexpectedBoundaryValue("left")),
        };
        let right = match (mesh.is_dirichlet(Side::Right), right) {
            (true, Some(d)) => Some(endpoint(&d, params, Side::Right)?),
            (true, None) => return Err(Error::MissingBoundaryValue("right")),
            (false, None) => None,
            (false, Some(_)) => return Err(Error::UnexpectedBoundaryValue("right")),
        };
        if background.len() != mesh.n_cells() {
            return Err(Error::DimensionMismatch {
                expected: mesh.n_cells(),
                got: background.len(),
            });
        }
        let potential = poisson_fermi::solve_boundary_extension(
            &background,
            left.as_ref().map(|e| e.phi),
            right.as_ref().map(|e| e.phi),
            params,
            mesh,
        )?;
        let length = mesh.length();
        let w_d: Vec<CellField> = (0..n)
            .map(|i| match (&left, &right) {
                (Some(l), Some(r)) => {
                    mesh.sample(|x| l.w[i] + (r.w[i] - l.w[i]) * x / length)
                }
                (Some(e), None) | (None, Some(e)) => CellField::constant(mesh.n_cells(), e.w[i]),
                (None, None) => unreachable!("mesh guarantees a Dirichlet endpoint"),
            })
            .collect();
        let mut u_d = vec![CellField::zeros(mesh.n_cells()); n + 1];
        let mut wj = vec![0.0; n];
        let mut uj = vec![0.0; n + 1];
        for j in 0..mesh.n_cells() {
            for i in 0..n {
                wj[i] = w_d[i][j];
            }
            fermi_dirac_into(&wj, potential.phi[j], &params.valences, &mut uj);
            for k in 0..=n {
                u_d[k][j] = uj[k];
            }
        }
        let equilibrium = match (&left, &right) {
            (Some(l), Some(r)) => l.w.iter().zip(&r.w).all(|(a, b)| (a - b).abs() <= 1e-12),
            _ => true,
        };
        Ok(Self {
            left,
            right,
            background,
            potential,
            w_d,
            u_d,
            equilibrium,
        })
    }

    pub fn endpoint(&self, side: Side) -> Option<&EndpointData> {
        match side {
            Side::Left => self.left.as_ref(),
            Side::Right => self.right.as_ref(),
        }
    }

    pub fn phi_left(&self) -> Option<f64> {
        self.left.as_ref().map(|e| e.phi)
    }

    pub fn phi_right(&self) -> Option<f64> {
        self.right.as_ref().map(|e| e.phi)
    }

    /// Boundary values of ion entropy variable `i` (0-based ion index).
    pub fn w_bc(&self, i: usize) -> (Option<f64>, Option<f64>) {
        (
            self.left.as_ref().map(|e| e.w[i]),
            self.right.as_ref().map(|e| e.w[i]),
        )
    }

    /// Boundary values of volume fraction `k` (0 = solvent).
    pub fn u_bc(&self, k: usize) -> (Option<f64>, Option<f64>) {
        (
            self.left.as_ref().map(|e| e.u[k]),
            self.right.as_ref().map(|e| e.u[k]),
        )
    }
}

/// Cell-wise concentrations, entropy variables and potentials at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    /// `u_0, …, u_n`.
    pub u: Vec<CellField>,
    /// `w_1, …, w_n`.
    pub w: Vec<CellField>,
    /// Correlated potential `Φ`.
    pub phi: CellField,
    /// Free-ion potential `φ` of the splitting (equal to `Φ` when `ℓ = 0`).
    pub phi_free: CellField,
    pub time: f64,
}

impl State {
    /// Builds the state whose concentrations are the Fermi–Dirac image of `w`.
    pub fn from_entropy(w: Vec<CellField>, potential: PotentialPair, params: &SpeciesParams, time: f64) -> Self {
        let n = params.n();
        let cells = potential.phi.len();
        let mut u = vec![CellField::zeros(cells); n + 1];
        let mut wj = vec![0.0; n];
        let mut uj = vec![0.0; n + 1];
        for j in 0..cells {
            for i in 0..n {
                wj[i] = w[i][j];
            }
            fermi_dirac_into(&wj, potential.phi[j], &params.valences, &mut uj);
            for k in 0..=n {
                u[k][j] = uj[k];
            }
        }
        Self {
            u,
            w,
            phi: potential.phi,
            phi_free: potential.phi_free,
            time,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.phi.len()
    }

    /// Concentration vector `(u_0, …, u_n)` of cell `j`.
    pub fn cell_u(&self, j: usize) -> Vec<f64> {
        self.u.iter().map(|f| f[j]).collect()
    }

    pub fn cell_w(&self, j: usize) -> Vec<f64> {
        self.w.iter().map(|f| f[j]).collect()
    }

    /// Largest `|Σ_i u_i - 1|` over cells.
    pub fn max_saturation_error(&self) -> f64 {
        (0..self.n_cells())
            .map(|j| (self.u.iter().map(|f| f[j]).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// True when every volume fraction lies in `(0, 1]` and saturation holds
    /// to `tol`. The upper bound is closed because `1 - u_0` rounds to one
    /// once `u_0` drops below the unit roundoff.
    pub fn within_bounds(&self, tol: f64) -> bool {
        self.u.iter().all(|f| f.iter().all(|&v| v > 0.0 && v <= 1.0))
            && self.max_saturation_error() <= tol
    }

    pub fn potential_pair(&self) -> PotentialPair {
        PotentialPair {
            phi_free: self.phi_free.clone(),
            phi: self.phi.clone(),
        }
    }
}

/// `x log(x/y) - x + y`, the Bregman integrand of `s log s`.
pub fn bregman_scalar(x: f64, y: f64) -> f64 {
    x * (x / y).ln() - x + y
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeEnergy {
    pub entropy: f64,
    pub electric: f64,
    pub correlation: f64,
}

impl FreeEnergy {
    pub fn total(&self) -> f64 {
        self.entropy + self.electric + self.correlation
    }
}

/// Free energy split into mixing entropy, free-ion electric energy and
/// correlation energy.
pub fn free_energy_parts(
    state: &State,
    bd: &BoundaryData,
    params: &SpeciesParams,
    mesh: &Mesh,
) -> Result<FreeEnergy> {
    let n = params.n();
    let h = mesh.h();
    let mut entropy = 0.0;
    for k in 0..=n {
        for j in 0..mesh.n_cells() {
            let v = state.u[k][j];
            if !(v > 0.0) {
                return Err(Error::NonPositiveConcentration {
                    species: k,
                    cell: j,
                    value: v,
                });
            }
            entropy += h * bregman_scalar(v, bd.u_d[k][j]);
        }
    }
    let dphi: Vec<f64> = state
        .phi
        .iter()
        .zip(bd.potential.phi.iter())
        .map(|(a, b)| a - b)
        .collect();
    let left = bd.left.as_ref().map(|_| 0.0);
    let right = bd.right.as_ref().map(|_| 0.0);
    let g = mesh.face_gradient_unchecked(&dphi, left, right);
    let lam2 = params.lambda * params.lambda;
    let electric = 0.5 * lam2 * mesh.face_energy(&g);
    let correlation = if params.ell > 0.0 {
        let l2 = params.ell * params.ell;
        let lap: Vec<f64> = (0..mesh.n_cells())
            .map(|j| {
                ((state.phi[j] - state.phi_free[j])
                    - (bd.potential.phi[j] - bd.potential.phi_free[j]))
                    / l2
            })
            .collect();
        0.5 * lam2 * l2 * mesh.l2_norm(&lap).powi(2)
    } else {
        0.0
    };
    Ok(FreeEnergy {
        entropy,
        electric,
        correlation,
    })
}

pub fn free_energy(state: &State, bd: &BoundaryData, params: &SpeciesParams, mesh: &Mesh) -> Result<f64> {
    Ok(free_energy_parts(state, bd, params, mesh)?.total())
}

/// Arithmetic face means of `u_k`, with the Dirichlet value on boundary
/// faces. Neumann faces get the adjacent cell value (they never carry flux).
pub fn face_means(field: &[f64], left: Option<f64>, right: Option<f64>) -> FaceField {
    let n = field.len();
    let mut m = vec![0.0; n + 1];
    for f in 1..n {
        m[f] = 0.5 * (field[f - 1] + field[f]);
    }
    m[0] = left.map_or(field[0], |a| 0.5 * (a + field[0]));
    m[n] = right.map_or(field[n - 1], |b| 0.5 * (field[n - 1] + b));
    FaceField(m)
}

/// Ion fluxes `J_i = -D_i û_i ∇w_i` on faces; zero on Neumann faces.
pub fn face_flux(state: &State, bd: &BoundaryData, params: &SpeciesParams, mesh: &Mesh) -> Vec<FaceField> {
    (0..params.n())
        .map(|i| {
            let (ul, ur) = bd.u_bc(i + 1);
            let (wl, wr) = bd.w_bc(i);
            let means = face_means(&state.u[i + 1], ul, ur);
            let grad = mesh.face_gradient_unchecked(&state.w[i], wl, wr);
            let d = params.diffusivities[i];
            means.iter().zip(grad.iter()).map(|(m, g)| -d * m * g).collect()
        })
        .collect()
}

/// Discrete `∫ Σ_i D_i u_i |∇w_i|² dx` with face means and dual-cell weights.
pub fn dissipation(state: &State, bd: &BoundaryData, params: &SpeciesParams, mesh: &Mesh) -> f64 {
    (0..params.n())
        .map(|i| {
            let (ul, ur) = bd.u_bc(i + 1);
            let (wl, wr) = bd.w_bc(i);
            let means = face_means(&state.u[i + 1], ul, ur);
            let grad = mesh.face_gradient_unchecked(&state.w[i], wl, wr);
            let d = params.diffusivities[i];
            (0..mesh.n_faces())
                .map(|f| mesh.face_weight(f) * d * means[f] * grad[f] * grad[f])
                .sum::<f64>()
        })
        .sum()
}

/// `∫ Σ_i r_i(u) (w_i - w^D_i) dx`, the reaction contribution to the free
/// energy balance.
pub fn reaction_production(state: &State, bd: &BoundaryData, params: &SpeciesParams, mesh: &Mesh) -> f64 {
    if !params.has_reactions() {
        return 0.0;
    }
    let n = params.n();
    (0..mesh.n_cells())
        .map(|j| {
            let r = reaction_rates(&state.cell_u(j), params);
            mesh.h() * (0..n).map(|i| r[i] * (state.w[i][j] - bd.w_d[i][j])).sum::<f64>()
        })
        .sum()
}
