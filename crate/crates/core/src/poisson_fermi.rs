//! Fourth-order Poisson–Fermi solve through the Yukawa splitting
//! `-λ²Δφ = ρ`, `-ℓ²ΔΦ + Φ = φ`.
//!
//! Both stages take `Φ^D` at Dirichlet endpoints and zero flux at Neumann
//! endpoints. With these split conditions `ΔΦ = (Φ - φ)/ℓ²` vanishes on the
//! Dirichlet part and its normal derivative vanishes on the Neumann part.

use crate::error::{Error, Result};
use crate::linalg::{solve_banded, BandedMatrix};
use crate::mesh::{CellField, Mesh, Side};
use crate::model::{BoundaryData, SpeciesParams};

/// Free-ion potential `φ` and correlated potential `Φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialPair {
    pub phi_free: CellField,
    pub phi: CellField,
}

impl PotentialPair {
    pub fn zeros(n: usize) -> Self {
        Self {
            phi_free: CellField::zeros(n),
            phi: CellField::zeros(n),
        }
    }
}

fn check_values(mesh: &Mesh, left: Option<f64>, right: Option<f64>) -> Result<()> {
    for (side, v) in [(Side::Left, left), (Side::Right, right)] {
        match (mesh.is_dirichlet(side), v) {
            (true, None) => return Err(Error::MissingBoundaryValue(side.name())),
            (false, Some(_)) => return Err(Error::UnexpectedBoundaryValue(side.name())),
            _ => {}
        }
    }
    Ok(())
}

/// Coefficients of `(-Δ_h f)_j` as (lower, diagonal, upper) for cell `j`,
/// plus the weight multiplying a Dirichlet value entering that row.
pub(crate) fn laplacian_row(mesh: &Mesh, j: usize) -> (f64, f64, f64) {
    let n = mesh.n_cells();
    let ih2 = 1.0 / (mesh.h() * mesh.h());
    let mut lo = 0.0;
    let mut up = 0.0;
    let mut diag = 0.0;
    if j > 0 {
        lo = -ih2;
        diag += ih2;
    } else if mesh.is_dirichlet(Side::Left) {
        diag += 2.0 * ih2;
    }
    if j + 1 < n {
        up = -ih2;
        diag += ih2;
    } else if mesh.is_dirichlet(Side::Right) {
        diag += 2.0 * ih2;
    }
    (lo, diag, up)
}

/// `-Δ_h f = -div_h(∇_h f)` with the given Dirichlet values.
pub fn neg_laplacian(mesh: &Mesh, f: &[f64], left: Option<f64>, right: Option<f64>) -> Result<CellField> {
    check_values(mesh, left, right)?;
    if f.len() != mesh.n_cells() {
        return Err(Error::DimensionMismatch {
            expected: mesh.n_cells(),
            got: f.len(),
        });
    }
    Ok(neg_laplacian_unchecked(mesh, f, left, right))
}

pub(crate) fn neg_laplacian_unchecked(
    mesh: &Mesh,
    f: &[f64],
    left: Option<f64>,
    right: Option<f64>,
) -> CellField {
    let g = mesh.face_gradient_unchecked(f, left, right);
    let h = mesh.h();
    (0..mesh.n_cells()).map(|j| -(g[j + 1] - g[j]) / h).collect()
}

/// Solves `-a Δ_h u + c u = rhs`.
fn solve_elliptic(
    mesh: &Mesh,
    a: f64,
    c: f64,
    rhs: &[f64],
    left: Option<f64>,
    right: Option<f64>,
) -> Result<CellField> {
    check_values(mesh, left, right)?;
    let n = mesh.n_cells();
    if rhs.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: rhs.len(),
        });
    }
    let ih2 = 1.0 / (mesh.h() * mesh.h());
    let mut m = BandedMatrix::zeros(n, 1, 1);
    let mut b = rhs.to_vec();
    for j in 0..n {
        let (lo, diag, up) = laplacian_row(mesh, j);
        if j > 0 {
            m.set(j, j - 1, a * lo);
        }
        if j + 1 < n {
            m.set(j, j + 1, a * up);
        }
        m.set(j, j, a * diag + c);
    }
    if let Some(v) = left {
        b[0] += 2.0 * a * ih2 * v;
    }
    if let Some(v) = right {
        b[n - 1] += 2.0 * a * ih2 * v;
    }
    Ok(CellField(solve_banded(&m, &b)?))
}

/// Solves `-λ² Δφ = ρ`.
pub fn solve_poisson(
    rho: &[f64],
    left: Option<f64>,
    right: Option<f64>,
    mesh: &Mesh,
    lambda: f64,
) -> Result<CellField> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParams(format!("lambda must be positive, got {lambda}")));
    }
    solve_elliptic(mesh, lambda * lambda, 0.0, rho, left, right)
}

/// Solves `-ℓ² ΔΦ + Φ = φ`.
pub fn solve_helmholtz(
    phi: &[f64],
    left: Option<f64>,
    right: Option<f64>,
    mesh: &Mesh,
    ell: f64,
) -> Result<CellField> {
    if ell == 0.0 {
        return Err(Error::ZeroCorrelationLength);
    }
    if !(ell > 0.0 && ell.is_finite()) {
        return Err(Error::InvalidParams(format!("ell must be positive, got {ell}")));
    }
    solve_elliptic(mesh, ell * ell, 1.0, phi, left, right)
}

/// Split solve of `λ²(ℓ²Δ - 1)ΔΦ = ρ` with `Φ = Φ^D` on Dirichlet ends.
pub fn solve_split(
    rho: &[f64],
    left: Option<f64>,
    right: Option<f64>,
    params: &SpeciesParams,
    mesh: &Mesh,
) -> Result<PotentialPair> {
    let phi_free = solve_poisson(rho, left, right, mesh, params.lambda)?;
    let phi = if params.ell > 0.0 {
        solve_helmholtz(&phi_free, left, right, mesh, params.ell)?
    } else {
        phi_free.clone()
    };
    Ok(PotentialPair { phi_free, phi })
}

/// Charge density `Σ_j z_j u_j + f`.
pub fn charge_density(u: &[CellField], f: &[f64], params: &SpeciesParams) -> CellField {
    (0..f.len())
        .map(|c| {
            f[c] + params
                .valences
                .iter()
                .enumerate()
                .map(|(i, z)| z * u[i + 1][c])
                .sum::<f64>()
        })
        .collect()
}

/// Potentials generated by the concentrations `u = (u_0, …, u_n)` and the
/// background charge `f`.
pub fn solve_poisson_fermi(
    u: &[CellField],
    f: &[f64],
    bd: &BoundaryData,
    params: &SpeciesParams,
    mesh: &Mesh,
) -> Result<PotentialPair> {
    if u.len() != params.n() + 1 {
        return Err(Error::DimensionMismatch {
            expected: params.n() + 1,
            got: u.len(),
        });
    }
    if let Some(bad) = u.iter().find(|c| c.len() != mesh.n_cells()) {
        return Err(Error::DimensionMismatch {
            expected: mesh.n_cells(),
            got: bad.len(),
        });
    }
    let rho = charge_density(u, f, params);
    solve_split(&rho, bd.phi_left(), bd.phi_right(), params, mesh)
}

/// Extension `Φ^D` of the boundary potential into the domain, driven by the
/// background charge alone.
pub fn solve_boundary_extension(
    f: &[f64],
    left: Option<f64>,
    right: Option<f64>,
    params: &SpeciesParams,
    mesh: &Mesh,
) -> Result<PotentialPair> {
    solve_split(f, left, right, params, mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::BoundaryKind::*;
    use crate::model::Reaction;

    #[test]
    fn zero_charge_gives_zero_potential() {
        let mesh = Mesh::new(1.0, 10, Dirichlet, Dirichlet).unwrap();
        let phi = solve_poisson(&[0.0; 10], Some(0.0), Some(0.0), &mesh, 1.0).unwrap();
        assert!(phi.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quadratic_carries_half_cell_offset() {
        // The half-cell Dirichlet closure reproduces x(1-x) up to the
        // constant h²/4 on every cell.
        let n = 16;
        let mesh = Mesh::new(1.0, n, Dirichlet, Dirichlet).unwrap();
        let h = mesh.h();
        let phi = solve_poisson(&vec![2.0; n], Some(0.0), Some(0.0), &mesh, 1.0).unwrap();
        for (j, x) in mesh.centers().into_iter().enumerate() {
            assert!((phi[j] - (x * (1.0 - x) + h * h / 4.0)).abs() < 1e-13);
        }
    }

    #[test]
    fn boundary_value_tags_are_checked() {
        let mesh = Mesh::new(1.0, 4, Dirichlet, Neumann).unwrap();
        assert!(solve_poisson(&[0.0; 4], None, None, &mesh, 1.0).is_err());
        assert!(solve_poisson(&[0.0; 4], Some(0.0), Some(0.0), &mesh, 1.0).is_err());
        assert!(solve_poisson(&[0.0; 4], Some(0.0), None, &mesh, 1.0).is_ok());
    }

    #[test]
    fn helmholtz_constant_is_fixed() {
        let mesh = Mesh::new(1.0, 8, Dirichlet, Neumann).unwrap();
        let phi = solve_helmholtz(&[0.7; 8], Some(0.7), None, &mesh, 0.3).unwrap();
        assert!(phi.iter().all(|v| (v - 0.7).abs() < 1e-14));
        assert_eq!(
            solve_helmholtz(&[0.7; 8], Some(0.7), None, &mesh, 0.0),
            Err(Error::ZeroCorrelationLength)
        );
    }

    #[test]
    fn zero_ell_path_is_plain_poisson() {
        let mesh = Mesh::new(1.0, 12, Dirichlet, Neumann).unwrap();
        let p = SpeciesParams::new(vec![1.0], vec![1.0], 0.4, 0.0, Reaction::None).unwrap();
        let rho: Vec<f64> = mesh.centers().iter().map(|x| x.sin()).collect();
        let pair = solve_split(&rho, Some(0.2), None, &p, &mesh).unwrap();
        let plain = solve_poisson(&rho, Some(0.2), None, &mesh, 0.4).unwrap();
        assert_eq!(pair.phi, plain);
        assert_eq!(pair.phi_free, plain);
    }

    #[test]
    fn harmonic_extension_is_linear() {
        let mesh = Mesh::new(1.0, 10, Dirichlet, Dirichlet).unwrap();
        let p = SpeciesParams::new(vec![1.0], vec![1.0], 1.0, 0.0, Reaction::None).unwrap();
        let pair = solve_boundary_extension(&[0.0; 10], Some(0.3), Some(-0.5), &p, &mesh).unwrap();
        for (j, x) in mesh.centers().into_iter().enumerate() {
            assert!((pair.phi[j] - (0.3 - 0.8 * x)).abs() < 1e-13);
        }
    }

    #[test]
    fn neg_laplacian_inverts_solve() {
        let mesh = Mesh::new(2.0, 9, Neumann, Dirichlet).unwrap();
        let rho: Vec<f64> = mesh.centers().iter().map(|x| 1.0 + x * x).collect();
        let phi = solve_poisson(&rho, None, Some(0.4), &mesh, 0.5).unwrap();
        let back = neg_laplacian(&mesh, &phi, None, Some(0.4)).unwrap();
        for j in 0..9 {
            assert!((0.25 * back[j] - rho[j]).abs() < 1e-11);
        }
    }
}
