#![allow(dead_code)]

use pnpf_core::{BoundaryData, BoundaryKind, CellField, DirichletData, Mesh, Reaction, SpeciesParams};

pub const UD: [f64; 3] = [0.5, 0.25, 0.25];

pub fn pair_params(ell: f64) -> SpeciesParams {
    SpeciesParams::new(vec![1.0, 2.0], vec![1.0, -1.0], 0.1, ell, Reaction::None).unwrap()
}

pub fn dirichlet(u: &[f64], phi: f64) -> Option<DirichletData> {
    Some(DirichletData { u: u.to_vec(), phi })
}

/// Both ends Dirichlet at the same data, so the boundary data is in equilibrium.
pub fn equilibrium_setup(n_cells: usize, params: &SpeciesParams) -> (Mesh, BoundaryData) {
    let mesh = Mesh::new(1.0, n_cells, BoundaryKind::Dirichlet, BoundaryKind::Dirichlet).unwrap();
    let bd = BoundaryData::new(&mesh, params, dirichlet(&UD, 0.0), dirichlet(&UD, 0.0), CellField::zeros(n_cells))
        .unwrap();
    (mesh, bd)
}

/// Ion fractions `base + amplitude * bump`, solvent filling the rest.
pub fn bump_fractions(mesh: &Mesh, base: &[f64], amplitude: &[f64], width: f64) -> Vec<CellField> {
    let ions: Vec<CellField> = base
        .iter()
        .zip(amplitude)
        .map(|(b, a)| mesh.sample(|x| b + a * (-(x - 0.5).powi(2) / (2.0 * width * width)).exp()))
        .collect();
    let solvent: CellField = (0..mesh.n_cells())
        .map(|j| 1.0 - ions.iter().map(|f| f[j]).sum::<f64>())
        .collect();
    std::iter::once(solvent).chain(ions).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
