//! Uniform 1-D cell grid on `(0, L)` with Dirichlet/Neumann endpoint tags.
//!
//! Unknowns live at cell centers `x_j = (j + 1/2) h`. Fluxes live on the
//! `n_cells + 1` faces `x_f = f h`. A Dirichlet value sits at the physical
//! endpoint, so the boundary face gradient is a one-sided difference over
//! half a cell. With the face weights `h/2` (boundary) and `h` (interior)
//! the discrete gradient and divergence are exact negative adjoints.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
}

/// Which end of the interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

/// Cell-centered samples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CellField(pub Vec<f64>);

/// Face-centered samples, boundary faces included.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FaceField(pub Vec<f64>);

macro_rules! field_impls {
    ($t:ty) => {
        impl Deref for $t {
            type Target = Vec<f64>;
            fn deref(&self) -> &Vec<f64> {
                &self.0
            }
        }
        impl DerefMut for $t {
            fn deref_mut(&mut self) -> &mut Vec<f64> {
                &mut self.0
            }
        }
        impl From<Vec<f64>> for $t {
            fn from(v: Vec<f64>) -> Self {
                Self(v)
            }
        }
        impl FromIterator<f64> for $t {
            fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
                Self(iter.into_iter().collect())
            }
        }
    };
}

field_impls!(CellField);
field_impls!(FaceField);

impl CellField {
    pub fn constant(n: usize, value: f64) -> Self {
        Self(vec![value; n])
    }

    pub fn zeros(n: usize) -> Self {
        Self::constant(n, 0.0)
    }

    pub fn min(&self) -> f64 {
        self.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    length: f64,
    n_cells: usize,
    h: f64,
    left_bc: BoundaryKind,
    right_bc: BoundaryKind,
}

impl Mesh {
    /// Builds a uniform grid. At least one endpoint must be Dirichlet.
    pub fn new(
        length: f64,
        n_cells: usize,
        left_bc: BoundaryKind,
        right_bc: BoundaryKind,
    ) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidMesh(format!(
                "length must be positive, got {length}"
            )));
        }
        if n_cells < 2 {
            return Err(Error::InvalidMesh(format!(
                "need at least 2 cells, got {n_cells}"
            )));
        }
        if left_bc == BoundaryKind::Neumann && right_bc == BoundaryKind::Neumann {
            return Err(Error::InvalidMesh(
                "at least one endpoint must carry a Dirichlet condition".into(),
            ));
        }
        Ok(Self {
            length,
            n_cells,
            h: length / n_cells as f64,
            left_bc,
            right_bc,
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_faces(&self) -> usize {
        self.n_cells + 1
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn bc(&self, side: Side) -> BoundaryKind {
        match side {
            Side::Left => self.left_bc,
            Side::Right => self.right_bc,
        }
    }

    pub fn left_bc(&self) -> BoundaryKind {
        self.left_bc
    }

    pub fn right_bc(&self) -> BoundaryKind {
        self.right_bc
    }

    pub fn is_dirichlet(&self, side: Side) -> bool {
        self.bc(side) == BoundaryKind::Dirichlet
    }

    pub fn center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.h
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_cells).map(|j| self.center(j)).collect()
    }

    pub fn face(&self, f: usize) -> f64 {
        f as f64 * self.h
    }

    pub fn faces(&self) -> Vec<f64> {
        (0..self.n_faces()).map(|f| self.face(f)).collect()
    }

    /// Dual-cell widths: `h/2` on the two boundary faces, `h` inside.
    pub fn face_weight(&self, f: usize) -> f64 {
        if f == 0 || f == self.n_cells {
            0.5 * self.h
        } else {
            self.h
        }
    }

    /// Samples `g` at cell centers.
    pub fn sample(&self, g: impl Fn(f64) -> f64) -> CellField {
        self.centers().into_iter().map(g).collect()
    }

    /// Samples `g` at faces.
    pub fn sample_faces(&self, g: impl Fn(f64) -> f64) -> FaceField {
        self.faces().into_iter().map(g).collect()
    }

    fn check_cells(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.n_cells {
            return Err(Error::DimensionMismatch {
                expected: self.n_cells,
                got: f.len(),
            });
        }
        Ok(())
    }

    fn boundary_value(&self, side: Side, value: Option<f64>) -> Result<Option<f64>> {
        match (self.bc(side), value) {
            (BoundaryKind::Dirichlet, Some(v)) => Ok(Some(v)),
            (BoundaryKind::Dirichlet, None) => Err(Error::MissingBoundaryValue(side.name())),
            (BoundaryKind::Neumann, None) => Ok(None),
            (BoundaryKind::Neumann, Some(_)) => Err(Error::UnexpectedBoundaryValue(side.name())),
        }
    }

    /// Face gradient of a cell field. Boundary values must be given exactly
    /// at the Dirichlet endpoints; Neumann faces carry zero.
    pub fn face_gradient(
        &self,
        f: &[f64],
        left_value: Option<f64>,
        right_value: Option<f64>,
    ) -> Result<FaceField> {
        self.check_cells(f)?;
        let left = self.boundary_value(Side::Left, left_value)?;
        let right = self.boundary_value(Side::Right, right_value)?;
        Ok(self.face_gradient_unchecked(f, left, right))
    }

    /// Same as [`Mesh::face_gradient`] without validating the boundary tags;
    /// `None` means a zero-gradient face.
    pub(crate) fn face_gradient_unchecked(
        &self,
        f: &[f64],
        left: Option<f64>,
        right: Option<f64>,
    ) -> FaceField {
        let n = self.n_cells;
        let h = self.h;
        let mut g = vec![0.0; n + 1];
        for k in 1..n {
            g[k] = (f[k] - f[k - 1]) / h;
        }
        if let Some(a) = left {
            g[0] = (f[0] - a) / (0.5 * h);
        }
        if let Some(b) = right {
            g[n] = (b - f[n - 1]) / (0.5 * h);
        }
        FaceField(g)
    }

    pub fn cell_divergence(&self, g: &[f64]) -> Result<CellField> {
        if g.len() != self.n_faces() {
            return Err(Error::DimensionMismatch {
                expected: self.n_faces(),
                got: g.len(),
            });
        }
        Ok((0..self.n_cells)
            .map(|j| (g[j + 1] - g[j]) / self.h)
            .collect())
    }

    /// Midpoint rule.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.h * f.iter().sum::<f64>()
    }

    pub fn l2_norm(&self, f: &[f64]) -> f64 {
        (self.h * f.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    /// Weighted face sum `Σ_f w_f g_f²`.
    pub fn face_energy(&self, g: &[f64]) -> f64 {
        g.iter()
            .enumerate()
            .map(|(f, v)| self.face_weight(f) * v * v)
            .sum()
    }

    /// L² norm of the face gradient with dual-cell weights.
    pub fn h1_seminorm(
        &self,
        f: &[f64],
        left_value: Option<f64>,
        right_value: Option<f64>,
    ) -> Result<f64> {
        let g = self.face_gradient(f, left_value, right_value)?;
        Ok(self.face_energy(&g).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use BoundaryKind::*;

    #[test]
    fn build_mesh_examples() {
        let m = Mesh::new(1.0, 4, Dirichlet, Neumann).unwrap();
        assert_eq!(m.h(), 0.25);
        assert_eq!(m.centers(), vec![0.125, 0.375, 0.625, 0.875]);
        let m = Mesh::new(2.0, 2, Dirichlet, Dirichlet).unwrap();
        assert_eq!(m.h(), 1.0);
        assert!(Mesh::new(1.0, 4, Neumann, Neumann).is_err());
        assert!(Mesh::new(1.0, 1, Dirichlet, Neumann).is_err());
        assert!(Mesh::new(-1.0, 4, Dirichlet, Neumann).is_err());
    }

    #[test]
    fn h_times_cells_is_length() {
        for n in [3, 7, 10, 33, 1000] {
            let m = Mesh::new(0.7, n, Neumann, Dirichlet).unwrap();
            assert!((m.h() * n as f64 - 0.7).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_boundary_value_errors() {
        let m = Mesh::new(1.0, 4, Dirichlet, Neumann).unwrap();
        let f = vec![0.0; 4];
        assert_eq!(
            m.face_gradient(&f, None, None),
            Err(Error::MissingBoundaryValue("left"))
        );
        assert_eq!(
            m.face_gradient(&f, Some(0.0), Some(1.0)),
            Err(Error::UnexpectedBoundaryValue("right"))
        );
        assert!(m.face_gradient(&f[..3], Some(0.0), None).is_err());
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let m = Mesh::new(1.0, 9, Dirichlet, Dirichlet).unwrap();
        let f = vec![3.25; 9];
        let g = m.face_gradient(&f, Some(3.25), Some(3.25)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        let m = Mesh::new(1.0, 9, Neumann, Dirichlet).unwrap();
        let g = m.face_gradient(&f, None, Some(3.25)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_of_linear_function() {
        let m = Mesh::new(1.0, 4, Dirichlet, Dirichlet).unwrap();
        let f = m.sample(|x| x);
        let g = m.face_gradient(&f, Some(0.0), Some(1.0)).unwrap();
        for v in g.iter() {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_of_quadratic_at_interior_faces() {
        let m = Mesh::new(1.0, 8, Dirichlet, Dirichlet).unwrap();
        let f = m.sample(|x| x * x);
        let g = m.face_gradient(&f, Some(0.0), Some(1.0)).unwrap();
        for k in 1..8 {
            let xf = m.face(k);
            assert!((g[k] - 2.0 * xf).abs() < 1e-14, "face {k}");
        }
    }

    #[test]
    fn divergence_examples() {
        let m = Mesh::new(1.0, 5, Dirichlet, Neumann).unwrap();
        let d = m.cell_divergence(&[2.0; 6]).unwrap();
        assert!(d.iter().all(|&v| v == 0.0));
        let g = m.sample_faces(|x| x);
        let d = m.cell_divergence(&g).unwrap();
        for v in d.iter() {
            assert!((v - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn quadrature_examples() {
        let m = Mesh::new(1.0, 10, Dirichlet, Neumann).unwrap();
        assert!((m.integrate(&[1.0; 10]) - 1.0).abs() < 1e-15);
        let m = Mesh::new(2.5, 10, Dirichlet, Neumann).unwrap();
        assert!((m.l2_norm(&[-3.0; 10]) - 3.0 * 2.5f64.sqrt()).abs() < 1e-14);

        let m = Mesh::new(1.0, 200, Dirichlet, Dirichlet).unwrap();
        let f = m.sample(|x| (std::f64::consts::PI * x).sin());
        let exact = 2.0 / std::f64::consts::PI;
        assert!((m.integrate(&f) - exact).abs() < 1e-4);
    }

    #[test]
    fn h1_seminorm_of_linear() {
        let m = Mesh::new(1.0, 16, Dirichlet, Dirichlet).unwrap();
        let f = m.sample(|x| 2.0 * x);
        let s = m.h1_seminorm(&f, Some(0.0), Some(2.0)).unwrap();
        assert!((s - 2.0).abs() < 1e-13);
    }
}
