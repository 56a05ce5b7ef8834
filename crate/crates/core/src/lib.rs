//! Entropy-stable finite-volume solver for the one-dimensional
//! Poisson–Nernst–Planck–Fermi system of ion transport.

pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod mesh;
pub mod model;
pub mod poisson_fermi;
pub mod stepper;

pub use error::{Error, Result};
pub use mesh::{BoundaryKind, CellField, FaceField, Mesh, Side};
pub use model::{BoundaryData, DirichletData, Reaction, SpeciesParams, State};
pub use poisson_fermi::PotentialPair;
pub use stepper::{Coupling, Problem, StepReport, StepperOptions, Trajectory};
