//! Run configuration: a TOML document with dotted section keys, or the same
//! structure as JSON.

use std::path::Path;

use pnpf_core::linalg::NewtonOptions;
use pnpf_core::{
    BoundaryData, BoundaryKind, CellField, Coupling, DirichletData, Mesh, Reaction, Side, SpeciesParams,
    StepperOptions,
};
use serde::{Deserialize, Serialize};

use crate::error::AppError;

fn default_length() -> f64 {
    1.0
}

fn default_eps() -> f64 {
    1e-8
}

fn default_newton_tol() -> f64 {
    1e-10
}

fn default_newton_max_iter() -> usize {
    50
}

fn default_halvings() -> usize {
    8
}

fn default_stride() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    #[serde(default = "default_length")]
    pub length: f64,
    pub n_cells: usize,
    pub left_bc: BoundaryKind,
    pub right_bc: BoundaryKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesSpec {
    pub diffusivities: Vec<f64>,
    pub valences: Vec<f64>,
    pub lambda: f64,
    #[serde(default)]
    pub ell: f64,
    #[serde(default)]
    pub reaction: Reaction,
}

/// Dirichlet data at one endpoint: `u` lists all volume fractions, solvent first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointSpec {
    pub u: Vec<f64>,
    #[serde(default)]
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySpec {
    #[serde(default)]
    pub left: Option<EndpointSpec>,
    #[serde(default)]
    pub right: Option<EndpointSpec>,
    /// Constant background charge density.
    #[serde(default)]
    pub background: f64,
    /// Asserts whether the data is (or is not) in thermal equilibrium.
    #[serde(default)]
    pub equilibrium: Option<bool>,
}

/// Initial ion volume fractions; the solvent fills the remainder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "profile", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    /// Entropy variables equal to their boundary values, potentials self-consistent.
    #[default]
    Equilibrium,
    Constant {
        u: Vec<f64>,
    },
    Step {
        left: Vec<f64>,
        right: Vec<f64>,
        position: f64,
    },
    GaussianBump {
        base: Vec<f64>,
        amplitude: Vec<f64>,
        center: f64,
        width: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteppingSpec {
    pub tau: f64,
    pub t_end: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub coupling: Coupling,
    #[serde(default = "default_newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_newton_max_iter")]
    pub newton_max_iter: usize,
    #[serde(default = "default_halvings")]
    pub max_step_halvings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub dir: Option<String>,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: None,
            snapshot_stride: default_stride(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: MeshSpec,
    pub species: SpeciesSpec,
    pub boundary: BoundarySpec,
    #[serde(default)]
    pub initial: InitialSpec,
    pub stepping: SteppingSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub seed: u64,
}

/// Validated solver inputs built from a configuration.
#[derive(Debug, Clone)]
pub struct Setup {
    pub mesh: Mesh,
    pub params: SpeciesParams,
    pub bd: BoundaryData,
    pub opts: StepperOptions,
    pub t_end: f64,
}

fn invalid(field: &str, message: impl Into<String>) -> AppError {
    AppError::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

fn check_ion_vector(field: &str, v: &[f64], n: usize) -> Result<(), AppError> {
    if v.len() != n {
        return Err(invalid(field, format!("expected {n} ion values, got {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(invalid(field, "values must be finite"));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_str_auto(text: &str, json: bool) -> Result<Self, AppError> {
        if json {
            serde_json::from_str(text).map_err(|e| AppError::Parse(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| AppError::Parse(e.to_string()))
        }
    }

    /// Reads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        Self::from_str_auto(&text, json)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn build_mesh(&self) -> Result<Mesh, AppError> {
        let m = &self.mesh;
        if !(m.length > 0.0 && m.length.is_finite()) {
            return Err(invalid("mesh.length", "must be positive"));
        }
        if m.n_cells < 2 {
            return Err(invalid("mesh.n_cells", "need at least 2 cells"));
        }
        if m.left_bc == BoundaryKind::Neumann && m.right_bc == BoundaryKind::Neumann {
            return Err(invalid("mesh.left_bc", "at least one endpoint must be Dirichlet"));
        }
        Mesh::new(m.length, m.n_cells, m.left_bc, m.right_bc).map_err(|e| invalid("mesh", e.to_string()))
    }

    pub fn build_params(&self) -> Result<SpeciesParams, AppError> {
        let s = &self.species;
        let n = s.diffusivities.len();
        if n == 0 {
            return Err(invalid("species.diffusivities", "need at least one ion species"));
        }
        if s.valences.len() != n {
            return Err(invalid(
                "species.valences",
                format!("expected {n} values to match species.diffusivities, got {}", s.valences.len()),
            ));
        }
        if s.diffusivities.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(invalid("species.diffusivities", "all diffusivities must be positive"));
        }
        if !(s.lambda > 0.0 && s.lambda.is_finite()) {
            return Err(invalid("species.lambda", "must be positive"));
        }
        if !(s.ell >= 0.0 && s.ell.is_finite()) {
            return Err(invalid("species.ell", "must be non-negative"));
        }
        SpeciesParams::new(s.diffusivities.clone(), s.valences.clone(), s.lambda, s.ell, s.reaction.clone())
            .map_err(|e| invalid("species.reaction", e.to_string()))
    }

    fn endpoint(&self, side: Side, mesh: &Mesh, n: usize) -> Result<Option<DirichletData>, AppError> {
        let (spec, name) = match side {
            Side::Left => (&self.boundary.left, "boundary.left"),
            Side::Right => (&self.boundary.right, "boundary.right"),
        };
        match (mesh.is_dirichlet(side), spec) {
            (true, None) => Err(invalid(name, "Dirichlet endpoint needs boundary data")),
            (false, Some(_)) => Err(invalid(name, "boundary data given at a Neumann endpoint")),
            (false, None) => Ok(None),
            (true, Some(e)) => {
                let field = format!("{name}.u");
                if e.u.len() != n + 1 {
                    return Err(invalid(
                        &field,
                        format!("expected {} volume fractions (solvent first), got {}", n + 1, e.u.len()),
                    ));
                }
                if e.u.iter().any(|v| !(*v > 0.0 && *v < 1.0)) {
                    return Err(invalid(&field, "every volume fraction must lie strictly between 0 and 1"));
                }
                let sum: f64 = e.u.iter().sum();
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(invalid(&field, format!("volume fractions must sum to 1, got {sum}")));
                }
                if !e.phi.is_finite() {
                    return Err(invalid(&format!("{name}.phi"), "must be finite"));
                }
                Ok(Some(DirichletData {
                    u: e.u.clone(),
                    phi: e.phi,
                }))
            }
        }
    }

    pub fn build_boundary(&self, mesh: &Mesh, params: &SpeciesParams) -> Result<BoundaryData, AppError> {
        let n = params.n();
        let left = self.endpoint(Side::Left, mesh, n)?;
        let right = self.endpoint(Side::Right, mesh, n)?;
        if !self.boundary.background.is_finite() {
            return Err(invalid("boundary.background", "must be finite"));
        }
        let f = CellField::constant(mesh.n_cells(), self.boundary.background);
        let bd = BoundaryData::new(mesh, params, left, right, f).map_err(|e| invalid("boundary", e.to_string()))?;
        if let Some(flag) = self.boundary.equilibrium {
            if flag != bd.equilibrium {
                return Err(invalid(
                    "boundary.equilibrium",
                    format!(
                        "declared {flag}, but the boundary entropy variables are {}",
                        if bd.equilibrium { "equal" } else { "different" }
                    ),
                ));
            }
        }
        Ok(bd)
    }

    pub fn build_options(&self) -> Result<StepperOptions, AppError> {
        let s = &self.stepping;
        if !(s.tau > 0.0 && s.tau.is_finite()) {
            return Err(invalid("stepping.tau", "must be positive"));
        }
        if !(s.t_end >= 0.0 && s.t_end.is_finite()) {
            return Err(invalid("stepping.t_end", "must be non-negative"));
        }
        if !(s.eps >= 0.0 && s.eps.is_finite()) {
            return Err(invalid("stepping.eps", "must be non-negative"));
        }
        if !(s.newton_tol > 0.0) {
            return Err(invalid("stepping.newton_tol", "must be positive"));
        }
        if s.newton_max_iter < 1 {
            return Err(invalid("stepping.newton_max_iter", "must be at least 1"));
        }
        let mut opts = StepperOptions::new(s.tau);
        opts.eps = s.eps;
        opts.coupling = s.coupling;
        opts.max_step_halvings = s.max_step_halvings;
        opts.newton = NewtonOptions {
            abs_tol: s.newton_tol,
            max_iter: s.newton_max_iter,
            ..NewtonOptions::default()
        };
        Ok(opts)
    }

    fn check_initial(&self, n: usize) -> Result<(), AppError> {
        match &self.initial {
            InitialSpec::Equilibrium => Ok(()),
            InitialSpec::Constant { u } => check_ion_vector("initial.u", u, n),
            InitialSpec::Step { left, right, position } => {
                check_ion_vector("initial.left", left, n)?;
                check_ion_vector("initial.right", right, n)?;
                if !position.is_finite() {
                    return Err(invalid("initial.position", "must be finite"));
                }
                Ok(())
            }
            InitialSpec::GaussianBump {
                base,
                amplitude,
                center,
                width,
            } => {
                check_ion_vector("initial.base", base, n)?;
                check_ion_vector("initial.amplitude", amplitude, n)?;
                if !center.is_finite() {
                    return Err(invalid("initial.center", "must be finite"));
                }
                if !(*width > 0.0 && width.is_finite()) {
                    return Err(invalid("initial.width", "must be positive"));
                }
                Ok(())
            }
        }
    }

    /// Initial volume fractions `(u_0, …, u_n)` on the mesh, or `None` for
    /// the equilibrium profile.
    pub fn initial_fractions(&self, mesh: &Mesh, n: usize) -> Result<Option<Vec<CellField>>, AppError> {
        self.check_initial(n)?;
        let ions: Vec<CellField> = match &self.initial {
            InitialSpec::Equilibrium => return Ok(None),
            InitialSpec::Constant { u } => u.iter().map(|v| CellField::constant(mesh.n_cells(), *v)).collect(),
            InitialSpec::Step { left, right, position } => (0..n)
                .map(|i| mesh.sample(|x| if x < *position { left[i] } else { right[i] }))
                .collect(),
            InitialSpec::GaussianBump {
                base,
                amplitude,
                center,
                width,
            } => (0..n)
                .map(|i| {
                    mesh.sample(|x| base[i] + amplitude[i] * (-(x - center).powi(2) / (2.0 * width * width)).exp())
                })
                .collect(),
        };
        let mut solvent = CellField::zeros(mesh.n_cells());
        for j in 0..mesh.n_cells() {
            let mut sum = 0.0;
            for (i, f) in ions.iter().enumerate() {
                if !(f[j] >= 0.0 && f[j] <= 1.0) {
                    return Err(invalid(
                        "initial",
                        format!("ion {} has volume fraction {} in cell {j}", i + 1, f[j]),
                    ));
                }
                sum += f[j];
            }
            if sum > 1.0 + 1e-12 {
                return Err(invalid("initial", format!("ion volume fractions sum to {sum} in cell {j}")));
            }
            solvent[j] = (1.0 - sum).max(0.0);
        }
        let mut u = vec![solvent];
        u.extend(ions);
        Ok(Some(u))
    }

    pub fn build(&self) -> Result<Setup, AppError> {
        let mesh = self.build_mesh()?;
        let params = self.build_params()?;
        let bd = self.build_boundary(&mesh, &params)?;
        let opts = self.build_options()?;
        self.check_initial(params.n())?;
        if self.output.snapshot_stride < 1 {
            return Err(invalid("output.snapshot_stride", "must be at least 1"));
        }
        Ok(Setup {
            mesh,
            params,
            bd,
            opts,
            t_end: self.stepping.t_end,
        })
    }

    /// The default decay scenario: two monovalent ions with unequal
    /// diffusivities relaxing from a localized charge imbalance towards
    /// equilibrium Dirichlet data.
    pub fn default_decay() -> Self {
        Self {
            mesh: MeshSpec {
                length: 1.0,
                n_cells: 100,
                left_bc: BoundaryKind::Dirichlet,
                right_bc: BoundaryKind::Dirichlet,
            },
            species: SpeciesSpec {
                diffusivities: vec![1.0, 2.0],
                valences: vec![1.0, -1.0],
                lambda: 0.1,
                ell: 0.1,
                reaction: Reaction::None,
            },
            boundary: BoundarySpec {
                left: Some(EndpointSpec {
                    u: vec![0.5, 0.25, 0.25],
                    phi: 0.0,
                }),
                right: Some(EndpointSpec {
                    u: vec![0.5, 0.25, 0.25],
                    phi: 0.0,
                }),
                background: 0.0,
                equilibrium: Some(true),
            },
            initial: InitialSpec::GaussianBump {
                base: vec![0.25, 0.25],
                amplitude: vec![0.3, 0.1],
                center: 0.5,
                width: 0.1,
            },
            stepping: SteppingSpec {
                tau: 1e-3,
                t_end: 0.2,
                eps: default_eps(),
                coupling: Coupling::FullyCoupled,
                newton_tol: default_newton_tol(),
                newton_max_iter: default_newton_max_iter(),
                max_step_halvings: default_halvings(),
            },
            output: OutputSpec::default(),
            seed: 0,
        }
    }

    /// Decay configuration started from the equilibrium profile, with a
    /// background charge and a nonzero boundary potential so that the
    /// equilibrium potential is not flat.
    pub fn default_equilibrium() -> Self {
        let mut cfg = Self::default_decay();
        cfg.boundary.background = 0.1;
        for e in [cfg.boundary.left.as_mut(), cfg.boundary.right.as_mut()].into_iter().flatten() {
            e.phi = 0.1;
        }
        cfg.initial = InitialSpec::Equilibrium;
        cfg.stepping.t_end = 0.1;
        cfg
    }

    /// Smooth, strictly interior data for the relative-entropy experiment.
    pub fn default_weak_strong() -> Self {
        let mut cfg = Self::default_decay();
        cfg.initial = InitialSpec::GaussianBump {
            base: vec![0.25, 0.25],
            amplitude: vec![0.1, 0.05],
            center: 0.5,
            width: 0.15,
        };
        cfg.stepping.tau = 2e-4;
        cfg.stepping.t_end = 0.1;
        cfg
    }

    /// Equilibrium data with a background charge, so the steady potential
    /// depends on the correlation length.
    pub fn default_ell_sweep() -> Self {
        let mut cfg = Self::default_decay();
        cfg.species.lambda = 0.5;
        cfg.boundary.background = 0.5;
        cfg.initial = InitialSpec::Equilibrium;
        cfg
    }
}
