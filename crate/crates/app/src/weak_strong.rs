//! Relative-entropy experiment: coarse runs against a restricted fine-grid
//! reference, with and without perturbed initial data.

use pnpf_core::diagnostics::relative_entropy;
use pnpf_core::model::entropy_variables;
use pnpf_core::stepper::{self, Problem};
use pnpf_core::{CellField, Error as CoreError, Mesh, SpeciesParams, State, Trajectory};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::AppError;
use crate::output::{fmt_real, write_table};
use crate::scenario::initial_state;

/// Refinement factor of the reference run in space and time.
pub const REFINEMENT: usize = 4;
/// Smallest volume fraction the reference may reach.
pub const REFERENCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelativeEntropySample {
    pub delta: f64,
    pub step: usize,
    pub time: f64,
    pub relative_entropy: f64,
    pub h1: f64,
    pub h2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaSummary {
    pub delta: f64,
    pub initial_relative_entropy: f64,
    pub max_relative_entropy: f64,
    /// `max_t RE(t) / RE(0)`; absent when `RE(0)` vanishes.
    pub gronwall_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakStrongReport {
    pub samples: Vec<RelativeEntropySample>,
    pub summaries: Vec<DeltaSummary>,
}

impl WeakStrongReport {
    pub fn summary(&self, delta: f64) -> Option<&DeltaSummary> {
        self.summaries.iter().find(|s| s.delta == delta)
    }
}

/// Interior bump used to perturb the first ion against the solvent.
pub fn bump(x: f64, length: f64) -> f64 {
    let c = 0.5 * length;
    let w = 0.1 * length;
    (-(x - c).powi(2) / (2.0 * w * w)).exp()
}

fn average(fine: &[f64], factor: usize) -> CellField {
    fine.chunks(factor).map(|c| c.iter().sum::<f64>() / factor as f64).collect()
}

/// Cell averages of a fine-grid state on a mesh `factor` times coarser.
pub fn restrict(state: &State, factor: usize, params: &SpeciesParams) -> Result<State, AppError> {
    let u: Vec<CellField> = state.u.iter().map(|f| average(f, factor)).collect();
    let phi = average(&state.phi, factor);
    let phi_free = average(&state.phi_free, factor);
    let cells = phi.len();
    let mut w = vec![CellField::zeros(cells); params.n()];
    for j in 0..cells {
        let uj: Vec<f64> = u.iter().map(|f| f[j]).collect();
        let wj = entropy_variables(&uj, phi[j], params)?;
        for (i, v) in wj.into_iter().enumerate() {
            w[i][j] = v;
        }
    }
    Ok(State {
        u,
        w,
        phi,
        phi_free,
        time: state.time,
    })
}

fn reference_floor(traj: &Trajectory) -> f64 {
    traj.states
        .iter()
        .flat_map(|s| s.u.iter().map(|f| f.min()))
        .fold(f64::INFINITY, f64::min)
}

pub fn run_weak_strong(cfg: &RunConfig, deltas: &[f64]) -> Result<WeakStrongReport, AppError> {
    if deltas.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(AppError::Usage("perturbation sizes must be non-negative".into()));
    }
    let coarse = cfg.build()?;
    let mut fine_cfg = cfg.clone();
    fine_cfg.mesh.n_cells *= REFINEMENT;
    fine_cfg.stepping.tau /= REFINEMENT as f64;
    let fine = fine_cfg.build()?;
    let fine_problem = Problem::new(&fine.mesh, &fine.params, &fine.bd);
    let fine_start = initial_state(&fine_cfg, &fine)?;
    let reference = stepper::run_from(fine_start, &fine_problem, &fine.opts, fine.t_end)?;
    let floor = reference_floor(&reference);
    if !(floor >= REFERENCE_FLOOR) {
        return Err(CoreError::ReferenceNotInterior { min: floor }.into());
    }
    let restricted: Vec<State> = reference
        .states
        .iter()
        .map(|s| restrict(s, REFINEMENT, &fine.params))
        .collect::<Result<_, _>>()?;

    let mesh: &Mesh = &coarse.mesh;
    let params = &coarse.params;
    let problem = Problem::new(mesh, params, &coarse.bd);
    let tol = 1e-9 * coarse.opts.tau;
    let mut samples = Vec::new();
    let mut summaries = Vec::new();
    for &delta in deltas {
        let mut u0 = restricted[0].u.clone();
        for j in 0..mesh.n_cells() {
            let b = delta * bump(mesh.center(j), mesh.length());
            u0[1][j] += b;
            u0[0][j] -= b;
        }
        let start = stepper::initial_state(&u0, &problem, 0.0)?;
        let traj = stepper::run_from(start, &problem, &coarse.opts, coarse.t_end)?;
        let mut first = None;
        let mut max_re = 0.0f64;
        for (k, state) in traj.states.iter().enumerate() {
            let Some(reference) = restricted.iter().find(|r| (r.time - state.time).abs() <= tol) else {
                continue;
            };
            let re = relative_entropy(state, reference, params, mesh)?;
            let total = re.total();
            first.get_or_insert(total);
            max_re = max_re.max(total);
            samples.push(RelativeEntropySample {
                delta,
                step: k,
                time: state.time,
                relative_entropy: total,
                h1: re.h1,
                h2: re.h2,
            });
        }
        let initial = first.unwrap_or(0.0);
        summaries.push(DeltaSummary {
            delta,
            initial_relative_entropy: initial,
            max_relative_entropy: max_re,
            gronwall_ratio: (initial > 0.0).then(|| max_re / initial),
        });
    }
    Ok(WeakStrongReport { samples, summaries })
}

pub fn write_samples(path: &std::path::Path, report: &WeakStrongReport) -> Result<(), AppError> {
    let header: Vec<String> = ["delta", "step", "time", "relative_entropy", "h1", "h2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = report
        .samples
        .iter()
        .map(|s| {
            vec![
                fmt_real(s.delta),
                s.step.to_string(),
                fmt_real(s.time),
                fmt_real(s.relative_entropy),
                fmt_real(s.h1),
                fmt_real(s.h2),
            ]
        })
        .collect();
    write_table(path, &header, &rows)
}
