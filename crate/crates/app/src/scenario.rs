//! Single time-dependent runs with per-step diagnostics and file output.

use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use pnpf_core::diagnostics::{
    dissipation_lower_bound, energy_inequality_check, trajectory_records, DiagnosticsRecord, DissipationBound,
    EnergyStepCheck,
};
use pnpf_core::stepper::{self, Problem};
use pnpf_core::{State, Trajectory};
use serde::Serialize;

use crate::config::{RunConfig, Setup};
use crate::error::AppError;
use crate::output;

/// Absolute slack for the dissipation lower bound.
pub const DISSIPATION_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub steps: usize,
    pub final_time: f64,
    pub initial_free_energy: f64,
    pub final_free_energy: f64,
    pub energy_violations: usize,
    pub max_energy_excess: f64,
    pub bound_violations: usize,
    pub dissipation_bound_violations: usize,
    pub equilibrium_boundary: bool,
    pub runtime_seconds: f64,
    pub timestamp: u64,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub setup: Setup,
    pub trajectory: Trajectory,
    pub records: Vec<DiagnosticsRecord>,
    pub energy_checks: Vec<EnergyStepCheck>,
    pub dissipation_bounds: Vec<DissipationBound>,
    pub summary: Summary,
}

impl ScenarioOutcome {
    pub fn invariant_violations(&self) -> usize {
        self.summary.energy_violations + self.summary.bound_violations
    }
}

/// Initial state described by the configuration.
pub fn initial_state(cfg: &RunConfig, setup: &Setup) -> Result<State, AppError> {
    let problem = Problem::new(&setup.mesh, &setup.params, &setup.bd);
    match cfg.initial_fractions(&setup.mesh, setup.params.n())? {
        None => Ok(stepper::equilibrium_state(&problem, &setup.opts.newton)?),
        Some(u) => Ok(stepper::initial_state(&u, &problem, 0.0)?),
    }
}

/// Runs the configured scenario without touching the filesystem.
pub fn simulate(cfg: &RunConfig) -> Result<ScenarioOutcome, AppError> {
    let started = Instant::now();
    let setup = cfg.build()?;
    let initial = initial_state(cfg, &setup)?;
    let problem = Problem::new(&setup.mesh, &setup.params, &setup.bd);
    let trajectory = stepper::run_from(initial, &problem, &setup.opts, setup.t_end)?;
    let (mesh, params, bd) = (&setup.mesh, &setup.params, &setup.bd);
    let records = trajectory_records(&trajectory, bd, params, mesh)?;
    let slack = 10.0 * setup.opts.newton.abs_tol;
    let energy_checks = energy_inequality_check(&trajectory, bd, params, mesh, setup.opts.eps, slack)?;
    let dissipation_bounds: Vec<DissipationBound> = trajectory.states[1..]
        .iter()
        .map(|s| dissipation_lower_bound(s, bd, params, mesh))
        .collect();
    let summary = Summary {
        steps: trajectory.reports.len(),
        final_time: trajectory.last().time,
        initial_free_energy: records.first().map_or(0.0, |r| r.free_energy),
        final_free_energy: records.last().map_or(0.0, |r| r.free_energy),
        energy_violations: energy_checks.iter().filter(|c| c.violated).count(),
        max_energy_excess: energy_checks.iter().map(|c| c.excess).fold(f64::NEG_INFINITY, f64::max),
        bound_violations: trajectory.states.iter().filter(|s| !s.within_bounds(1e-12)).count(),
        dissipation_bound_violations: dissipation_bounds.iter().filter(|b| !b.holds(DISSIPATION_SLACK)).count(),
        equilibrium_boundary: bd.equilibrium,
        runtime_seconds: started.elapsed().as_secs_f64(),
        timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    };
    Ok(ScenarioOutcome {
        setup,
        trajectory,
        records,
        energy_checks,
        dissipation_bounds,
        summary,
    })
}

/// Writes `timeseries.csv`, `snapshots/snap_<k>.csv` and `summary.json`.
pub fn write_outputs(outcome: &ScenarioOutcome, stride: usize, dir: &Path) -> Result<(), AppError> {
    output::write_timeseries(&dir.join("timeseries.csv"), &outcome.records)?;
    let last = outcome.trajectory.states.len() - 1;
    for (k, state) in outcome.trajectory.states.iter().enumerate() {
        if k % stride == 0 || k == last {
            output::write_snapshot(&dir.join("snapshots").join(format!("snap_{k}.csv")), state, &outcome.setup.mesh)?;
        }
    }
    output::write_json(&dir.join("summary.json"), &outcome.summary)
}

/// Runs the scenario and, when `dir` is given, writes its files there.
pub fn run_scenario(cfg: &RunConfig, dir: Option<&Path>) -> Result<ScenarioOutcome, AppError> {
    let outcome = simulate(cfg)?;
    if let Some(dir) = dir {
        write_outputs(&outcome, cfg.output.snapshot_stride, dir)?;
    }
    Ok(outcome)
}
