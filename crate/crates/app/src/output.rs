//! CSV and JSON writers. Reals are written with 17 significant digits so
//! that files replay bit-for-bit.

use std::fs;
use std::path::Path;

use pnpf_core::diagnostics::DiagnosticsRecord;
use pnpf_core::{Mesh, State};
use serde::Serialize;

use crate::error::AppError;

pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>, AppError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    csv::Writer::from_path(path).map_err(|e| AppError::io(path, e))
}

/// Writes a header row followed by rows of preformatted cells.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), AppError> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| AppError::io(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| AppError::io(path, e))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn timeseries_header(n: usize, with_relative_entropy: bool) -> Vec<String> {
    let mut h: Vec<String> = ["step", "time", "H", "dissipation"].iter().map(|s| s.to_string()).collect();
    for k in 0..=n {
        h.push(format!("u{k}_min"));
        h.push(format!("u{k}_max"));
    }
    h.extend(
        ["saturation_error", "newton_iterations", "tau_used"]
            .iter()
            .map(|s| s.to_string()),
    );
    if with_relative_entropy {
        h.push("relative_entropy".into());
    }
    h
}

pub fn timeseries_row(r: &DiagnosticsRecord, with_relative_entropy: bool) -> Vec<String> {
    let mut row = vec![
        r.step.to_string(),
        fmt_real(r.time),
        fmt_real(r.free_energy),
        fmt_real(r.dissipation),
    ];
    for (lo, hi) in r.u_min.iter().zip(&r.u_max) {
        row.push(fmt_real(*lo));
        row.push(fmt_real(*hi));
    }
    row.push(fmt_real(r.saturation_error));
    row.push(r.newton_iterations.to_string());
    row.push(fmt_real(r.tau_used));
    if with_relative_entropy {
        row.push(r.relative_entropy.map(fmt_real).unwrap_or_default());
    }
    row
}

pub fn write_timeseries(path: &Path, records: &[DiagnosticsRecord]) -> Result<(), AppError> {
    let n = records.first().map_or(0, |r| r.u_min.len().saturating_sub(1));
    let with_re = records.iter().any(|r| r.relative_entropy.is_some());
    let rows: Vec<Vec<String>> = records.iter().map(|r| timeseries_row(r, with_re)).collect();
    write_table(path, &timeseries_header(n, with_re), &rows)
}

/// Columns `x, u_0…u_n, Phi, w_1…w_n, phi_split`.
pub fn write_snapshot(path: &Path, state: &State, mesh: &Mesh) -> Result<(), AppError> {
    let n = state.w.len();
    let mut header = vec!["x".to_string()];
    header.extend((0..=n).map(|k| format!("u_{k}")));
    header.push("Phi".into());
    header.extend((1..=n).map(|i| format!("w_{i}")));
    header.push("phi_split".into());
    let rows: Vec<Vec<String>> = (0..mesh.n_cells())
        .map(|j| {
            let mut row = vec![fmt_real(mesh.center(j))];
            row.extend(state.u.iter().map(|f| fmt_real(f[j])));
            row.push(fmt_real(state.phi[j]));
            row.extend(state.w.iter().map(|f| fmt_real(f[j])));
            row.push(fmt_real(state.phi_free[j]));
            row
        })
        .collect();
    write_table(path, &header, &rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), AppError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("summary serializes");
    fs::write(path, text + "\n").map_err(|e| AppError::io(path, e))
}
