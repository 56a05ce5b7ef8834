use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pnpf_app::{AppError, RunConfig};

fn pnpf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pnpf")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

/// A short decay run that finishes in well under a second.
fn small_config(dir: &Path) -> PathBuf {
    let mut cfg = RunConfig::default_decay();
    cfg.mesh.n_cells = 24;
    cfg.stepping.tau = 2e-3;
    cfg.stepping.t_end = 0.02;
    cfg.output.snapshot_stride = 4;
    let path = dir.join("small.toml");
    fs::write(&path, cfg.to_toml()).unwrap();
    path
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|c| c.parse::<f64>().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn shipped_configs_match_the_builtin_presets() {
    let cases = [
        ("decay.toml", RunConfig::default_decay()),
        ("equilibrium.toml", RunConfig::default_equilibrium()),
        ("weak_strong.toml", RunConfig::default_weak_strong()),
        ("ell_sweep.toml", RunConfig::default_ell_sweep()),
    ];
    for (name, preset) in cases {
        let loaded = RunConfig::load(&repo_config(name)).unwrap();
        assert_eq!(loaded, preset, "{name}");
    }
    let reacting = RunConfig::load(&repo_config("annihilation.toml")).unwrap();
    assert!(reacting.build_params().unwrap().has_reactions());
}

#[test]
fn run_writes_replayable_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out_dir = tmp.path().join("out");
    let out = pnpf(&["run", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--quiet"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(out.stdout.is_empty());

    let (header, rows) = read_csv(&out_dir.join("timeseries.csv"));
    let expected: Vec<&str> = vec![
        "step", "time", "H", "dissipation", "u0_min", "u0_max", "u1_min", "u1_max", "u2_min", "u2_max",
        "saturation_error", "newton_iterations", "tau_used",
    ];
    assert_eq!(header, expected);
    assert_eq!(rows.len(), 11);
    // Replay the invariants from the file alone.
    for (k, row) in rows.iter().enumerate() {
        assert_eq!(row[0] as usize, k);
        for c in 4..10 {
            assert!(row[c] > 0.0 && row[c] < 1.0);
        }
        assert!(row[10] <= 1e-12);
        if k > 0 {
            assert!(row[2] <= rows[k - 1][2] + 1e-9, "H increased at step {k}");
        }
    }

    let snaps: Vec<String> = {
        let mut v: Vec<String> = fs::read_dir(out_dir.join("snapshots"))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        v.sort();
        v
    };
    assert_eq!(snaps, ["snap_0.csv", "snap_10.csv", "snap_4.csv", "snap_8.csv"]);
    let (header, rows) = read_csv(&out_dir.join("snapshots/snap_10.csv"));
    assert_eq!(header, ["x", "u_0", "u_1", "u_2", "Phi", "w_1", "w_2", "phi_split"]);
    assert_eq!(rows.len(), 24);
    for row in &rows {
        assert!((row[1] + row[2] + row[3] - 1.0).abs() <= 1e-12);
    }

    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["steps"], 10);
    assert_eq!(summary["energy_violations"], 0);
}

#[test]
fn runs_are_byte_reproducible_apart_from_timing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let dirs = [tmp.path().join("a"), tmp.path().join("b")];
    for d in &dirs {
        let out = pnpf(&["run", cfg.to_str().unwrap(), "--out", d.to_str().unwrap(), "--quiet", "--seed", "7"]);
        assert_eq!(code(&out), 0);
    }
    let mut files = vec![PathBuf::from("timeseries.csv")];
    for e in fs::read_dir(dirs[0].join("snapshots")).unwrap() {
        files.push(Path::new("snapshots").join(e.unwrap().file_name()));
    }
    for f in &files {
        assert_eq!(fs::read(dirs[0].join(f)).unwrap(), fs::read(dirs[1].join(f)).unwrap(), "{}", f.display());
    }
    let strip = |d: &Path| {
        let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("summary.json")).unwrap()).unwrap();
        let obj = v.as_object_mut().unwrap();
        obj.remove("timestamp");
        obj.remove("runtime_seconds");
        v
    };
    assert_eq!(strip(&dirs[0]), strip(&dirs[1]));
}

#[test]
fn json_configs_are_accepted() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("decay.json");
    fs::write(&path, serde_json::to_string(&RunConfig::default_decay()).unwrap()).unwrap();
    let out = pnpf(&["check", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("configuration valid"));
}

#[test]
fn malformed_configs_exit_with_validation_code() {
    let tmp = tempfile::tempdir().unwrap();
    let bad_sum = tmp.path().join("bad.toml");
    let text = RunConfig::default_decay().to_toml().replace("u = [0.5, 0.25, 0.25]\nphi = 0.0\n\n[initial]", "u = [0.5, 0.3, 0.25]\nphi = 0.0\n\n[initial]");
    assert!(text.contains("0.3, 0.25"));
    fs::write(&bad_sum, text).unwrap();
    let out = pnpf(&["check", bad_sum.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("boundary.right.u"), "{}", stderr(&out));

    let garbage = tmp.path().join("garbage.toml");
    fs::write(&garbage, "mesh.n_cells = \"many\"\n").unwrap();
    let out = pnpf(&["run", garbage.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("could not parse"));
}

#[test]
fn unknown_manufactured_case_is_a_usage_error() {
    let out = pnpf(&["mms", repo_config("decay.toml").to_str().unwrap(), "--case", "hyperbolic"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("hyperbolic"));
}

#[test]
fn elliptic_study_writes_convergence_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pnpf(&[
        "mms",
        repo_config("decay.toml").to_str().unwrap(),
        "--case",
        "elliptic",
        "--out",
        tmp.path().to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mut r = csv::Reader::from_path(tmp.path().join("convergence.csv")).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["study", "n_cells", "h", "tau", "error_l2", "order"]);
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 9);
    for row in rows.iter().filter(|row| !row[5].is_empty()) {
        assert!(row[5].parse::<f64>().unwrap() >= 1.9);
    }
}

#[test]
fn weak_strong_rejects_a_degenerate_reference() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default_weak_strong();
    cfg.mesh.n_cells = 10;
    cfg.stepping.tau = 1e-3;
    cfg.stepping.t_end = 2e-3;
    cfg.initial = toml::from_str("profile = \"constant\"\nu = [0.0, 0.25]").unwrap();
    let path = tmp.path().join("pinned.toml");
    fs::write(&path, cfg.to_toml()).unwrap();
    let out = pnpf(&["weak-strong", path.to_str().unwrap(), "--delta", "0,1e-2", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("simplex boundary"), "{}", stderr(&out));
}

#[test]
fn ell_sweep_requires_the_classical_limit() {
    let out = pnpf(&["ell-sweep", repo_config("ell_sweep.toml").to_str().unwrap(), "--ell", "0.1,0.01"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn missing_config_file_is_reported() {
    let out = pnpf(&["check", "/nonexistent/config.toml"]);
    assert_ne!(code(&out), 0);
    assert!(stderr(&out).contains("/nonexistent/config.toml"));
}

#[test]
fn exit_codes_follow_the_error_class() {
    assert_eq!(AppError::Usage("x".into()).exit_code(), 1);
    assert_eq!(AppError::Parse("x".into()).exit_code(), 1);
    assert_eq!(AppError::Solver(pnpf_core::Error::ZeroCorrelationLength).exit_code(), 2);
    assert_eq!(AppError::Invariant("x".into()).exit_code(), 3);
}
