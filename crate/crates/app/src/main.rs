use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pnpf_app::mms::MmsCase;
use pnpf_app::{check, ell_sweep, mms, output, scenario, weak_strong, AppError, RunConfig};

#[derive(Parser)]
#[command(name = "pnpf", version, about = "Entropy-stable Poisson-Nernst-Planck-Fermi simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory (defaults to `output.dir` of the config, then `pnpf-out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for randomized checks; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run a time-dependent scenario.
    Run { config: PathBuf },
    /// Manufactured-solution convergence study.
    Mms {
        config: PathBuf,
        /// elliptic, parabolic or equilibrium
        #[arg(long)]
        case: String,
    },
    /// Relative entropy of perturbed coarse runs against a fine reference.
    WeakStrong {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        delta: Vec<f64>,
    },
    /// Steady potentials for several correlation lengths.
    EllSweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        ell: Vec<f64>,
    },
    /// Validate a configuration and run seeded self-checks.
    Check { config: PathBuf },
}

fn out_dir(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("pnpf-out"))
}

fn load(path: &Path, cli: &Cli) -> Result<RunConfig, AppError> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<(), AppError> {
    let say = |msg: String| {
        if !cli.quiet {
            println!("{msg}");
        }
    };
    match &cli.command {
        Command::Run { config } => {
            let cfg = load(config, cli)?;
            let dir = out_dir(cli, &cfg);
            let outcome = scenario::run_scenario(&cfg, Some(&dir))?;
            let s = &outcome.summary;
            say(format!(
                "{} steps to t = {}: H {:.6e} -> {:.6e}, energy violations {}, bound violations {}; wrote {}",
                s.steps,
                s.final_time,
                s.initial_free_energy,
                s.final_free_energy,
                s.energy_violations,
                s.bound_violations,
                dir.display()
            ));
            if outcome.invariant_violations() > 0 {
                return Err(AppError::Invariant(format!(
                    "{} energy and {} bound violations",
                    s.energy_violations, s.bound_violations
                )));
            }
        }
        Command::Mms { config, case } => {
            let cfg = load(config, cli)?;
            let case: MmsCase = case.parse()?;
            let rows = mms::run_mms(&cfg, case)?;
            let dir = out_dir(cli, &cfg);
            mms::write_convergence(&dir.join("convergence.csv"), &rows)?;
            for r in &rows {
                say(format!(
                    "{:<12} cells {:>4} tau {:.3e} error {:.6e} order {}",
                    r.study,
                    r.n_cells,
                    r.tau,
                    r.error,
                    r.order.map_or("-".to_string(), |o| format!("{o:.3}"))
                ));
            }
        }
        Command::WeakStrong { config, delta } => {
            let cfg = load(config, cli)?;
            let report = weak_strong::run_weak_strong(&cfg, delta)?;
            let dir = out_dir(cli, &cfg);
            weak_strong::write_samples(&dir.join("weak_strong.csv"), &report)?;
            output::write_json(&dir.join("weak_strong.json"), &report.summaries)?;
            for s in &report.summaries {
                say(format!(
                    "delta {:.3e}: RE(0) {:.6e}, max RE {:.6e}, ratio {}",
                    s.delta,
                    s.initial_relative_entropy,
                    s.max_relative_entropy,
                    s.gronwall_ratio.map_or("-".to_string(), |r| format!("{r:.4}"))
                ));
            }
        }
        Command::EllSweep { config, ell } => {
            let cfg = load(config, cli)?;
            let rows = ell_sweep::run_ell_sweep(&cfg, ell)?;
            let dir = out_dir(cli, &cfg);
            ell_sweep::write_rows(&dir.join("ell_sweep.csv"), &rows)?;
            for r in &rows {
                say(format!(
                    "ell {:.3e}: |Phi_ell - Phi_0| = {:.6e}, order {}",
                    r.ell,
                    r.difference,
                    r.order.map_or("-".to_string(), |o| format!("{o:.3}"))
                ));
            }
        }
        Command::Check { config } => {
            let cfg = load(config, cli)?;
            let setup = cfg.build()?;
            cfg.initial_fractions(&setup.mesh, setup.params.n())?;
            let report = check::self_check(&setup.params, cfg.seed, 1000);
            say(format!(
                "configuration valid; roundtrip error {:.3e}, subspace failures {}",
                report.roundtrip_max_error, report.subspace_failures
            ));
            if !report.passed() {
                return Err(AppError::Invariant("self-check failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
