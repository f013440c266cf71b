use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use iam_core::run::{error_record, run, Mode, RunConfig, ERROR_FILE};
use iam_core::IamError;

/// Integrated assessment model solver.
///
/// Modes: solve-det, solve-vfi, simulate, sceq, regret, maxmin, montecarlo,
/// expected, scc, summarize. IAM_THREADS caps worker threads.
#[derive(Debug, Parser)]
#[command(name = "iam", version)]
struct Cli {
    /// Run mode.
    mode: String,
    /// Calibration TOML (not needed by summarize).
    #[arg(long)]
    calib: Option<PathBuf>,
    /// Scenario and belief TOML for robust modes.
    #[arg(long)]
    scenarios: Option<PathBuf>,
    /// Controlled periods.
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Chebyshev degree for value function iteration.
    #[arg(long)]
    degree: Option<usize>,
    /// Simulated paths or Monte Carlo draws.
    #[arg(long)]
    paths: Option<usize>,
    /// Solver tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Ensemble CSV for summarize (default <out>/ensemble.csv).
    #[arg(long)]
    input: Option<PathBuf>,
}

fn fail(out: &std::path::Path, record: serde_json::Value, code: i32) -> ExitCode {
    let line = record.to_string();
    eprintln!("{line}");
    if std::fs::create_dir_all(out).is_ok() {
        let _ = std::fs::write(out.join(ERROR_FILE), line + "\n");
    }
    ExitCode::from(code as u8)
}

fn threads() -> Result<Option<usize>, IamError> {
    match std::env::var("IAM_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(IamError::config(format!(
                "IAM_THREADS must be a positive integer, got '{v}'"
            ))),
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let setup = || -> Result<RunConfig, IamError> {
        let mode: Mode = cli.mode.parse()?;
        if let Some(n) = threads()? {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| IamError::config(format!("thread pool: {e}")))?;
        }
        Ok(RunConfig {
            mode,
            calib: cli.calib.clone(),
            scenarios: cli.scenarios.clone(),
            input: cli.input.clone(),
            out: cli.out.clone(),
            horizon: cli.horizon,
            seed: cli.seed,
            degree: cli.degree,
            paths: cli.paths,
            tol: cli.tol,
        })
    };
    let cfg = match setup() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("usage: iam <mode> --calib <file> [--scenarios <file>] [--horizon N] [--seed S] [--out DIR] [--degree D] [--paths N] [--tol X]");
            return fail(&cli.out, error_record(&e), e.exit_code());
        }
    };
    match run(&cfg) {
        Ok(m) if m.passed => {
            let _ = std::fs::remove_file(cfg.out.join(ERROR_FILE));
            println!(
                "{}: ok ({} checks, {:.2} s)",
                cfg.mode.name(),
                m.checks.len(),
                m.wall_seconds
            );
            ExitCode::SUCCESS
        }
        Ok(m) => {
            let failed: Vec<_> = m.checks.iter().filter(|c| !c.passed).collect();
            let record = serde_json::json!({
                "status": "error",
                "kind": "invariant",
                "exit_code": 1,
                "message": format!("{} invariant check(s) failed", failed.len()),
                "failed_checks": failed,
            });
            fail(&cfg.out, record, 1)
        }
        Err(e) => fail(&cfg.out, error_record(&e), e.exit_code()),
    }
}
