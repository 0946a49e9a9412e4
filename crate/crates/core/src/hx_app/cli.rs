use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use super::config::ProblemConfig;
use super::export::{export_fields, HistoryWriter};
use super::problem::build_problem;
use super::verify::run_verification;
use crate::error::{Error, Result};
use crate::optimizer::{run_optimization, DesignProblem};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "hxtopo",
    version,
    about = "Level-set topology optimization of two-fluid heat exchangers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimize the design described by a configuration file.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "hxtopo-out")]
        output_dir: PathBuf,
        /// Override the configured iteration limit.
        #[arg(long)]
        max_iters: Option<usize>,
        /// Override the configured snapshot interval.
        #[arg(long)]
        snapshot_every: Option<usize>,
    },
    /// Solve flow and temperature for the initial design only.
    Solve {
        config: PathBuf,
        #[arg(long, default_value = "hxtopo-out")]
        output_dir: PathBuf,
    },
    /// Run the verification suites.
    Verify,
}

/// Entry point shared by the binary and the tests; returns the exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Run {
            config,
            output_dir,
            max_iters,
            snapshot_every,
        } => run(&config, &output_dir, max_iters, snapshot_every),
        Command::Solve { config, output_dir } => solve(&config, &output_dir),
        Command::Verify => verify(),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::InvalidArgument(_) => EXIT_CONFIG,
        e if e.is_solver_failure() => EXIT_SOLVER,
        _ => EXIT_FAILURE,
    }
}

fn load(path: &Path) -> Result<ProblemConfig> {
    // an unreadable configuration is a configuration error
    ProblemConfig::load(path).map_err(|e| match e {
        Error::Io { path, source } => Error::Config {
            path,
            line: 0,
            message: source.to_string(),
        },
        other => other,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn run(
    path: &Path,
    out: &Path,
    max_iters: Option<usize>,
    snapshot_every: Option<usize>,
) -> Result<i32> {
    let mut config = load(path)?;
    if let Some(n) = max_iters {
        config.max_iter = n;
    }
    if let Some(n) = snapshot_every {
        config.snapshot_every = n;
    }
    let mut problem = build_problem(&config)?;
    create_dir(out)?;
    let snapshot = out.join("config.toml");
    std::fs::write(&snapshot, config.to_toml()).map_err(|e| Error::io(&snapshot, e))?;

    let phi = problem.initial_phi.clone();
    let primal = problem.solve(&phi)?.clone();
    export_fields(&problem.mesh, &phi, &primal, &out.join("design_0000.vtk"))?;

    let mut history = HistoryWriter::create(&out.join("history.csv"))?;
    let mesh = problem.mesh.clone();
    let every = config.snapshot_every;
    let dir = out.to_path_buf();
    problem.set_observer(move |record, phi, primal| {
        history.append(record)?;
        if every > 0 && record.iter % every == 0 {
            export_fields(
                &mesh,
                phi,
                primal,
                &dir.join(format!("design_{:04}.vtk", record.iter)),
            )?;
        }
        Ok(())
    });
    let result = run_optimization(&mut problem, phi, &config.optimizer());
    let history = match result {
        Ok(h) => h,
        Err(aborted) => {
            eprintln!("{aborted}");
            return Ok(exit_code(&aborted.error));
        }
    };
    if let Some(phi) = &history.final_design {
        let primal = problem.solve(phi)?.clone();
        export_fields(&problem.mesh, phi, &primal, &out.join("final.vtk"))?;
        let e = problem.evaluate(phi)?;
        println!(
            "{} iterations in {:.1} s: J = {:.6}, G1 = {:.4}, G2 = {:.4} (P_drop = {}), leakage {:.2}%",
            history.records.len(),
            history.wall_clock.as_secs_f64(),
            e.j,
            e.g[0],
            e.g[1],
            config.p_drop,
            100.0 * problem.non_mixing_leakage(&primal)
        );
    }
    Ok(EXIT_OK)
}

fn solve(path: &Path, out: &Path) -> Result<i32> {
    let config = load(path)?;
    let mut problem = build_problem(&config)?;
    let phi = problem.initial_phi.clone();
    let primal = problem.solve(&phi)?.clone();
    let e = problem.functionals(&primal)?;
    create_dir(out)?;
    export_fields(&problem.mesh, &phi, &primal, &out.join("solution.vtk"))?;
    println!("J = {:.6}, G1 = {:.4}, G2 = {:.4}", e.j, e.g[0], e.g[1]);
    Ok(EXIT_OK)
}

fn verify() -> Result<i32> {
    let reports = run_verification(|r| println!("{r}"));
    let failed = reports.iter().filter(|r| !r.passed).count();
    if failed == 0 {
        println!("all {} suites passed", reports.len());
        Ok(EXIT_OK)
    } else {
        println!("{failed} of {} suites failed", reports.len());
        Ok(EXIT_FAILURE)
    }
}
