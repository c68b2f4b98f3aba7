//! `rangeodo`: run the odometry on recorded scans, simulate sequences,
//! evaluate trajectories and audit the analytic Jacobians.
//!
//! Exit codes: 0 success, 1 divergence or failed audit, 2 usage or
//! configuration error, 3 data error.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rangeodo::io::{end_poses, export_map, read_scans, read_trajectory, write_binary, write_csv_scan, write_diagnostics, write_trajectory};
use rangeodo::registration::audit::{jacobian_audit, Fault, TOLERANCE};
use rangeodo::simulator::{evaluate, ground_truth_poses, Scenario, SCENARIOS};
use rangeodo::{Odometry, Reduction};

const EXIT_DIVERGED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;

#[derive(Parser)]
#[command(name = "rangeodo", version, about = "Continuous-time GMM filter registration odometry")]
struct Cli {
    /// Worker threads for the data-parallel kernels (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the odometry over a scan source and write the trajectory.
    Run(RunArgs),
    /// Write a simulated scan sequence and its ground truth.
    Simulate(SimulateArgs),
    /// Compare an estimated trajectory with ground truth.
    Evaluate(EvaluateArgs),
    /// Compare the analytic Jacobians with finite differences.
    CheckJacobians(CheckArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Binary scan container, CSV file, or directory of CSV files.
    #[arg(long)]
    scans: PathBuf,
    /// Output trajectory, one `t tx ty tz qx qy qz qw` line per scan end.
    #[arg(long)]
    traj: PathBuf,
    /// `key = value` configuration file; `RANGEODO_<KEY>` variables override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Final map as an ASCII PLY file.
    #[arg(long)]
    map: Option<PathBuf>,
    /// Per-scan diagnostics, one JSON object per line.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    /// Register every point rigidly at the scan begin pose.
    #[arg(long)]
    no_ct: bool,
    /// Use nearest-pixel point-to-plane matching instead of Gaussian moments.
    #[arg(long)]
    no_gmm: bool,
    /// Exit 0 even if some scans diverged.
    #[arg(long)]
    best_effort: bool,
    /// Sum the normal equations sequentially so runs are bitwise repeatable.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Binary,
    Csv,
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "corridor", value_parser = clap::builder::PossibleValuesParser::new(SCENARIOS))]
    scenario: String,
    /// Sequence length in seconds; scans are 0.1 s.
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Binary)]
    format: Format,
}

#[derive(clap::Args)]
struct EvaluateArgs {
    #[arg(long)]
    est: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Print the metrics as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(clap::Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Corrupt the analytic registration Jacobian to prove the audit fails.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

/// Failure with its exit code.
struct Failure(u8, String);

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Failure(EXIT_USAGE, msg.into())
    }

    fn data(msg: impl ToString) -> Self {
        Failure(EXIT_DATA, msg.to_string())
    }
}

fn require_input(path: &Path) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::usage(format!("{}: no such file or directory", path.display())))
    }
}

fn require_output(path: &Path) -> Result<(), Failure> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if parent.is_dir() && !path.is_dir() {
        Ok(())
    } else {
        Err(Failure::usage(format!("{}: cannot write here", path.display())))
    }
}

fn cmd_run(args: RunArgs) -> Result<u8, Failure> {
    let mut cfg = config::load(args.config.as_deref(), std::env::vars()).map_err(|e| Failure::usage(e.to_string()))?;
    cfg.registration.ct_enabled = !args.no_ct;
    cfg.registration.gmm_enabled = !args.no_gmm;
    if args.deterministic {
        cfg.registration.reduction = Reduction::Sequential;
    }
    require_input(&args.scans)?;
    for out in [Some(&args.traj), args.map.as_ref(), args.diagnostics.as_ref()].into_iter().flatten() {
        require_output(out)?;
    }

    let started = Instant::now();
    let source = read_scans(&args.scans, cfg.scan_window).map_err(Failure::data)?;
    let mut odom = Odometry::new(cfg).map_err(|e| Failure::usage(e.to_string()))?;
    let mut records = Vec::new();
    for scan in source {
        let scan = scan.map_err(Failure::data)?;
        records.push(odom.process_scan(&scan));
    }
    let elapsed = started.elapsed().as_secs_f64();

    write_trajectory(&args.traj, &end_poses(&records)).map_err(Failure::data)?;
    if let Some(path) = &args.diagnostics {
        write_diagnostics(path, &records).map_err(Failure::data)?;
    }
    if let Some(path) = &args.map {
        match odom.map() {
            Some(map) => export_map(path, map, odom.normal_maps()).map_err(Failure::data)?,
            None => log::warn!("no map was built; {} not written", path.display()),
        }
    }

    let diverged = records.iter().filter(|r| r.diverged()).count();
    println!(
        "{} scans in {:.2} s ({:.1} scans/s), {} diverged",
        records.len(),
        elapsed,
        records.len() as f64 / elapsed.max(1e-9),
        diverged
    );
    if diverged > 0 && !args.best_effort {
        eprintln!("error: {diverged} scan(s) diverged (use --best-effort to accept)");
        return Ok(EXIT_DIVERGED);
    }
    Ok(0)
}

fn cmd_simulate(args: SimulateArgs) -> Result<u8, Failure> {
    let scenario = Scenario::named(&args.scenario, args.duration).map_err(|e| Failure::usage(e.to_string()))?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Failure::usage(format!("{}: cannot create output directory: {e}", args.out.display())))?;
    let sims = scenario.run(args.seed).map_err(Failure::data)?;
    let scans: Vec<_> = sims.iter().map(|s| s.scan.clone()).collect();
    let target = match args.format {
        Format::Binary => {
            let path = args.out.join("scans.bin");
            write_binary(&path, &format!("sim:{}", args.scenario), &scans).map_err(Failure::data)?;
            path
        }
        Format::Csv => {
            let dir = args.out.join("scans");
            std::fs::create_dir_all(&dir).map_err(|e| Failure::data(format!("{}: {e}", dir.display())))?;
            for (i, scan) in scans.iter().enumerate() {
                write_csv_scan(&dir.join(format!("{i:06}.csv")), scan, &format!("sim:{}", args.scenario))
                    .map_err(Failure::data)?;
            }
            dir
        }
    };
    write_trajectory(&args.out.join("ground_truth.txt"), &ground_truth_poses(&sims)).map_err(Failure::data)?;
    let points: usize = scans.iter().map(|s| s.len()).sum();
    println!(
        "{}: {} scans, {:.0} points/scan -> {}",
        args.scenario,
        scans.len(),
        points as f64 / scans.len().max(1) as f64,
        target.display()
    );
    Ok(0)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<u8, Failure> {
    require_input(&args.est)?;
    require_input(&args.gt)?;
    let est = read_trajectory(&args.est).map_err(Failure::data)?;
    let gt = read_trajectory(&args.gt).map_err(Failure::data)?;
    let m = evaluate(&est, &gt).map_err(Failure::data)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&m).expect("metrics serialize"));
        return Ok(0);
    }
    let pct = if m.path_length > 0.0 { 100.0 * m.end_to_end / m.path_length } else { 0.0 };
    println!("matched poses      {}", m.matched);
    println!("path length   [m]  {:.6}", m.path_length);
    println!("end-to-end    [m]  {:.6}", m.end_to_end);
    println!("end-to-end    [%]  {:.4}", pct);
    println!("ATE RMSE      [m]  {:.6}", m.ate_rmse);
    println!("RPE trans     [m]  {:.6}", m.rpe_trans_rmse);
    println!("RPE rot     [deg]  {:.6}", m.rpe_rot_rmse.to_degrees());
    println!("max drift     [m]  {:.6}", m.max_drift);
    Ok(0)
}

fn cmd_check_jacobians(args: CheckArgs) -> Result<u8, Failure> {
    if args.trials == 0 {
        eprintln!("warning: zero trials requested, nothing checked");
        return Ok(0);
    }
    let fault = args.inject_fault.then_some(Fault::FlipRegistrationSign);
    let r = jacobian_audit(args.seed, args.trials, fault);
    println!(
        "{} trials: max relative error reg {:.2e}, loc {:.2e}, vel {:.2e} (tolerance {:.0e}); {} failed",
        r.trials, r.max_error_reg, r.max_error_loc, r.max_error_vel, TOLERANCE, r.failures
    );
    Ok(if r.passed() { 0 } else { 1 })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::CheckJacobians(a) => cmd_check_jacobians(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
