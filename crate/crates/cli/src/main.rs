//! `navsim` command-line front end.
//!
//! Exit codes: 0 success, 1 config or usage error, 2 runtime error.

mod config;
mod plot;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use navsim::log::{read_log, read_trajectory, write_batch, write_log, write_trajectory};
use navsim::sim::{run_batch, run_scenario, BatchResult, RunMetrics};
use navsim::Scenario;
use thiserror::Error;

use config::Overrides;

#[derive(Debug, Parser)]
#[command(
    name = "navsim",
    version,
    about = "Closed-loop GPS/EKF/MPC vehicle simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and write its log, metrics and plot.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Run seeded replicates and print a per-run error table.
    Batch {
        config: PathBuf,
        /// Number of replicates.
        #[arg(short = 'n', long, default_value_t = 10)]
        runs: usize,
        /// Seed of the first replicate (GPS; the magnetometer uses seed + 1).
        #[arg(long)]
        seed_base: Option<u64>,
        /// Seed increment between replicates.
        #[arg(long, default_value_t = 1)]
        seed_stride: u64,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        gps_rate: Option<f64>,
    },
    /// Render a run log over its reference trajectory as SVG.
    Plot {
        log: PathBuf,
        trajectory: PathBuf,
        out: PathBuf,
    },
    /// Check a config file without simulating.
    Validate { config: PathBuf },
}

#[derive(Debug, Args)]
struct OverrideArgs {
    /// GPS seed (the magnetometer uses seed + 1).
    #[arg(long)]
    seed: Option<u64>,
    /// Run length in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// GPS rate in Hz; must divide the control rate.
    #[arg(long)]
    gps_rate: Option<f64>,
}

impl From<&OverrideArgs> for Overrides {
    fn from(a: &OverrideArgs) -> Self {
        Overrides {
            seed: a.seed,
            duration: a.duration,
            gps_rate: a.gps_rate,
        }
    }
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn runtime(context: impl std::fmt::Display) -> impl FnOnce(String) -> CliError {
    move |e| CliError::Runtime(format!("{context}: {e}"))
}

/// Writes through a sibling temporary file so readers never see a partial
/// file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Runtime(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = fs::write(&tmp, bytes).and_then(|_| fs::rename(&tmp, path));
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn to_bytes<F>(f: F) -> Result<Vec<u8>, CliError>
where
    F: FnOnce(&mut Vec<u8>) -> Result<(), navsim::log::LogError>,
{
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(buf)
}

fn metrics_table(m: &RunMetrics) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<20}{:>10}{:>10}{:>9}",
        "source", "max (m)", "avg (m)", "samples"
    );
    let mut row = |name: &str, s: Option<navsim::metrics::ErrorStats>| {
        let _ = match s {
            Some(s) => writeln!(
                out,
                "{name:<20}{:>10.3}{:>10.3}{:>9}",
                s.max_error, s.avg_error, s.samples
            ),
            None => writeln!(out, "{name:<20}{:>10}{:>10}{:>9}", "-", "-", 0),
        };
    };
    row("meas vs truth", m.measurement_vs_truth);
    row("est vs truth", Some(m.estimate_vs_truth));
    row("truth vs reference", Some(m.truth_vs_reference));
    out
}

fn metrics_csv(m: &RunMetrics) -> Result<Vec<u8>, CliError> {
    let mut buf = b"# schema=1\n".to_vec();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let err = |e: csv::Error| CliError::Runtime(e.to_string());
        w.write_record(["source", "max_error", "avg_error", "samples"])
            .map_err(err)?;
        for (name, s) in [
            ("measurement_vs_truth", m.measurement_vs_truth),
            ("estimate_vs_truth", Some(m.estimate_vs_truth)),
            ("truth_vs_reference", Some(m.truth_vs_reference)),
        ] {
            let record = match s {
                Some(s) => [
                    name.to_string(),
                    format!("{:?}", s.max_error),
                    format!("{:?}", s.avg_error),
                    s.samples.to_string(),
                ],
                None => [name.to_string(), String::new(), String::new(), "0".into()],
            };
            w.write_record(&record).map_err(err)?;
        }
        w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(buf)
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn cmd_run(path: &Path, overrides: &Overrides) -> Result<(), CliError> {
    let loaded = config::load(path)?;
    let scenario = loaded.scenario(overrides)?;
    let result = run_scenario(&scenario).map_err(|e| CliError::Runtime(e.to_string()))?;

    let out = loaded.output_dir();
    ensure_dir(&out)?;
    let log_path = out.join("run.csv");
    write_atomic(&log_path, &to_bytes(|b| write_log(b, &result.log))?)?;
    write_atomic(
        &out.join("trajectory.csv"),
        &to_bytes(|b| write_trajectory(b, &result.trajectory))?,
    )?;
    write_atomic(&out.join("metrics.csv"), &metrics_csv(&result.metrics)?)?;
    if loaded.file.plot {
        let title = format!("{} run", scenario.mode.as_str());
        if let Some(svg) = plot::render(&result.log, &result.trajectory, &title) {
            write_atomic(&out.join("plot.svg"), svg.as_bytes())?;
        }
    }

    let rows = result.log.rows.len();
    let last_t = result.log.rows.last().map_or(0.0, |r| r.t);
    print!(
        "mode {}, {rows} ticks ({last_t:.1} s)\n{}",
        scenario.mode.as_str(),
        metrics_table(&result.metrics)
    );
    eprintln!("wrote {}", out.display());
    if let Some(reason) = result.log.aborted {
        return Err(CliError::Runtime(format!(
            "run aborted at {reason}; partial log written to {}",
            log_path.display()
        )));
    }
    Ok(())
}

fn batch_table(batch: &BatchResult) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>4}{:>10}{:>10}{:>10}{:>10}{:>10}",
        "run", "gps seed", "EKF max", "EKF avg", "MEAS max", "MEAS avg"
    );
    for run in &batch.runs {
        let head = format!("{:>4}{:>10}", run.index + 1, run.gps_seed);
        let _ = match &run.metrics {
            Ok(m) => {
                let (mmax, mavg) = m
                    .measurement_vs_truth
                    .map_or(("-".to_string(), "-".to_string()), |s| {
                        (format!("{:.3}", s.max_error), format!("{:.3}", s.avg_error))
                    });
                writeln!(
                    out,
                    "{head}{:>10.3}{:>10.3}{mmax:>10}{mavg:>10}",
                    m.estimate_vs_truth.max_error, m.estimate_vs_truth.avg_error
                )
            }
            Err(e) => writeln!(out, "{head}  failed: {e}"),
        };
    }
    let s = &batch.summary;
    let _ = writeln!(
        out,
        "EKF better max error in {}/{} runs, better average error in {}/{} runs",
        s.ekf_max_wins, s.completed, s.ekf_avg_wins, s.completed
    );
    if s.completed < s.runs {
        let _ = writeln!(out, "{} of {} runs failed", s.runs - s.completed, s.runs);
    }
    out
}

fn cmd_batch(
    path: &Path,
    runs: usize,
    seed_base: Option<u64>,
    seed_stride: u64,
    overrides: &Overrides,
) -> Result<(), CliError> {
    if runs == 0 {
        return Err(CliError::Config(config::ConfigError::Invalid(
            "--runs must be at least 1".into(),
        )));
    }
    let loaded = config::load(path)?;
    let scenario: Scenario = loaded.scenario(&Overrides {
        seed: seed_base.or(overrides.seed),
        ..*overrides
    })?;
    let batch =
        run_batch(&scenario, runs, seed_stride).map_err(|e| CliError::Runtime(e.to_string()))?;
    let out = loaded.output_dir();
    ensure_dir(&out)?;
    write_atomic(
        &out.join("batch.csv"),
        &to_bytes(|b| write_batch(b, &batch))?,
    )?;
    print!("{}", batch_table(&batch));
    eprintln!("wrote {}", out.join("batch.csv").display());
    if batch.summary.completed < batch.summary.runs {
        return Err(CliError::Runtime("some replicates failed".into()));
    }
    Ok(())
}

fn cmd_plot(log: &Path, trajectory: &Path, out: &Path) -> Result<(), CliError> {
    let open = |p: &Path| {
        fs::File::open(p)
            .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", p.display())))
    };
    let run = read_log(open(log)?).map_err(|e| runtime(log.display())(e.to_string()))?;
    let traj = read_trajectory(open(trajectory)?)
        .map_err(|e| runtime(trajectory.display())(e.to_string()))?;
    let title = log
        .file_name()
        .map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    let svg = plot::render(&run, &traj, &title)
        .ok_or_else(|| CliError::Runtime(format!("{} has no rows to plot", log.display())))?;
    write_atomic(out, svg.as_bytes())
}

fn cmd_validate(path: &Path) -> Result<(), CliError> {
    let loaded = config::load(path)?;
    let s = loaded.scenario(&Overrides::default())?;
    println!("{}: ok ({} mode)", path.display(), s.mode.as_str());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run { config, overrides } => cmd_run(config, &overrides.into()),
        Command::Batch {
            config,
            runs,
            seed_base,
            seed_stride,
            duration,
            gps_rate,
        } => cmd_batch(
            config,
            *runs,
            *seed_base,
            *seed_stride,
            &Overrides {
                seed: None,
                duration: *duration,
                gps_rate: *gps_rate,
            },
        ),
        Command::Plot {
            log,
            trajectory,
            out,
        } => cmd_plot(log, trajectory, out),
        Command::Validate { config } => cmd_validate(config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
