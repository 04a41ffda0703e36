//! CSV persistence for run logs, trajectories and batch results.
//!
//! Every file starts with a `# schema=1` comment line. Optional fields are
//! written as empty cells.

use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::Vector2;
use thiserror::Error;

use crate::qp::QpStatus;
use crate::sim::{BatchResult, LogRow, QpRecord, RunLog};
use crate::trajectory::{ReferencePoint, Trajectory};
use crate::vehicle::{ControlInput, VehicleState};

pub const SCHEMA_VERSION: u32 = 1;

pub const LOG_COLUMNS: [&str; 21] = [
    "tick",
    "t",
    "truth_x",
    "truth_y",
    "truth_theta",
    "truth_v",
    "meas_x",
    "meas_y",
    "est_x",
    "est_y",
    "est_theta",
    "est_v",
    "ref_x",
    "ref_y",
    "ref_theta",
    "ref_v",
    "u_alpha",
    "u_delta",
    "qp_status",
    "qp_iters",
    "qp_objective",
];

pub const TRAJECTORY_COLUMNS: [&str; 6] = ["x_r", "y_r", "theta_r", "v_r", "alpha_r", "delta_r"];

#[derive(Debug, Error)]
pub enum LogError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing or unsupported schema line (expected `# schema={SCHEMA_VERSION}`)")]
    Schema,
    #[error("unexpected header: {0}")]
    Header(String),
    #[error("line {line}: {message}")]
    Field { line: u64, message: String },
}

fn write_schema<W: Write>(out: &mut W) -> Result<(), LogError> {
    writeln!(out, "# schema={SCHEMA_VERSION}")?;
    Ok(())
}

/// Consumes the schema line and returns a reader positioned at the header.
fn read_schema<R: Read>(input: R) -> Result<BufReader<R>, LogError> {
    let mut reader = BufReader::new(input);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let version = first
        .trim()
        .strip_prefix("# schema=")
        .and_then(|v| v.parse::<u32>().ok());
    if version != Some(SCHEMA_VERSION) {
        return Err(LogError::Schema);
    }
    Ok(reader)
}

fn check_header(reader: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<(), LogError> {
    let header = reader.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(LogError::Header(
            header.iter().collect::<Vec<_>>().join(","),
        ));
    }
    Ok(())
}

fn num(x: f64) -> String {
    // shortest round-trip representation
    format!("{x:?}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn parse_status(s: &str) -> Option<QpStatus> {
    match s {
        "solved" => Some(QpStatus::Solved),
        "max-iterations" => Some(QpStatus::MaxIterations),
        "primal-infeasible" => Some(QpStatus::PrimalInfeasible),
        _ => None,
    }
}

pub fn write_log<W: Write>(mut out: W, log: &RunLog) -> Result<(), LogError> {
    write_schema(&mut out)?;
    if let Some(reason) = &log.aborted {
        writeln!(out, "# aborted={}", reason.replace('\n', " "))?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LOG_COLUMNS)?;
    for r in &log.rows {
        let reference = r.reference;
        let record = [
            r.tick.to_string(),
            num(r.t),
            num(r.truth.x),
            num(r.truth.y),
            num(r.truth.theta),
            num(r.truth.v),
            opt(r.measurement.map(|m| m.x)),
            opt(r.measurement.map(|m| m.y)),
            num(r.estimate.x),
            num(r.estimate.y),
            num(r.estimate.theta),
            num(r.estimate.v),
            opt(reference.map(|p| p.x_r)),
            opt(reference.map(|p| p.y_r)),
            opt(reference.map(|p| p.theta_r)),
            opt(reference.map(|p| p.v_r)),
            num(r.input.alpha),
            num(r.input.delta),
            r.qp.map(|q| q.status.as_str().to_string())
                .unwrap_or_default(),
            r.qp.map(|q| q.iterations.to_string()).unwrap_or_default(),
            opt(r.qp.map(|q| q.objective)),
        ];
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

struct Fields<'a> {
    record: &'a csv::StringRecord,
    line: u64,
}

impl Fields<'_> {
    fn err(&self, message: String) -> LogError {
        LogError::Field {
            line: self.line,
            message,
        }
    }

    fn raw(&self, i: usize) -> Result<&str, LogError> {
        self.record
            .get(i)
            .ok_or_else(|| self.err(format!("missing column {i}")))
    }

    fn opt(&self, i: usize) -> Result<Option<f64>, LogError> {
        let s = self.raw(i)?;
        if s.is_empty() {
            return Ok(None);
        }
        s.parse::<f64>()
            .map(Some)
            .map_err(|_| self.err(format!("`{s}` is not a number")))
    }

    fn f(&self, i: usize) -> Result<f64, LogError> {
        self.opt(i)?
            .ok_or_else(|| self.err(format!("column {i} must not be empty")))
    }
}

pub fn read_log<R: Read>(input: R) -> Result<RunLog, LogError> {
    let mut buffered = read_schema(input)?;
    // an optional abort marker precedes the header
    let mut aborted = None;
    let mut rest = String::new();
    buffered.read_to_string(&mut rest)?;
    let body = match rest.strip_prefix("# aborted=") {
        Some(tail) => {
            let (reason, body) = tail.split_once('\n').unwrap_or((tail, ""));
            aborted = Some(reason.trim_end().to_string());
            body
        }
        None => rest.as_str(),
    };

    let mut reader = csv::Reader::from_reader(body.as_bytes());
    check_header(&mut reader, &LOG_COLUMNS)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let f = Fields {
            record: &record,
            line,
        };
        let tick = f
            .raw(0)?
            .parse::<u64>()
            .map_err(|_| f.err("tick is not an integer".into()))?;
        let measurement = match (f.opt(6)?, f.opt(7)?) {
            (Some(x), Some(y)) => Some(Vector2::new(x, y)),
            (None, None) => None,
            _ => return Err(f.err("measurement needs both coordinates".into())),
        };
        let reference = match (f.opt(12)?, f.opt(13)?, f.opt(14)?, f.opt(15)?) {
            (Some(x_r), Some(y_r), Some(theta_r), Some(v_r)) => Some(ReferencePoint {
                x_r,
                y_r,
                theta_r,
                v_r,
                u_r: ControlInput::default(),
            }),
            (None, None, None, None) => None,
            _ => return Err(f.err("reference must be complete or empty".into())),
        };
        let qp = if f.raw(18)?.is_empty() {
            None
        } else {
            let status = parse_status(f.raw(18)?)
                .ok_or_else(|| f.err(format!("unknown qp status `{}`", f.raw(18).unwrap_or(""))))?;
            let iterations = f
                .raw(19)?
                .parse::<usize>()
                .map_err(|_| f.err("qp_iters is not an integer".into()))?;
            Some(QpRecord {
                status,
                iterations,
                objective: f.f(20)?,
            })
        };
        rows.push(LogRow {
            tick,
            t: f.f(1)?,
            truth: VehicleState::new(f.f(2)?, f.f(3)?, f.f(4)?, f.f(5)?),
            measurement,
            estimate: VehicleState::new(f.f(8)?, f.f(9)?, f.f(10)?, f.f(11)?),
            reference,
            input: ControlInput::new(f.f(16)?, f.f(17)?),
            qp,
        });
    }
    Ok(RunLog { rows, aborted })
}

pub fn write_trajectory<W: Write>(mut out: W, trajectory: &Trajectory) -> Result<(), LogError> {
    write_schema(&mut out)?;
    if trajectory.is_closed() {
        writeln!(out, "# closed")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_COLUMNS)?;
    for p in trajectory.points() {
        w.write_record([
            num(p.x_r),
            num(p.y_r),
            num(p.theta_r),
            num(p.v_r),
            num(p.u_r.alpha),
            num(p.u_r.delta),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory<R: Read>(input: R) -> Result<Trajectory, LogError> {
    let mut buffered = read_schema(input)?;
    let mut rest = String::new();
    buffered.read_to_string(&mut rest)?;
    let (closed, body) = match rest.strip_prefix("# closed\n") {
        Some(body) => (true, body),
        None => (false, rest.as_str()),
    };
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    check_header(&mut reader, &TRAJECTORY_COLUMNS)?;
    let mut points = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let f = Fields {
            record: &record,
            line,
        };
        points.push(ReferencePoint {
            x_r: f.f(0)?,
            y_r: f.f(1)?,
            theta_r: f.f(2)?,
            v_r: f.f(3)?,
            u_r: ControlInput::new(f.f(4)?, f.f(5)?),
        });
    }
    let traj = Trajectory::new(points);
    Ok(if closed { traj.closed() } else { traj })
}

/// One line per replicate; failed runs keep their seeds and an error note.
pub fn write_batch<W: Write>(mut out: W, batch: &BatchResult) -> Result<(), LogError> {
    write_schema(&mut out)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "run",
        "gps_seed",
        "mag_seed",
        "meas_max",
        "meas_avg",
        "ekf_max",
        "ekf_avg",
        "track_max",
        "track_avg",
        "error",
    ])?;
    for run in &batch.runs {
        let mut record = vec![
            run.index.to_string(),
            run.gps_seed.to_string(),
            run.magnetometer_seed.to_string(),
        ];
        match &run.metrics {
            Ok(m) => {
                record.push(opt(m.measurement_vs_truth.map(|s| s.max_error)));
                record.push(opt(m.measurement_vs_truth.map(|s| s.avg_error)));
                record.push(num(m.estimate_vs_truth.max_error));
                record.push(num(m.estimate_vs_truth.avg_error));
                record.push(num(m.truth_vs_reference.max_error));
                record.push(num(m.truth_vs_reference.avg_error));
                record.push(String::new());
            }
            Err(e) => {
                record.extend(std::iter::repeat_n(String::new(), 6));
                record.push(e.clone());
            }
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
