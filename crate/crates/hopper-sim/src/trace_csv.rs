//! CSV export and import of simulation traces.
//!
//! Numbers are written with 17 significant digits so that a read-back is
//! bit-exact, which is what makes "same config, same file" a meaningful
//! determinism check. Lines starting with `#` are comments carrying the
//! column units.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::model::Phase;
use crate::sim::{EventKind, SimTrace, TraceRow};

pub const COLUMNS: &[&str] = &[
    "t", "q1", "q2", "q3", "q4", "qd1", "qd2", "qd3", "qd4", "phase", "V_H", "V_K",
    "tau_H", "tau_K", "F_Yhc", "F_Zhc", "foot_x", "foot_y", "foot_z", "event",
];

const UNITS_COMMENT: &str = "# t [s]; q1..q4 [rad]; qd1..qd4 [rad/s]; V_* [V]; tau_* [N m]; \
                             F_* contact-frame ground reaction [N], empty in flight; foot_* [m]";

#[derive(Debug, Error)]
pub enum TraceCsvError {
    #[error("csv i/o: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("row {row}: bad field {field:?}: {reason}")]
    BadField {
        row: usize,
        field: &'static str,
        reason: String,
    },
}

/// Bit-exact float formatting; 17 significant digits round-trip any f64.
fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(s: &str, row: usize, field: &'static str) -> Result<f64, TraceCsvError> {
    s.parse().map_err(|e: std::num::ParseFloatError| {
        TraceCsvError::BadField {
            row,
            field,
            reason: e.to_string(),
        }
    })
}

pub fn write_trace<W: Write>(mut out: W, trace: &SimTrace) -> Result<(), TraceCsvError> {
    writeln!(out, "{UNITS_COMMENT}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS)?;
    for row in &trace.rows {
        let mut rec: Vec<String> = Vec::with_capacity(COLUMNS.len());
        rec.push(fmt(row.t));
        rec.extend(row.q.iter().map(|&v| fmt(v)));
        rec.extend(row.qd.iter().map(|&v| fmt(v)));
        rec.push(row.phase.to_string());
        rec.push(fmt(row.v[0]));
        rec.push(fmt(row.v[1]));
        rec.push(fmt(row.tau[0]));
        rec.push(fmt(row.tau[1]));
        match row.f_grf {
            Some(f) => {
                rec.push(fmt(f[0]));
                rec.push(fmt(f[1]));
            }
            None => {
                rec.push(String::new());
                rec.push(String::new());
            }
        }
        rec.extend(row.foot.iter().map(|&v| fmt(v)));
        rec.push(row.event.map(|e| e.to_string()).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_file(path: &Path, trace: &SimTrace) -> Result<(), TraceCsvError> {
    let file = BufWriter::new(File::create(path)?);
    write_trace(file, trace)
}

/// Rows read back from a trace CSV. Event pre-states are not part of the
/// file, so only the per-row records are reconstructed.
pub fn read_trace<R: Read>(input: R) -> Result<Vec<TraceRow>, TraceCsvError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input);
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let rec = record?;
        let get = |idx: usize| rec.get(idx).unwrap_or("");
        let mut q = [0.0; 4];
        let mut qd = [0.0; 4];
        for k in 0..4 {
            q[k] = parse_f64(get(1 + k), i, "q")?;
            qd[k] = parse_f64(get(5 + k), i, "qd")?;
        }
        let phase = Phase::from_str(get(9)).map_err(|e| TraceCsvError::BadField {
            row: i,
            field: "phase",
            reason: e,
        })?;
        let f_grf = if get(14).is_empty() {
            None
        } else {
            Some([
                parse_f64(get(14), i, "F_Yhc")?,
                parse_f64(get(15), i, "F_Zhc")?,
            ])
        };
        let event = match get(19) {
            "" => None,
            "touchdown" => Some(EventKind::Touchdown),
            "liftoff" => Some(EventKind::Liftoff),
            other => {
                return Err(TraceCsvError::BadField {
                    row: i,
                    field: "event",
                    reason: format!("unknown event {other:?}"),
                })
            }
        };
        out.push(TraceRow {
            t: parse_f64(get(0), i, "t")?,
            q,
            qd,
            phase,
            v: [
                parse_f64(get(10), i, "V_H")?,
                parse_f64(get(11), i, "V_K")?,
            ],
            tau: [
                parse_f64(get(12), i, "tau_H")?,
                parse_f64(get(13), i, "tau_K")?,
            ],
            f_grf,
            foot: [
                parse_f64(get(16), i, "foot_x")?,
                parse_f64(get(17), i, "foot_y")?,
                parse_f64(get(18), i, "foot_z")?,
            ],
            event,
        });
    }
    Ok(out)
}

pub fn read_trace_file(path: &Path) -> Result<Vec<TraceRow>, TraceCsvError> {
    read_trace(File::open(path)?)
}
