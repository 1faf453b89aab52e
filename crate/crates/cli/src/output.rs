//! Files written by the commands.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use l1gp_core::scenario::{metrics, Event, SimulationTrace, TraceRow, WindowSummary};

use crate::CliError;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Header plus one row per sample. `f64` is written in its shortest exact
/// decimal form, so parsing the file back yields identical values.
pub fn write_trace(path: &Path, trace: &SimulationTrace) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(TraceRow::COLUMNS).map_err(|e| io_err(path, e))?;
    for row in &trace.rows {
        w.write_record(row.to_values().iter().map(|v| v.to_string()))
            .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let header = r.headers().map_err(|e| io_err(path, e))?.clone();
    if header.iter().ne(TraceRow::COLUMNS.iter().copied()) {
        return Err(CliError::Io(format!("{}: unexpected header", path.display())));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let values = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| io_err(path, e))?;
        rows.push(TraceRow::from_values(&values).map_err(|e| io_err(path, e))?);
    }
    Ok(rows)
}

pub fn write_events(path: &Path, events: &[Event]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(["t", "event", "detail"]).map_err(|e| io_err(path, e))?;
    for e in events {
        let mut value = serde_json::to_value(e).expect("events serialize");
        let obj = value.as_object_mut().expect("events are objects");
        obj.remove("t");
        let name = obj
            .remove("event")
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        w.write_record([e.t.to_string(), name, serde_json::to_string(obj).unwrap()])
            .map_err(|err| io_err(path, err))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_err(path, e))?;
    writeln!(w).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub stable: bool,
    pub rows: usize,
    pub end_time: f64,
    /// Per-axis mean `|x_i − r_i|` over the last second.
    pub final_tracking_error: [f64; 3],
    pub final_tracking_error_inf: f64,
    pub max_state_inf: f64,
    pub publishes: usize,
    pub windows: Vec<WindowSummary>,
}

/// Aggregates for the whole run and for consecutive 10 s windows.
pub fn summarize(trace: &SimulationTrace) -> Summary {
    let m = metrics(trace);
    let end = trace.rows.last().map_or(0.0, |r| r.t);
    let last = m.window(end - 1.0, end);
    let mut windows = vec![m.window(0.0, end)];
    let mut t0 = 0.0;
    while t0 + 1e-9 < end {
        let t1 = (t0 + 10.0).min(end);
        windows.push(m.window(t0, t1));
        t0 = t1;
    }
    Summary {
        stable: !trace.unstable,
        rows: trace.rows.len(),
        end_time: end,
        final_tracking_error: last.mean_tracking,
        final_tracking_error_inf: last.mean_tracking.iter().fold(0.0, |a, v| a.max(*v)),
        max_state_inf: trace
            .rows
            .iter()
            .flat_map(|r| r.x)
            .fold(0.0, |a: f64, v| a.max(v.abs())),
        publishes: trace.publishes().count(),
        windows,
    }
}
