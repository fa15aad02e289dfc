//! Trace records produced by the engine and their CSV form.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::time::TickTime;

/// One executed job: the sampled output, the reference and the command sent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub t: TickTime,
    pub loop_id: u16,
    pub r: f64,
    pub y: f64,
    pub u: f64,
    /// The sensor had nothing newer than the previous job; `y` was reused.
    pub stale: bool,
}

/// Timing diagnostics for one job. `start`/`finish` are wall-clock offsets
/// from engine start in real time and equal `activation` in virtual time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JobRecord {
    pub loop_id: u16,
    pub activation: TickTime,
    pub start: TickTime,
    pub finish: TickTime,
    pub overrun: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub jobs: Vec<JobRecord>,
}

impl Trace {
    pub fn for_loop(&self, loop_id: u16) -> impl Iterator<Item = &TraceRecord> + '_ {
        self.records.iter().filter(move |r| r.loop_id == loop_id)
    }

    pub fn overruns(&self) -> usize {
        self.jobs.iter().filter(|j| j.overrun).count()
    }

    pub fn stale_count(&self) -> usize {
        self.records.iter().filter(|r| r.stale).count()
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {reason}")]
    Format { line: u64, reason: String },
}

pub const CSV_HEADER: [&str; 6] = ["t_s", "loop_id", "r", "y", "u", "stale"];

pub fn write_trace<W: Write>(records: &[TraceRecord], out: W) -> Result<(), TraceError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for rec in records {
        w.write_record([
            rec.t.to_string(),
            rec.loop_id.to_string(),
            rec.r.to_string(),
            rec.y.to_string(),
            rec.u.to_string(),
            (rec.stale as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_csv(records: &[TraceRecord], path: &Path) -> Result<(), TraceError> {
    let file = std::fs::File::create(path)?;
    write_trace(records, std::io::BufWriter::new(file))
}

fn parse_time(text: &str) -> Option<TickTime> {
    let (whole, frac) = text.split_once('.').unwrap_or((text, ""));
    if frac.len() > 6 || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let secs: u64 = whole.parse().ok()?;
    let frac_us: u64 = if frac.is_empty() {
        0
    } else {
        format!("{frac:0<6}").parse().ok()?
    };
    secs.checked_mul(1_000_000)?.checked_add(frac_us).map(TickTime)
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<TraceRecord>, TraceError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(TraceError::Format {
            line: 1,
            reason: format!("expected header {}", CSV_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let bad = |field: &str| TraceError::Format {
            line,
            reason: format!("bad {field}"),
        };
        let num = |i: usize, name: &str| row[i].parse::<f64>().map_err(|_| bad(name));
        out.push(TraceRecord {
            t: parse_time(&row[0]).ok_or_else(|| bad("t_s"))?,
            loop_id: row[1].parse().map_err(|_| bad("loop_id"))?,
            r: num(2, "r")?,
            y: num(3, "y")?,
            u: num(4, "u")?,
            stale: match &row[5] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("stale")),
            },
        });
    }
    Ok(out)
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRecord>, TraceError> {
    read_trace(std::fs::File::open(path)?)
}
