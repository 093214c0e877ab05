//! Per-round metrics and their CSV encoding.
//!
//! Floats are written with Rust's shortest round-trip formatting and no
//! locale handling, so emitted files parse back to exactly the same
//! records and identical runs produce byte-identical output.

use std::io::{self, Write};

use crate::error::{SimError, SimResult};

pub const CSV_HEADER: &str = "round,sim_time_s,global_loss,consensus_distance,bytes_max,bytes_min";

/// Metrics captured after one communication round.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    /// Simulation round at which the communication happened (1-based).
    pub round: u64,
    /// Cumulative simulated wall-clock.
    pub sim_time_s: f64,
    /// Global objective evaluated at the worker-average model.
    pub global_loss: f64,
    pub consensus_distance: f64,
    /// Most bytes any worker sent this round.
    pub bytes_max: u64,
    /// Fewest bytes any worker sent this round.
    pub bytes_min: u64,
}

impl MetricsRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.round,
            self.sim_time_s,
            self.global_loss,
            self.consensus_distance,
            self.bytes_max,
            self.bytes_min
        )
    }

    pub fn from_csv_row(line: &str) -> SimResult<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(SimError::InvalidInput(format!(
                "expected 6 CSV fields, got {}: {line:?}",
                fields.len()
            )));
        }
        let bad = |what: &str| SimError::InvalidInput(format!("bad {what} in CSV row {line:?}"));
        Ok(MetricsRecord {
            round: fields[0].parse().map_err(|_| bad("round"))?,
            sim_time_s: fields[1].parse().map_err(|_| bad("sim_time_s"))?,
            global_loss: fields[2].parse().map_err(|_| bad("global_loss"))?,
            consensus_distance: fields[3].parse().map_err(|_| bad("consensus_distance"))?,
            bytes_max: fields[4].parse().map_err(|_| bad("bytes_max"))?,
            bytes_min: fields[5].parse().map_err(|_| bad("bytes_min"))?,
        })
    }
}

pub fn write_csv<W: Write>(out: &mut W, records: &[MetricsRecord]) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for rec in records {
        writeln!(out, "{}", rec.to_csv_row())?;
    }
    Ok(())
}

pub fn records_to_csv(records: &[MetricsRecord]) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, records).expect("in-memory write cannot fail");
    String::from_utf8(buf).expect("CSV is ASCII")
}

pub fn parse_csv(text: &str) -> SimResult<Vec<MetricsRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == CSV_HEADER => {}
        other => {
            return Err(SimError::InvalidInput(format!(
                "missing or unexpected CSV header: {other:?}"
            )))
        }
    }
    lines.map(MetricsRecord::from_csv_row).collect()
}
