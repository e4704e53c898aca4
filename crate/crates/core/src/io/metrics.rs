use std::io::{BufRead, Write};

use super::IoError;
use crate::sim::MetricsRecord;

/// Appends one JSON object per line, flushing after every record.
pub struct MetricsWriter<W: Write> {
    out: W,
    lines: u64,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out, lines: 0 }
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<(), IoError> {
        let line = serde_json::to_string(record).map_err(|e| IoError::Metrics(e.to_string()))?;
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| IoError::Metrics(e.to_string()))?;
        self.lines += 1;
        Ok(())
    }

    pub fn lines(&self) -> u64 {
        self.lines
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

pub fn write_metrics<W: Write>(out: W, records: &[MetricsRecord]) -> Result<(), IoError> {
    let mut w = MetricsWriter::new(out);
    records.iter().try_for_each(|r| w.write(r))
}

/// Parses a metrics stream; blank lines are skipped.
pub fn read_metrics<R: BufRead>(input: R) -> Result<Vec<MetricsRecord>, IoError> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| IoError::Metrics(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| IoError::Metrics(format!("line {}: {e}", i + 1)))?;
        records.push(record);
    }
    Ok(records)
}
