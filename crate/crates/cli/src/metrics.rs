//! Metrics and timing serialization: one self-describing JSON object per
//! line, UTF-8, streaming-safe.
//!
//! `metrics.jsonl` carries only seed-determined fields, so identical runs
//! produce byte-identical files; measured wall-clock seconds go to the
//! `timing.jsonl` sidecar.

use anyhow::{Context, Result};
use sdhn_core::marl::MetricsRecord;
use std::io::Write;
use std::path::Path;

pub fn write_metrics_line(w: &mut impl Write, record: &MetricsRecord) -> std::io::Result<()> {
    let line = serde_json::to_string(record).expect("metrics record serializes");
    writeln!(w, "{line}")
}

pub fn write_timing_line(w: &mut impl Write, update: u64, wall_clock_s: f64) -> std::io::Result<()> {
    writeln!(w, "{{\"update\":{update},\"wall_clock_s\":{wall_clock_s}}}")
}

/// Parse a metrics file line by line.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read metrics file {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            serde_json::from_str(line).with_context(|| format!("bad metrics line: {line}"))
        })
        .collect()
}
