//! Artifact files. Everything is written from the main thread after the
//! trials finish.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use collapse_walk::collapse::WalkTrace;
use collapse_walk::experiment::RunOutput;

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn write_csv_to<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut csv = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    for row in rows {
        csv.serialize(row)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_csv_to(create(path)?, rows)
}

#[derive(Serialize)]
struct TraceLine<'a> {
    trial: u64,
    #[serde(flatten)]
    trace: &'a WalkTrace,
}

/// `report.json`, `summary.csv` and, with `traces`, `traces.jsonl`.
pub fn write_run(dir: &Path, output: &RunOutput, traces: bool) -> Result<()> {
    write_json(&dir.join("report.json"), &output.report)?;
    write_csv(&dir.join("summary.csv"), &output.summaries)?;
    if traces {
        let mut w = create(&dir.join("traces.jsonl"))?;
        for (trial, trace) in output.traces.iter().enumerate() {
            serde_json::to_writer(&mut w, &TraceLine { trial: trial as u64, trace })?;
            writeln!(w)?;
        }
        w.flush()?;
    }
    Ok(())
}
