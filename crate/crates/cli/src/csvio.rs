//! CSV dialect shared by every output: `#`-prefixed `key: value` metadata
//! lines, one header line, comma-separated fields, LF line endings. Floats
//! are written with 17 significant digits so they read back bit-exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ctsa_core::TrajectoryRecord;

use crate::error::{CliError, Result};

pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| CliError::io(path, e))?))
}

fn write_metadata<W: Write>(out: &mut W, metadata: &[(String, String)], path: &Path) -> Result<()> {
    for (k, v) in metadata {
        writeln!(out, "# {k}: {v}").map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}

/// Write a table of preformatted string fields.
pub fn write_table(path: &Path, metadata: &[(String, String)], header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut out = create(path)?;
    write_metadata(&mut out, metadata, path)?;
    {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(&mut out);
        w.write_record(header).map_err(|e| CliError::io(path, e))?;
        for row in rows {
            w.write_record(row).map_err(|e| CliError::io(path, e))?;
        }
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    out.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_record(path: &Path, record: &TrajectoryRecord) -> Result<()> {
    let rows: Vec<Vec<String>> = record
        .rows()
        .iter()
        .map(|r| r.iter().map(|v| format_f64(*v)).collect())
        .collect();
    write_table(path, &record.metadata, record.columns(), &rows)
}

/// Metadata lines and the raw CSV body that follows them.
pub fn split_metadata(path: &Path) -> Result<(Vec<(String, String)>, String)> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut metadata = Vec::new();
    let mut body = String::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim_start();
            let (k, v) = rest.split_once(':').unwrap_or((rest, ""));
            metadata.push((k.trim().to_string(), v.trim().to_string()));
        } else {
            body.push_str(&line);
            body.push('\n');
        }
    }
    Ok((metadata, body))
}

pub fn read_table(path: &Path) -> Result<(Vec<(String, String)>, Vec<String>, Vec<Vec<String>>)> {
    let (metadata, body) = split_metadata(path)?;
    let mut r = csv::ReaderBuilder::new().from_reader(body.as_bytes());
    let header = r
        .headers()
        .map_err(|e| CliError::io(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::io(path, e))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok((metadata, header, rows))
}

pub fn read_record(path: &Path) -> Result<TrajectoryRecord> {
    let (metadata, header, rows) = read_table(path)?;
    let mut parsed = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let vals: std::result::Result<Vec<f64>, _> = row.iter().map(|s| s.parse::<f64>()).collect();
        parsed.push(vals.map_err(|e| CliError::io(path, format!("row {}: {e}", i + 1)))?);
    }
    let mut rec = TrajectoryRecord::from_parts(header, parsed).map_err(|e| CliError::io(path, e))?;
    rec.metadata = metadata;
    Ok(rec)
}
