//! Element-wise mean of trajectory files that share columns and time grid.

use std::path::{Path, PathBuf};

use ctsa_core::TrajectoryRecord;

use crate::csvio::{read_record, write_record};
use crate::error::{CliError, Result};
use crate::runner::TOOL_VERSION;

/// Mean of every value column; `t` must agree exactly across records.
pub fn average_records(records: &[TrajectoryRecord]) -> std::result::Result<TrajectoryRecord, String> {
    let Some(first) = records.first() else {
        return Err("no files to average".into());
    };
    let mut sum: Vec<Vec<f64>> = first.rows().iter().map(|r| r[1..].to_vec()).collect();
    for (i, rec) in records.iter().enumerate().skip(1) {
        if rec.columns() != first.columns() {
            return Err(format!("file {} has different columns", i + 1));
        }
        if rec.len() != first.len() {
            return Err(format!("file {} has {} rows, expected {}", i + 1, rec.len(), first.len()));
        }
        for ((acc, row), base) in sum.iter_mut().zip(rec.rows()).zip(first.rows()) {
            if row[0] != base[0] {
                return Err(format!("file {} is on a different time grid", i + 1));
            }
            for (a, v) in acc.iter_mut().zip(&row[1..]) {
                *a += v;
            }
        }
    }
    let n = records.len() as f64;
    let rows = sum
        .into_iter()
        .zip(first.rows())
        .map(|(vals, base)| std::iter::once(base[0]).chain(vals.into_iter().map(|v| v / n)).collect())
        .collect();
    TrajectoryRecord::from_parts(first.columns().to_vec(), rows).map_err(|e| e.to_string())
}

pub fn average_files(inputs: &[PathBuf], out: &Path) -> Result<TrajectoryRecord> {
    let records = inputs.iter().map(|p| read_record(p)).collect::<Result<Vec<_>>>()?;
    let mut avg = average_records(&records).map_err(CliError::Config)?;
    avg.metadata.push(("averaged_files".into(), inputs.len().to_string()));
    for (p, rec) in inputs.iter().zip(&records) {
        let hash = rec
            .metadata
            .iter()
            .find(|(k, _)| k == "config_hash")
            .map(|(_, v)| v.as_str())
            .unwrap_or("unknown");
        avg.metadata.push(("source".into(), format!("{} config_hash={hash}", p.display())));
    }
    avg.metadata.push(("tool_version".into(), TOOL_VERSION.into()));
    write_record(out, &avg)?;
    Ok(avg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(vals: &[[f64; 2]]) -> TrajectoryRecord {
        let mut r = TrajectoryRecord::new(&["a"]);
        for v in vals {
            r.push(v[0], &[v[1]]).unwrap();
        }
        r
    }

    #[test]
    fn mean_of_values_keeps_time() {
        let avg = average_records(&[rec(&[[0.0, 1.0], [1.0, 3.0]]), rec(&[[0.0, 3.0], [1.0, -1.0]])]).unwrap();
        assert_eq!(avg.rows(), &[vec![0.0, 2.0], vec![1.0, 1.0]]);
    }

    #[test]
    fn mismatched_grids_rejected() {
        assert!(average_records(&[rec(&[[0.0, 1.0]]), rec(&[[0.5, 1.0]])]).is_err());
        assert!(average_records(&[rec(&[[0.0, 1.0]]), rec(&[[0.0, 1.0], [1.0, 1.0]])]).is_err());
        assert!(average_records(&[]).is_err());
    }
}
