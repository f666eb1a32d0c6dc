//! Atomic CSV and manifest output.

use std::io::Write;
use std::path::{Path, PathBuf};

use bbm_core::lab::{ExperimentReport, Table};
use tempfile::NamedTempFile;

use crate::CliError;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Writes `table` as CSV into a temp file inside `dir`.
fn table_temp(dir: &Path, table: &Table) -> Result<NamedTempFile, CliError> {
    let tmp = NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(tmp.as_file());
    w.write_record(&table.columns).map_err(|e| io_err(tmp.path(), e))?;
    for row in &table.rows {
        w.write_record(row.iter().map(ToString::to_string))
            .map_err(|e| io_err(tmp.path(), e))?;
    }
    w.flush().map_err(|e| io_err(tmp.path(), e))?;
    drop(w);
    Ok(tmp)
}

/// Writes one CSV per table and then a manifest. Every file goes through a
/// temp file in `dir` and is renamed into place only after all were written.
pub fn write_outputs(
    dir: &Path,
    report: &ExperimentReport,
    manifest: &[(String, String)],
) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut staged = Vec::new();
    for table in &report.tables {
        staged.push((table_temp(dir, table)?, dir.join(format!("{}.csv", table.name))));
    }
    let outputs: Vec<PathBuf> = staged.iter().map(|(_, p)| p.clone()).collect();
    let mut text = String::new();
    for (k, v) in manifest {
        text.push_str(&format!("{k} = {v}\n"));
    }
    for p in &outputs {
        text.push_str(&format!("output = {}\n", p.file_name().unwrap().to_string_lossy()));
    }
    for n in &report.notes {
        text.push_str(&format!("note = {n}\n"));
    }
    if let Some(v) = &report.verdict {
        text.push_str(&format!("verdict = {}\n", if v.pass { "PASS" } else { "FAIL" }));
        text.push_str(&format!("verdict_detail = {}\n", v.detail));
    }
    let mut mtmp = NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
    mtmp.write_all(text.as_bytes()).map_err(|e| io_err(mtmp.path(), e))?;
    staged.push((mtmp, dir.join("manifest.txt")));
    let mut written = Vec::new();
    for (tmp, path) in staged {
        tmp.persist(&path).map_err(|e| io_err(&path, e.error))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use bbm_core::lab::Cell;

    #[test]
    fn header_only_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rep = ExperimentReport::new("t");
        let empty = Table::new("empty", &["a", "b"]);
        let mut vals = Table::new("vals", &["x", "label"]);
        vals.push(vec![Cell::Float(0.1), Cell::Text("a,b".into())]);
        vals.push(vec![Cell::Float(1.0 / 3.0), Cell::Empty]);
        rep.tables = vec![empty, vals];
        let files = write_outputs(dir.path(), &rep, &[("subcommand".into(), "t".into())]).unwrap();
        assert_eq!(files.len(), 3);
        assert_eq!(std::fs::read_to_string(dir.path().join("empty.csv")).unwrap(), "a,b\n");
        let mut r = csv::Reader::from_path(dir.path().join("vals.csv")).unwrap();
        let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
        assert_eq!(rows[0][0].parse::<f64>().unwrap().to_bits(), 0.1f64.to_bits());
        assert_eq!(rows[1][0].parse::<f64>().unwrap().to_bits(), (1.0f64 / 3.0).to_bits());
        assert_eq!(&rows[0][1], "a,b");
        let leftovers = std::fs::read_dir(dir.path()).unwrap().count();
        assert_eq!(leftovers, 3);
    }

    #[test]
    fn unwritable_path_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let e = write_outputs(&blocker.join("sub"), &ExperimentReport::new("t"), &[]).unwrap_err();
        assert!(e.to_string().contains("file"));
    }
}
