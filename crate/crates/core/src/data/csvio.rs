use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::json::fmt17;
use crate::tensor::Matrix;

/// Writes `f0,…,f{d-1},label` with a header row; floats at 17 significant digits.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (i, &y) in ds.labels.iter().enumerate() {
        let mut rec: Vec<String> = ds.features.row(i).iter().map(|&v| fmt17(v)).collect();
        rec.push(y.to_string());
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a CSV written by [`write_csv`]. Labels must be contiguous from 0.
pub fn read_csv(path: &Path) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let width = r.headers().map_err(|e| csv_err(path, e))?.len();
    if width < 2 {
        return Err(Error::Format(format!("{}: need features and a label column", path.display())));
    }
    let dim = width - 1;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        for field in rec.iter().take(dim) {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Format(format!("{}: row {}: bad number {field:?}", path.display(), line + 1))
            })?;
            data.push(v);
        }
        let label = rec.get(dim).unwrap_or("");
        labels.push(label.trim().parse::<usize>().map_err(|_| {
            Error::Format(format!("{}: row {}: bad label {label:?}", path.display(), line + 1))
        })?);
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut seen = vec![false; classes];
    for &y in &labels {
        seen[y] = true;
    }
    if seen.iter().any(|s| !s) || classes < 2 {
        return Err(Error::Format(format!(
            "{}: labels must be contiguous from 0 with at least 2 classes",
            path.display()
        )));
    }
    let n = labels.len();
    Dataset::new(
        Matrix::new(n, dim, data)?,
        labels,
        classes,
        format!("csv({})", path.display()),
    )
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Format(format!("{}: {other:?}", path.display())),
        }
    } else {
        Error::Format(format!("{}: {e}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;

    #[test]
    fn csv_round_trip() {
        let ds = gen_synthetic(3, 2, 5, 0.4, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_csv(&ds, &path).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(back.features, ds.features);
        assert_eq!(back.labels, ds.labels);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("f0,f1,label\n"));
    }

    #[test]
    fn rejects_gapped_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "f0,label\n1.0,0\n2.0,2\n").unwrap();
        assert!(matches!(read_csv(&path), Err(Error::Format(_))));
        assert!(matches!(read_csv(&dir.path().join("missing.csv")), Err(Error::Io { .. })));
    }
}
