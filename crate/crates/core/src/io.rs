//! Labeled-matrix CSV reading and writing.
//!
//! Layout: the header row holds a corner label followed by column ids; every
//! following row holds a row id followed by numeric cells. The literal `NA`
//! marks a missing cell.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{MarrrError, Result};

pub const MISSING_TOKEN: &str = "NA";

#[derive(Debug, Clone)]
pub struct LabeledMatrix {
    pub corner: String,
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    /// Missing cells are `NaN`.
    pub values: DMatrix<f64>,
}

impl LabeledMatrix {
    pub fn missing_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for j in 0..self.values.ncols() {
            for i in 0..self.values.nrows() {
                if self.values[(i, j)].is_nan() {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| MarrrError::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn csv_error(path: &Path, e: csv::Error) -> MarrrError {
    MarrrError::Parse {
        location: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn read_labeled_matrix(path: &Path) -> Result<LabeledMatrix> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.is_empty() {
        return Err(MarrrError::Parse {
            location: path.display().to_string(),
            message: "empty header row".into(),
        });
    }
    let corner = header[0].to_string();
    let col_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut row_ids = Vec::new();
    let mut cells = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if rec.len() != col_ids.len() + 1 {
            return Err(MarrrError::Dimension(format!(
                "{}: row {} has {} cells, header declares {}",
                path.display(),
                line + 2,
                rec.len().saturating_sub(1),
                col_ids.len()
            )));
        }
        row_ids.push(rec[0].to_string());
        for (col, cell) in rec.iter().skip(1).enumerate() {
            let v = if cell == MISSING_TOKEN {
                f64::NAN
            } else {
                cell.parse::<f64>().map_err(|_| MarrrError::Parse {
                    location: format!("{}:{}:{}", path.display(), line + 2, col + 2),
                    message: format!("non-numeric cell {cell:?}"),
                })?
            };
            cells.push(v);
        }
    }
    let values = DMatrix::from_row_slice(row_ids.len(), col_ids.len(), &cells);
    Ok(LabeledMatrix {
        corner,
        row_ids,
        col_ids,
        values,
    })
}

fn format_cell(x: f64) -> String {
    if x.is_nan() {
        MISSING_TOKEN.to_string()
    } else {
        // Display for f64 is the shortest round-trip representation.
        format!("{x}")
    }
}

pub fn write_labeled_matrix(
    path: &Path,
    corner: &str,
    row_ids: &[String],
    col_ids: &[String],
    values: &DMatrix<f64>,
) -> Result<()> {
    assert_eq!(row_ids.len(), values.nrows());
    assert_eq!(col_ids.len(), values.ncols());
    let mut wtr = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec![corner.to_string()];
    header.extend(col_ids.iter().cloned());
    wtr.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (i, id) in row_ids.iter().enumerate() {
        let mut rec = Vec::with_capacity(values.ncols() + 1);
        rec.push(id.clone());
        rec.extend(values.row(i).iter().map(|&x| format_cell(x)));
        wtr.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    wtr.flush().map_err(|e| MarrrError::io(path, e))
}

/// Writes a matrix with generated ids (`{row_prefix}{i}`, `{col_prefix}{j}`).
pub fn write_matrix(path: &Path, values: &DMatrix<f64>, row_prefix: &str, col_prefix: &str) -> Result<()> {
    let rows: Vec<String> = (0..values.nrows()).map(|i| format!("{row_prefix}{i}")).collect();
    let cols: Vec<String> = (0..values.ncols()).map(|j| format!("{col_prefix}{j}")).collect();
    write_labeled_matrix(path, "id", &rows, &cols, values)
}

/// Reads a headed CSV into records of strings.
pub fn read_records(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut rdr = csv_reader(path)?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

pub fn write_records(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    wtr.write_record(header).map_err(|e| csv_error(path, e))?;
    for r in rows {
        wtr.write_record(r).map_err(|e| csv_error(path, e))?;
    }
    wtr.flush().map_err(|e| MarrrError::io(path, e))
}

/// Writes serializable records with a header taken from the field names.
pub fn write_serialized<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        wtr.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    wtr.flush().map_err(|e| MarrrError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| MarrrError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| MarrrError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| MarrrError::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| MarrrError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn round_trip_preserves_bits_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = dmatrix![0.1 + 0.2, -1e-300, f64::NAN; 1.0 / 3.0, 12345.678901234567, -0.0];
        let rows = vec!["a".to_string(), "b".to_string()];
        let cols = vec!["s1".to_string(), "s2".to_string(), "s3".to_string()];
        write_labeled_matrix(&path, "feature", &rows, &cols, &m).unwrap();
        let back = read_labeled_matrix(&path).unwrap();
        assert_eq!(back.row_ids, rows);
        assert_eq!(back.col_ids, cols);
        assert_eq!(back.corner, "feature");
        for (a, b) in m.iter().zip(back.values.iter()) {
            if a.is_nan() {
                assert!(b.is_nan());
            } else {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        assert_eq!(back.missing_cells(), vec![(0, 2)]);
    }

    #[test]
    fn non_numeric_cell_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "id,s1,s2\nf1,1.0,abc\n").unwrap();
        let err = read_labeled_matrix(&path).unwrap_err();
        assert!(matches!(err, MarrrError::Parse { .. }), "{err}");
    }

    #[test]
    fn na_is_case_sensitive() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("na.csv");
        std::fs::write(&path, "id,s1\nf1,na\n").unwrap();
        assert!(read_labeled_matrix(&path).is_err());
    }
}
