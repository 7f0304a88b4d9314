//! CSV ↔ activation-file conversion. CSV files carry a header row; a column
//! named `label` holds 0/1 labels and becomes the label block. Values are
//! written with shortest round-trip formatting, so f64 conversion is lossless.

use std::path::Path;

use nalgebra::DMatrix;

use crate::activation::{read_activations, write_activation_file, ActivationFile, Dtype, MAGIC};
use crate::error::{HarnessError, Result};

pub const LABEL_COLUMN: &str = "label";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    CsvToActivation,
    ActivationToCsv,
}

/// CSV when the extension is `.csv`, otherwise an activation file.
fn is_csv(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn read_csv(path: &Path) -> Result<ActivationFile> {
    let shown = path.display().to_string();
    let bad = |reason: String| HarnessError::Format {
        path: shown.clone(),
        reason,
    };
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    let label_col = header.iter().position(|h| h.trim() == LABEL_COLUMN);
    let cols = header.len() - usize::from(label_col.is_some());
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0usize;
    for rec in rdr.records() {
        let rec = rec?;
        for (j, field) in rec.iter().enumerate() {
            let field = field.trim();
            if Some(j) == label_col {
                match field {
                    "0" => labels.push(0u8),
                    "1" => labels.push(1u8),
                    other => return Err(bad(format!("row {}: label {other:?} is not 0 or 1", rows + 1))),
                }
            } else {
                let v: f64 = field
                    .parse()
                    .map_err(|_| bad(format!("row {}: {field:?} is not a number", rows + 1)))?;
                values.push(v);
            }
        }
        rows += 1;
    }
    let data = DMatrix::from_row_slice(rows, cols, &values);
    Ok(ActivationFile::new(data, label_col.map(|_| labels)))
}

pub fn write_csv(path: &Path, file: &ActivationFile) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let cols = file.data.ncols();
    let mut header: Vec<String> = (0..cols).map(|j| format!("x{j}")).collect();
    if file.labels.is_some() {
        header.push(LABEL_COLUMN.into());
    }
    w.write_record(&header)?;
    for i in 0..file.data.nrows() {
        let mut rec: Vec<String> = (0..cols).map(|j| file.data[(i, j)].to_string()).collect();
        if let Some(l) = &file.labels {
            rec.push(l[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Converts `input` to `output`, choosing the direction from the extensions.
/// Returns the direction and the matrix shape.
pub fn convert(input: &Path, output: &Path, dtype: Dtype) -> Result<(Direction, usize, usize)> {
    match (is_csv(input), is_csv(output)) {
        (true, false) => {
            let mut f = read_csv(input)?;
            f.dtype = dtype;
            write_activation_file(output, &f)?;
            Ok((Direction::CsvToActivation, f.data.nrows(), f.data.ncols()))
        }
        (false, true) => {
            let f = read_activations(input)?;
            write_csv(output, &f)?;
            Ok((Direction::ActivationToCsv, f.data.nrows(), f.data.ncols()))
        }
        _ => Err(HarnessError::Config(format!(
            "exactly one of {} and {} must be a .csv file (the other is read or written as {})",
            input.display(),
            output.display(),
            String::from_utf8_lossy(&MAGIC)
        ))),
    }
}
