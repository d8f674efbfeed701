use std::path::Path;

use super::{DataError, TimeSeriesDataset, DEFAULT_SAMPLE_RATE_HZ};
use crate::tensor::Tensor;

/// Metadata the CSV file itself cannot carry.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvOptions {
    /// Overrides `max label + 1`.
    pub num_classes: Option<usize>,
    pub sample_rate_hz: f64,
    pub participants: usize,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            num_classes: None,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            participants: 1,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<TimeSeriesDataset, DataError> {
    load_csv_with(path, &CsvOptions::default())
}

/// Reads `f0,...,f{N-1},label` rows. Missing values are rejected.
pub fn load_csv_with(
    path: impl AsRef<Path>,
    opts: &CsvOptions,
) -> Result<TimeSeriesDataset, DataError> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| DataError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Err(DataError::NoData),
        Some(r) => r.map_err(|e| csv_err(e, 1))?,
    };
    let num_features = check_header(&header)?;

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| csv_err(e, 0))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != num_features + 1 {
            return Err(DataError::Parse {
                line,
                message: format!("expected {} cells, found {}", num_features + 1, rec.len()),
            });
        }
        for (col, cell) in rec.iter().take(num_features).enumerate() {
            let v: f32 = cell.trim().parse().map_err(|_| DataError::Parse {
                line,
                message: format!("non-numeric value {cell:?} in column f{col}"),
            })?;
            if !v.is_finite() {
                return Err(DataError::Parse {
                    line,
                    message: format!("non-finite value {cell:?} in column f{col}"),
                });
            }
            data.push(v);
        }
        labels.push(parse_label(rec.get(num_features).unwrap_or(""), line)?);
    }
    if labels.is_empty() {
        return Err(DataError::NoData);
    }
    let observed = labels.iter().max().map_or(0, |m| m + 1);
    let num_classes = match opts.num_classes {
        Some(k) if k < observed => {
            return Err(DataError::Invalid(format!(
                "label {} exceeds the declared {k} classes",
                observed - 1
            )))
        }
        Some(k) => k,
        None => observed,
    };
    let features = Tensor::new(vec![labels.len(), num_features], data)
        .map_err(|e| DataError::Invalid(e.to_string()))?;
    let mut ds = TimeSeriesDataset::new(features, labels, num_classes)?;
    ds.sample_rate_hz = opts.sample_rate_hz;
    ds.participants = opts.participants;
    Ok(ds)
}

fn csv_err(e: csv::Error, fallback_line: u64) -> DataError {
    DataError::Parse {
        line: e.position().map_or(fallback_line, |p| p.line()),
        message: e.to_string(),
    }
}

fn check_header(header: &csv::StringRecord) -> Result<usize, DataError> {
    let n = header.len();
    let bad = |message: String| DataError::Parse { line: 1, message };
    if n < 2 {
        return Err(bad("header needs at least one feature column and `label`".into()));
    }
    for (i, name) in header.iter().take(n - 1).enumerate() {
        if name.trim() != format!("f{i}") {
            return Err(bad(format!("unknown header column {name:?}, expected \"f{i}\"")));
        }
    }
    let last = header.get(n - 1).unwrap_or("").trim();
    if last != "label" {
        return Err(bad(format!("unknown header column {last:?}, expected \"label\"")));
    }
    Ok(n - 1)
}

fn parse_label(cell: &str, line: u64) -> Result<usize, DataError> {
    let cell = cell.trim();
    if let Ok(v) = cell.parse::<usize>() {
        return Ok(v);
    }
    let message = match cell.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 && v < usize::MAX as f64 => return Ok(v as usize),
        Ok(v) if v < 0.0 => format!("negative label {cell:?}"),
        Ok(_) => format!("non-integer label at line {line}"),
        Err(_) => format!("non-numeric label {cell:?}"),
    };
    Err(DataError::Parse { line, message })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn two_rows() {
        let f = file("f0,f1,f2,label\n0.1,0.2,0.3,0\n1,2,3,2\n");
        let ds = load_csv(f.path()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.num_features(), 3);
        assert_eq!(ds.num_classes, 3);
        assert_eq!(ds.features.row(1), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn empty_file() {
        assert_eq!(load_csv(file("").path()).unwrap_err().to_string(), "no data rows");
        assert_eq!(load_csv(file("f0,label\n").path()).unwrap_err(), DataError::NoData);
    }

    #[test]
    fn fractional_label() {
        let f = file("f0,label\n1.0,0\n2.0,2.5\n");
        let err = load_csv(f.path()).unwrap_err();
        assert!(err.to_string().contains("non-integer label at line 3"), "{err}");
    }

    #[test]
    fn bad_cells_report_line() {
        let err = load_csv(file("f0,f1,label\n1,2,0\n1,x,0\n").path()).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 3, .. }), "{err}");
        let err = load_csv(file("f0,f1,label\n1,2,0\n1,0\n").path()).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 3, .. }), "{err}");
        let err = load_csv(file("f0,f1,label\n1,,0\n").path()).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn unknown_header() {
        let err = load_csv(file("a,b,label\n1,2,0\n").path()).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 1, .. }));
        let err = load_csv(file("f0,f1,class\n1,2,0\n").path()).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 1, .. }));
    }

    #[test]
    fn class_override() {
        let f = file("f0,label\n1,0\n2,1\n");
        let opts = CsvOptions {
            num_classes: Some(5),
            ..Default::default()
        };
        assert_eq!(load_csv_with(f.path(), &opts).unwrap().num_classes, 5);
        let opts = CsvOptions {
            num_classes: Some(1),
            ..Default::default()
        };
        assert!(load_csv_with(f.path(), &opts).is_err());
    }
}
